use mixplap::eigen1::{dense_oracle_p2, solve_lambda1, SolverParams};
use mixplap::eigen2::{default_probe, initial_path, minimax_lambda2, solve_lambda2, StringParams};
use mixplap::energy::Discretization;
use mixplap::{DomainSpec, EnergyContext, Field, KernelSpec};

fn interval(p: f64, n: usize) -> EnergyContext {
    Discretization::new(KernelSpec::tent(0.2), p, n).build(&DomainSpec::interval(0.0, 1.0)).unwrap()
}

#[test]
fn lambda1_grows_with_kernel_weight() {
    let mut prev = 0.0;
    for w in [0.0, 0.25, 0.5, 1.0, 2.0] {
        let ctx = Discretization::new(KernelSpec::tent(0.2).with_weight(w), 3.0, 80)
            .build(&DomainSpec::interval(0.0, 1.0))
            .unwrap();
        let l = solve_lambda1(&ctx, &SolverParams::default()).unwrap().lambda;
        assert!(l > prev, "weight {w}: {l} <= {prev}");
        prev = l;
    }
}

#[test]
fn lambda1_matches_oracle_and_is_sign_constant() {
    for spec in [DomainSpec::interval(0.0, 1.0), DomainSpec::ball(&[0.0, 0.0], 1.0), DomainSpec::rect(&[0.0, 0.0], &[1.0, 2.0])] {
        let ctx = Discretization::new(KernelSpec::tent(0.3), 2.0, 30).build(&spec).unwrap();
        let r = solve_lambda1(&ctx, &SolverParams::default()).unwrap();
        let o = dense_oracle_p2(&ctx).unwrap();
        assert!((r.lambda - o.lambda1).abs() < 1e-6 * o.lambda1);
        assert!(r.eigenfunction.min() * r.eigenfunction.max() >= -1e-8);
    }
}

#[test]
fn string_invariants_on_interval() {
    let ctx = interval(2.0, 100);
    let params = SolverParams::default();
    let e1 = solve_lambda1(&ctx, &params).unwrap();
    let oracle = dense_oracle_p2(&ctx).unwrap().lambda2;
    let probes = [
        default_probe(&e1.eigenfunction),
        Field::from_fn(ctx.domain(), |x| (2.0 * std::f64::consts::PI * x[0]).sin() + 0.3 * x[0]),
    ];
    for k in [17, 33, 65] {
        for probe in &probes {
            let path = initial_path(&e1.eigenfunction, probe, k, 2.0).unwrap();
            let ends = (path.nodes()[0].clone(), path.nodes()[k - 1].clone());
            let m = minimax_lambda2(&ctx, &params, &StringParams::default(), path).unwrap();
            assert!((m.eigen.lambda - oracle).abs() < 1e-4 * oracle, "K={k}: {} vs {oracle}", m.eigen.lambda);
            assert_eq!(m.path.nodes()[0], ends.0);
            assert_eq!(m.path.nodes()[k - 1], ends.1);
            for w in m.history.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12), "path max rose: {w:?}");
            }
            let u = &m.eigen.eigenfunction;
            assert!(u.max() > 0.0 && u.min() < 0.0);
        }
    }
}

#[test]
fn separated_identical_components_give_lambda1() {
    let spec = DomainSpec::IntervalUnion { intervals: vec![[0.0, 1.0], [1.5, 2.5]] };
    let ctx = Discretization::new(KernelSpec::tent(0.2), 2.0, 100).build(&spec).unwrap();
    let (e1, m) = solve_lambda2(&ctx, &SolverParams::default(), &StringParams::default()).unwrap();
    assert!((m.eigen.lambda - e1.lambda).abs() < 1e-9 * e1.lambda, "{} vs {}", m.eigen.lambda, e1.lambda);
    let single = Discretization::new(KernelSpec::tent(0.2), 2.0, 40).build(&DomainSpec::interval(0.0, 1.0)).unwrap();
    let l1 = solve_lambda1(&single, &SolverParams::default()).unwrap().lambda;
    assert!((m.eigen.lambda - l1).abs() < 1e-8 * l1);
}

#[test]
fn p3_second_eigenfunction_changes_sign() {
    let ctx = interval(3.0, 100);
    let (e1, m) = solve_lambda2(&ctx, &SolverParams::default(), &StringParams::default()).unwrap();
    assert!(m.eigen.converged);
    assert!(m.eigen.lambda > e1.lambda);
    let u = &m.eigen.eigenfunction;
    assert!(u.max() > 0.0 && u.min() < 0.0);
}
