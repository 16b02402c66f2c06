use std::sync::Arc;

use mixplap::energy::Discretization;
use mixplap::grid::{measure, normalize};
use mixplap::lemmas::{calibrate_cp, cp_part_i, cp_part_ii, g_inequality, picone_pair, sigma_convexity, CP_SAMPLES};
use mixplap::rearrange::{chain_variation, schwarz_symmetrize, symmetric_decreasing};
use mixplap::{DomainSpec, EnergyContext, Field, Kernel, KernelSpec};
use proptest::prelude::*;

fn interval(n: usize, p: f64) -> EnergyContext {
    Discretization::new(KernelSpec::tent(0.25), p, n).build(&DomainSpec::interval(0.0, 1.0)).unwrap()
}

fn disk(p: f64) -> EnergyContext {
    Discretization::new(KernelSpec::tent(0.3), p, 12).build(&DomainSpec::ball(&[0.0, 0.0], 1.0)).unwrap()
}

fn field_of(ctx: &EnergyContext, vals: &[f64]) -> Field {
    let v: Vec<f64> = (0..ctx.len()).map(|i| vals[i % vals.len()] * (1.0 + 0.01 * i as f64)).collect();
    ctx.field(&v)
}

fn exponent() -> impl Strategy<Value = f64> {
    prop_oneof![Just(2.0), Just(2.5), Just(3.0), Just(4.0), 1.2f64..5.0]
}

fn values() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, 5..40)
}

fn permutations(v: &[f64]) -> Vec<Vec<f64>> {
    if v.len() <= 1 {
        return vec![v.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..v.len() {
        let mut rest = v.to_vec();
        let x = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, x);
            out.push(p);
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn energy_is_p_homogeneous(p in exponent(), vals in values(), t in -3.0f64..3.0) {
        for ctx in [interval(30, p), disk(p)] {
            let u = field_of(&ctx, &vals);
            let e = ctx.total_energy(&u).unwrap();
            let et = ctx.total_energy(&u.scaled(t)).unwrap();
            prop_assert!((et - t.abs().powf(p) * e).abs() <= 1e-12 * (1.0 + e * t.abs().powf(p)));
        }
    }

    #[test]
    fn euler_identity_and_gradient_pairing(p in exponent(), vals in values(), phis in values()) {
        for ctx in [interval(30, p), disk(p)] {
            let u = field_of(&ctx, &vals);
            let phi = field_of(&ctx, &phis);
            let e = ctx.total_energy(&u).unwrap();
            prop_assert!((ctx.pairing(&u, &u).unwrap() - e).abs() <= 1e-12 * e);
            let g = ctx.compact(&ctx.energy_gradient(&u).unwrap()).unwrap();
            let lhs = ctx.dot_c(&g, &ctx.compact(&phi).unwrap());
            let rhs = p * ctx.pairing(&u, &phi).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()), "{} vs {}", lhs, rhs);
        }
    }

    #[test]
    fn separated_supports_decouple(p in exponent(), a in values(), b in values(), gap in 0usize..6) {
        // two supports, the second starting 0.25 + gap cells beyond the first
        let ctx = interval(80, p);
        let h = ctx.grid().h();
        let reach = (0.25 / h).ceil() as usize + 1;
        let end_a = 20;
        let start_b = end_a + reach + gap;
        let m = ctx.len();
        let u: Vec<f64> = (0..m).map(|i| if i < end_a { a[i % a.len()] } else { 0.0 }).collect();
        let v: Vec<f64> = (0..m).map(|i| if i >= start_b { b[i % b.len()] } else { 0.0 }).collect();
        let w: Vec<f64> = u.iter().zip(&v).map(|(x, y)| x + y).collect();
        let (eu, ev, ew) = (ctx.energy_c(&u), ctx.energy_c(&v), ctx.energy_c(&w));
        prop_assert!((ew - (eu + ev)).abs() <= 1e-12 * ew.max(1.0));
    }

    #[test]
    fn fields_stay_zero_off_mask(vals in values(), t in -2.0f64..2.0) {
        let ctx = disk(2.0);
        let u = field_of(&ctx, &vals);
        let ops = [u.scaled(t), u.map(|x| x * x + 1.0), u.axpy(t, &u.map(f64::abs)).unwrap()];
        for f in ops {
            for (v, m) in f.values().iter().zip(f.mask()) {
                prop_assert!(*m || *v == 0.0);
            }
        }
    }

    #[test]
    fn normalize_is_idempotent(vals in values(), p in exponent()) {
        let ctx = disk(p);
        let u = field_of(&ctx, &vals);
        prop_assume!(u.lp_norm(p) > 1e-6);
        let once = normalize(&u, p).unwrap();
        let twice = normalize(&once, p).unwrap();
        for (a, b) in once.values().iter().zip(twice.values()) {
            prop_assert!((a - b).abs() <= 1e-15 * (1.0 + a.abs()) + 1e-15);
        }
    }

    #[test]
    fn measure_is_additive(bits in prop::collection::vec(0u8..3, 1..400)) {
        let ctx = disk(2.0);
        let grid = ctx.grid();
        let mut a = vec![false; grid.len()];
        let mut b = vec![false; grid.len()];
        for (i, &c) in ctx.cells().iter().enumerate() {
            match bits[i % bits.len()] {
                1 => a[c] = true,
                2 => b[c] = true,
                _ => {}
            }
        }
        let both: Vec<bool> = a.iter().zip(&b).map(|(x, y)| *x || *y).collect();
        prop_assert!((measure(grid, &both) - measure(grid, &a) - measure(grid, &b)).abs() < 1e-12);
    }

    #[test]
    fn kernels_are_radial_and_decreasing(r in 0.05f64..1.0, x in 0.0f64..1.5, y in 0.0f64..1.5, th in 0.0f64..6.3) {
        for k in [Kernel::tent(r, 2), Kernel::truncated_gaussian(r, 2), Kernel::bump(r, 2)] {
            let rho = (x * x + y * y).sqrt();
            let rot = [rho * th.cos(), rho * th.sin()];
            prop_assert!((k.eval(&[x, y]) - k.eval(&rot)).abs() <= 1e-12 * (1.0 + k.eval(&[x, y])));
            let (lo, hi) = (x.min(y), x.max(y));
            prop_assert!(k.eval_radial(hi) <= k.eval_radial(lo));
            if rho >= r {
                prop_assert_eq!(k.eval(&[x, y]), 0.0);
            }
        }
    }

    #[test]
    fn rearrangement_preserves_distribution_and_is_idempotent(vals in prop::collection::vec(0.0f64..3.0, 3..30), p in exponent()) {
        for ctx in [interval(25, p), disk(p)] {
            let u = field_of(&ctx, &vals);
            let r = schwarz_symmetrize(&ctx, &u).unwrap();
            for q in [1.0, 2.0, p] {
                let (a, b) = (u.lp_norm(q), r.u_star.lp_norm(q));
                prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
            }
            let star_ctx = EnergyContext::new(Arc::clone(r.u_star.domain()), ctx.kernel().clone(), p).unwrap();
            let again = schwarz_symmetrize(&star_ctx, &r.u_star).unwrap();
            prop_assert_eq!(again.u_star.values(), r.u_star.values());
        }
    }

    #[test]
    fn symmetric_decreasing_minimizes_chain_variation(vals in prop::collection::vec(0.0f64..5.0, 1..=8), p in prop_oneof![Just(1.0), Just(1.5), Just(2.0), Just(3.0), Just(4.0)]) {
        let star = chain_variation(&symmetric_decreasing(&vals), p);
        for perm in permutations(&vals) {
            prop_assert!(star <= chain_variation(&perm, p) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn rearranged_interval_field_beats_every_permutation(vals in prop::collection::vec(0.0f64..5.0, 4..=7), p in prop_oneof![Just(2.0), Just(3.0)]) {
        let n = vals.len();
        let ctx = Discretization::new(KernelSpec::tent(0.5), p, n).build(&DomainSpec::interval(0.0, 1.0)).unwrap();
        let r = schwarz_symmetrize(&ctx, &ctx.field(&vals)).unwrap();
        let star = ctx.total_energy(&r.u_star).unwrap();
        for perm in permutations(&vals) {
            prop_assert!(star <= ctx.energy_c(&perm) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn g_inequality_holds(u in -10.0f64..10.0, v in -10.0f64..10.0, t in -5.0f64..5.0, p in exponent()) {
        let v = if u * v > 0.0 { -v } else { v };
        prop_assert!(g_inequality(u, v, p, t).unwrap().holds);
    }

    #[test]
    fn cp_inequalities_hold(a in -10.0f64..10.0, b in -10.0f64..10.0, p in prop_oneof![Just(2.0), Just(2.5), Just(3.0), Just(4.0)]) {
        prop_assert!(cp_part_i(a, b, p, calibrate_cp(p, CP_SAMPLES)).holds);
        let b = if a * b > 0.0 { -b } else { b };
        if let Some(c) = cp_part_ii(a, b, p).unwrap() {
            prop_assert!(c.holds, "{:?}", c);
        }
    }

    #[test]
    fn cp_part_ii_holds_below_two(a in -10.0f64..10.0, b in -10.0f64..10.0, p in 1.05f64..2.0) {
        let b = if a * b > 0.0 { -b } else { b };
        if let Some(c) = cp_part_ii(a, b, p).unwrap() {
            prop_assert!(c.holds, "{:?}", c);
        }
    }

    #[test]
    fn picone_pairs_hold(ui in 1e-3f64..10.0, uj in 1e-3f64..10.0, vi in 0.0f64..10.0, vj in 0.0f64..10.0, p in exponent()) {
        prop_assert!(picone_pair(ui, uj, vi, vj, p).holds);
        let c = picone_pair(ui, uj, 2.0 * ui, 2.0 * uj, p);
        prop_assert!(c.defect().abs() <= 1e-14);
    }

    #[test]
    fn sigma_convexity_holds(a in prop::collection::vec(0.0f64..3.0, 3..20), b in prop::collection::vec(0.0f64..3.0, 3..20), t in 0.0f64..=1.0, p in exponent()) {
        let ctx = disk(p);
        let u = field_of(&ctx, &a);
        let v = field_of(&ctx, &b);
        prop_assert!(sigma_convexity(&ctx, &u, &v, t).unwrap().holds);
    }
}
