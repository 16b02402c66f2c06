//! End-to-end acceptance run. Prints one [PASS]/[FAIL] line per criterion and
//! exits non-zero if any fails.

use std::f64::consts::PI;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use mixplap::cli::{default_shapes, run};
use mixplap::eigen1::{dense_oracle_p2, solve_lambda1, SolverParams};
use mixplap::eigen2::{nodal_analysis, sign_split_levels, sign_split_paths, solve_lambda2, StringParams};
use mixplap::energy::Discretization;
use mixplap::experiments::{drift_experiment, faber_krahn_sweep, hks_check, nodal_weight_sweep, polya_szego_sweep, Setup};
use mixplap::lemmas::{run_trials, Lemma};
use mixplap::rearrange::schwarz_symmetrize;
use mixplap::{DomainSpec, EnergyContext, KernelSpec, SplitMix64};

type Outcome = Result<(bool, String), String>;

fn ctx_of(spec: &DomainSpec, kernel: KernelSpec, p: f64, n: usize) -> Result<EnergyContext, String> {
    Discretization::new(kernel, p, n).build(spec).map_err(|e| e.to_string())
}

fn lambda12(ctx: &EnergyContext) -> Result<(f64, f64, mixplap::Field), String> {
    let (e1, m) = solve_lambda2(ctx, &SolverParams::default(), &StringParams::default()).map_err(|e| e.to_string())?;
    if !(e1.converged && m.eigen.converged) {
        return Err(format!("not converged (λ1 {}, λ2 {})", e1.lambda, m.eigen.lambda));
    }
    Ok((e1.lambda, m.eigen.lambda, m.eigen.eigenfunction))
}

fn disk() -> DomainSpec {
    DomainSpec::ball(&[0.0, 0.0], 1.0)
}

fn unit() -> DomainSpec {
    DomainSpec::interval(0.0, 1.0)
}

fn oracle_equivalence() -> Outcome {
    let t0 = Instant::now();
    let mut ok = true;
    let mut notes = Vec::new();
    for (spec, n) in [(unit(), 200), (disk(), 60)] {
        let ctx = ctx_of(&spec, KernelSpec::tent(0.2), 2.0, n)?;
        let (l1, l2, _) = lambda12(&ctx)?;
        let o = dense_oracle_p2(&ctx).map_err(|e| e.to_string())?;
        let (d1, d2) = ((l1 - o.lambda1).abs() / o.lambda1, (l2 - o.lambda2).abs() / o.lambda2);
        ok &= d1 < 1e-6 && d2 < 1e-5;
        notes.push(format!("{}: rel λ1 {d1:.1e}, λ2 {d2:.1e}", spec.descriptor()));
    }
    let secs = t0.elapsed().as_secs_f64();
    ok &= secs < 120.0;
    Ok((ok, format!("{}; {secs:.1}s", notes.join("; "))))
}

fn classical_limit() -> Outcome {
    let err = |n| -> Result<f64, String> {
        let ctx = ctx_of(&unit(), KernelSpec::none(), 2.0, n)?;
        let l = solve_lambda1(&ctx, &SolverParams::default()).map_err(|e| e.to_string())?.lambda;
        Ok((l - PI * PI).abs() / (PI * PI))
    };
    let (e100, e200) = (err(100)?, err(200)?);
    let ratio = e100 / e200;
    Ok((e100 < 1e-3 && (3.5..=4.5).contains(&ratio), format!("rel err n=100 {e100:.2e}, ratio {ratio:.3}")))
}

fn ordering() -> Outcome {
    let tol = SolverParams::default().tol;
    let domains = [
        (unit(), 100),
        (disk(), 30),
        (DomainSpec::rect(&[0.0, 0.0], &[1.0, 1.0]), 30),
        (DomainSpec::rect(&[0.0, 0.0], &[2.0, 1.0]), 30),
    ];
    let mut worst = f64::INFINITY;
    for p in [2.0, 3.0] {
        for (spec, n) in &domains {
            let ctx = ctx_of(spec, KernelSpec::tent(0.2), p, *n)?;
            let (l1, l2, _) = lambda12(&ctx)?;
            worst = worst.min((l2 - l1) / l1);
        }
    }
    Ok((worst > 10.0 * tol, format!("smallest (λ2-λ1)/λ1 = {worst:.3e} over 8 cases")))
}

fn path_levels() -> Outcome {
    let ctx = ctx_of(&unit(), KernelSpec::tent(0.2), 3.0, 100)?;
    let (_, l2, u) = lambda12(&ctx)?;
    let paths = sign_split_paths(&u, 3.0, 41).map_err(|e| e.to_string())?;
    let levels = sign_split_levels(&ctx, &paths).map_err(|e| e.to_string())?;
    let top = levels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((top <= l2 * (1.0 + 5e-3), format!("levels {levels:.6?} vs λ2 {l2:.6}")))
}

fn nodal_domains() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for p in [2.0, 3.0] {
        for (spec, n) in [(unit(), 100), (disk(), 30)] {
            let ctx = ctx_of(&spec, KernelSpec::tent(0.2), p, n)?;
            let (_, l2, u) = lambda12(&ctx)?;
            let rep = nodal_analysis(&ctx, &SolverParams::default(), &u, l2).map_err(|e| e.to_string())?;
            let m = rep.margins[0].min(rep.margins[1]);
            ok &= m > 0.0;
            notes.push(format!("{} p={p}: {m:.3e}", spec.descriptor()));
        }
        let weights = [1.0, 0.8, 0.6, 0.4, 0.2, 0.0];
        let sweep = nodal_weight_sweep(&unit(), &Setup::new(KernelSpec::tent(0.2), p), 100, &weights).map_err(|e| e.to_string())?;
        ok &= sweep.passed;
        let margins: Vec<String> = sweep.points.iter().map(|q| format!("{:.2e}", q.margin)).collect();
        notes.push(format!("sweep p={p} [{}]", margins.join(", ")));
    }
    Ok((ok, notes.join("; ")))
}

fn faber_krahn() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for p in [2.0, 3.0] {
        let rep = faber_krahn_sweep(&default_shapes(), &Setup::new(KernelSpec::tent(0.2), p), &[60, 80]).map_err(|e| e.to_string())?;
        ok &= rep.passed;
        notes.push(format!("p={p} margins {:.3?}, Richardson {:.3?}", rep.margins, rep.richardson));
    }
    Ok((ok, notes.join("; ")))
}

fn hong_krahn_szego() -> Outcome {
    let ratios = [0.3, 0.4, 0.5, 0.6, 0.7];
    let mut ok = true;
    let mut notes = Vec::new();
    for (spec, n) in [(unit(), 100), (disk(), 40), (DomainSpec::rect(&[0.0, 0.0], &[1.0, 1.0]), 40)] {
        let rep = hks_check(&spec, &Setup::default(), n, &ratios).map_err(|e| e.to_string())?;
        let at_half = rep.split_argmin.is_some_and(|r| (r - 0.5).abs() < 1e-12);
        ok &= rep.passed && at_half;
        notes.push(format!("{}: margin {:.3}, argmin {:?}", spec.descriptor(), rep.margin, rep.split_argmin));
    }
    Ok((ok, notes.join("; ")))
}

fn drift() -> Outcome {
    let t0 = Instant::now();
    let rep = drift_experiment(0.5, &[1.05, 1.1, 1.15, 1.2, 1.3, 1.45], 2, 20, &Setup::default()).map_err(|e| e.to_string())?;
    let secs = t0.elapsed().as_secs_f64();
    let last = rep.points.last().map(|q| q.lambda2).unwrap_or(f64::NAN);
    Ok((
        rep.monotone && rep.decoupled && secs < 300.0,
        format!("monotone {}, decoupled {}, λ2 {last:.9} vs λ1(B_R) {:.9}; {secs:.1}s", rep.monotone, rep.decoupled, rep.lambda1_ball),
    ))
}

fn lemma_suite() -> Outcome {
    let mut ok = true;
    let mut worst = 0.0f64;
    let mut eq = 0.0f64;
    let mut failed = Vec::new();
    for lemma in [Lemma::G, Lemma::Sigma, Lemma::CpI, Lemma::CpII, Lemma::Picone] {
        for p in [2.0, 2.5, 3.0, 4.0] {
            let row = run_trials(lemma, p, 100_000, 2024).map_err(|e| e.to_string())?;
            if !row.passed() {
                ok = false;
                failed.push(format!("{lemma} p={p} ({} violations)", row.violations));
            }
            worst = worst.max(row.max_defect);
            eq = eq.max(row.equality_error);
        }
    }
    let detail = if failed.is_empty() { String::new() } else { format!("; failed: {}", failed.join(", ")) };
    Ok((ok, format!("20 suites x 1e5 trials, max defect {worst:.2e}, equality error {eq:.2e}{detail}")))
}

fn energy_identities() -> Outcome {
    let mut rng = SplitMix64::new(99);
    let ps = [2.0, 2.5, 3.0, 4.0];
    let mut ctxs = Vec::new();
    for &p in &ps {
        ctxs.push(ctx_of(&unit(), KernelSpec::tent(0.25), p, 60)?);
        ctxs.push(ctx_of(&disk(), KernelSpec::tent(0.3), p, 16)?);
    }
    let (mut euler, mut homog, mut fd) = (0.0f64, 0.0f64, 0.0f64);
    for trial in 0..1000 {
        let ctx = &ctxs[trial % ctxs.len()];
        let p = ctx.p();
        let m = ctx.len();
        let u: Vec<f64> = (0..m).map(|_| rng.uniform(-2.0, 2.0)).collect();
        let phi: Vec<f64> = (0..m).map(|_| rng.uniform(-2.0, 2.0)).collect();
        let uf = ctx.field(&u);
        let e = ctx.total_energy(&uf).map_err(|e| e.to_string())?;
        euler = euler.max((ctx.pairing(&uf, &uf).map_err(|e| e.to_string())? - e).abs() / e);
        let t = rng.uniform(-3.0, 3.0);
        let et = ctx.total_energy(&uf.scaled(t)).map_err(|e| e.to_string())?;
        homog = homog.max((et - t.abs().powf(p) * e).abs() / (t.abs().powf(p) * e).max(f64::MIN_POSITIVE));
        let g = ctx.compact(&ctx.energy_gradient(&uf).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let exact = ctx.dot_c(&g, &phi);
        let eps = 1e-5;
        let shifted = |s: f64| ctx.energy_c(&u.iter().zip(&phi).map(|(a, b)| a + s * b).collect::<Vec<_>>());
        let central = (shifted(eps) - shifted(-eps)) / (2.0 * eps);
        // p·E is the derivative along u itself, the natural scale here
        fd = fd.max((central - exact).abs() / (exact.abs() + p * e));
    }
    // decoupling: supports farther apart than the kernel radius
    let ctx = ctx_of(&unit(), KernelSpec::tent(0.25), 3.0, 80)?;
    let reach = (0.25 / ctx.grid().h()).ceil() as usize + 1;
    let mut split = 0.0f64;
    for _ in 0..1000 {
        let cut = 5 + (rng.next_f64() * 30.0) as usize;
        let u: Vec<f64> = (0..ctx.len()).map(|i| if i < cut { rng.uniform(-2.0, 2.0) } else { 0.0 }).collect();
        let v: Vec<f64> = (0..ctx.len()).map(|i| if i >= cut + reach { rng.uniform(-2.0, 2.0) } else { 0.0 }).collect();
        let w: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a + b).collect();
        let (eu, ev, ew) = (ctx.energy_c(&u), ctx.energy_c(&v), ctx.energy_c(&w));
        split = split.max((ew - eu - ev).abs() / ew);
    }
    let ok = euler <= 1e-12 && homog <= 1e-12 && fd < 1e-5 && split <= 1e-12;
    Ok((ok, format!("Euler {euler:.1e}, homogeneity {homog:.1e}, finite differences {fd:.1e}, decoupling {split:.1e}")))
}

fn permutations(v: &[f64]) -> Vec<Vec<f64>> {
    if v.len() <= 1 {
        return vec![v.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..v.len() {
        let mut rest = v.to_vec();
        let x = rest.remove(i);
        for mut q in permutations(&rest) {
            q.insert(0, x);
            out.push(q);
        }
    }
    out
}

fn polya_szego() -> Outcome {
    let rep = polya_szego_sweep(&Setup::default(), &[100, 200, 400], 200, 11).map_err(|e| e.to_string())?;
    let defects: Vec<String> = rep.points.iter().map(|q| format!("n={} {:.1e} (tol {:.1e})", q.n, q.max_defect, q.tol_h)).collect();
    let mut rng = SplitMix64::new(5);
    let mut brute = true;
    let mut cases = 0;
    for n in 4..=8 {
        for p in [2.0, 3.0] {
            let ctx = ctx_of(&unit(), KernelSpec::tent(0.5), p, n)?;
            for _ in 0..3 {
                let vals: Vec<f64> = (0..n).map(|_| rng.uniform(0.0, 5.0)).collect();
                let star = schwarz_symmetrize(&ctx, &ctx.field(&vals)).map_err(|e| e.to_string())?;
                let e_star = ctx.total_energy(&star.u_star).map_err(|e| e.to_string())?;
                brute &= permutations(&vals).iter().all(|q| e_star <= ctx.energy_c(q) * (1.0 + 1e-12));
                cases += 1;
            }
        }
    }
    Ok((rep.passed && brute, format!("{}; brute force over all permutations, {cases} cases: {brute}", defects.join(", "))))
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = tmp.path().join("run.json");
    fs::write(&cfg, r#"{"domain": {"shape": "ball", "params": {"center": [0, 0], "radius": 1}}, "resolution": 24, "p": 3}"#).map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for (i, (cmd, workers)) in [("hks", "1"), ("hks", "1"), ("hks", "2"), ("faber-krahn", "1"), ("faber-krahn", "1")].iter().enumerate() {
        let dir = tmp.path().join(format!("r{i}"));
        let argv = ["mixplap", cmd, "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap(), "--workers", workers];
        let code = run(argv.iter().map(|s| s.to_string()).collect());
        if code != 0 && code != 2 {
            return Err(format!("{cmd} exited {code}"));
        }
        outputs.push(fs::read(dir.join("results.csv")).map_err(|e| e.to_string())?);
    }
    let ok = outputs[0] == outputs[1] && outputs[0] == outputs[2] && outputs[3] == outputs[4];
    Ok((ok, "hks (1, 1, 2 workers) and faber-krahn run twice".into()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("p=2 oracle equivalence", oracle_equivalence),
        ("classical limit", classical_limit),
        ("λ2 > λ1 ordering", ordering),
        ("sign-split path levels", path_levels),
        ("nodal domains", nodal_domains),
        ("Faber–Krahn", faber_krahn),
        ("Hong–Krahn–Szegő", hong_krahn_szego),
        ("two-ball drift", drift),
        ("lemma suite", lemma_suite),
        ("energy identities", energy_identities),
        ("Pólya–Szegő", polya_szego),
        ("determinism", determinism),
    ];
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        let (ok, detail) = match outcome {
            Ok(v) => v,
            Err(e) => (false, format!("error: {e}")),
        };
        failures += usize::from(!ok);
        println!("[{}] {:>2} {name}: {detail} ({:.1}s)", if ok { "PASS" } else { "FAIL" }, i + 1, t0.elapsed().as_secs_f64());
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
