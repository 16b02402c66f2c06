//! First eigenpair: preconditioned Rayleigh-quotient descent on the unit
//! L^p sphere, the dense p = 2 oracle, and checks of simplicity, sign
//! constancy and domain monotonicity.

use std::sync::Arc;

use rand_core::RngCore;
use serde::{Deserialize, Serialize};

use crate::dense::{smallest_eigenpairs, MAX_DENSE};
use crate::energy::{Discretization, EnergyContext};
use crate::error::{Error, Result};
use crate::grid::{DomainSpec, Field};
use crate::precond::Preconditioner;
use crate::rng::SplitMix64;

/// Relative residual the p = 2 block refinement aims for.
pub(crate) const REFINE_TOL: f64 = 1e-10;
const REFINE_MAX_ITER: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverParams {
    /// Relative change of λ below which an iteration counts as stagnant.
    pub tol: f64,
    pub max_iter: usize,
    pub initial_step: f64,
    pub shrink: f64,
    pub armijo: f64,
    pub seed: u64,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self { tol: 1e-9, max_iter: 50_000, initial_step: 1.0, shrink: 0.5, armijo: 1e-4, seed: 0 }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.tol > 0.0
            && self.max_iter > 0
            && self.initial_step > 0.0
            && self.shrink > 0.0
            && self.shrink < 1.0
            && self.armijo > 0.0
            && self.armijo < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::BadParameter(format!("invalid solver parameters {self:?}")))
        }
    }
}

/// Consecutive stagnant iterations required to stop.
const STAGNANT_RUNS: usize = 3;
/// Linearized preconditioner refresh period (p ≠ 2).
const REFRESH: usize = 10;

#[derive(Debug, Clone)]
pub struct EigenResult {
    pub lambda: f64,
    pub eigenfunction: Field,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Serializable summary of an [`EigenResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenSummary {
    pub lambda: f64,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl EigenResult {
    pub fn summary(&self) -> EigenSummary {
        EigenSummary {
            lambda: self.lambda,
            residual: self.residual,
            iterations: self.iterations,
            converged: self.converged,
        }
    }

    /// Turns a non-converged result into an error.
    pub fn require_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NotConverged { iterations: self.iterations, best: self.lambda })
        }
    }
}

/// Outcome of a descent run on compact vectors.
#[derive(Debug, Clone)]
pub(crate) struct Descent {
    pub u: Vec<f64>,
    pub lambda: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimizes the Rayleigh quotient starting from `u0` (normalized inside).
///
/// Each step moves along `-P⁻¹ r` with `r = L_h u - λ ψ(u)`, backtracks until
/// the Armijo condition holds on the Rayleigh value, and projects back to
/// the sphere.
pub(crate) fn rayleigh_descent(ctx: &EnergyContext, mut u: Vec<f64>, params: &SolverParams) -> Result<Descent> {
    params.validate()?;
    if ctx.is_empty() {
        return Err(Error::EmptyMask);
    }
    ctx.normalize_c(&mut u)?;
    let p = ctx.p();
    let mut pc = Preconditioner::linearized(ctx, &u)?;
    let mut lambda = ctx.energy_c(&u);
    let mut stagnant = 0;
    let mut converged = false;
    let mut iterations = 0;
    let mut trial = vec![0.0; u.len()];
    while iterations < params.max_iter {
        iterations += 1;
        if p != 2.0 && iterations % REFRESH == 0 {
            pc = Preconditioner::linearized(ctx, &u)?;
        }
        let r = ctx.residual_vec_c(&u, lambda);
        let d: Vec<f64> = pc.apply(&r).into_iter().map(|x| -x).collect();
        let slope = p * ctx.dot_c(&r, &d);
        if !(slope < 0.0) {
            converged = true;
            break;
        }
        let mut accepted = None;
        let mut tau = params.initial_step;
        while tau > 1e-16 {
            for ((t, ui), di) in trial.iter_mut().zip(&u).zip(&d) {
                *t = ui + tau * di;
            }
            if ctx.normalize_c(&mut trial).is_ok() {
                let value = ctx.energy_c(&trial);
                if value <= lambda + params.armijo * tau * slope {
                    accepted = Some(value);
                    break;
                }
            }
            tau *= params.shrink;
        }
        let Some(value) = accepted else {
            // no representable decrease left
            converged = true;
            break;
        };
        assert!(value <= lambda, "Rayleigh value increased: {lambda} -> {value}");
        let rel = (lambda - value) / value;
        std::mem::swap(&mut u, &mut trial);
        lambda = value;
        if rel < params.tol {
            stagnant += 1;
            if stagnant >= STAGNANT_RUNS {
                converged = true;
                break;
            }
        } else {
            stagnant = 0;
        }
    }
    Ok(Descent { u, lambda, iterations, converged })
}

/// Ritz pairs from [`lobpcg_p2`], vectors of unit Euclidean length.
#[derive(Debug, Clone)]
pub(crate) struct Ritz {
    pub vectors: Vec<Vec<f64>>,
    /// Relative residuals `|A x - θ x| / θ`.
    pub residuals: Vec<f64>,
    pub iterations: usize,
}

fn orthonormalize(vs: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(vs.len());
    for mut v in vs {
        let n0 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(n0 > 0.0) || !n0.is_finite() {
            continue;
        }
        // twice is enough
        for _ in 0..2 {
            for q in &out {
                let c: f64 = q.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(q).for_each(|(x, qi)| *x -= c * qi);
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-10 * n0 {
            v.iter_mut().for_each(|x| *x /= n);
            out.push(v);
        }
    }
    out
}

/// Block preconditioned Rayleigh–Ritz (LOBPCG) for p = 2. The block
/// resolves its pairs at a rate set by the gap to the eigenvalue just above
/// it, so a nearly degenerate λ1, λ2 does not slow it down the way
/// single-vector descent is slowed. Stops once the first `want` residuals are
/// below `rtol`, or when they stop improving.
pub(crate) fn lobpcg_p2(
    ctx: &EnergyContext,
    pc: &Preconditioner,
    start: Vec<Vec<f64>>,
    want: usize,
    rtol: f64,
    max_iter: usize,
) -> Result<Ritz> {
    if ctx.p() != 2.0 {
        return Err(Error::RequiresP2(ctx.p()));
    }
    let k = start.len();
    if want == 0 || want > k {
        return Err(Error::BadParameter("block smaller than the wanted pairs".into()));
    }
    let apply = |v: &[f64]| {
        let mut out = vec![0.0; v.len()];
        ctx.apply_c(v, &mut out);
        out
    };
    let mut x = orthonormalize(start);
    if x.len() < k {
        return Err(Error::BadParameter("start block is rank deficient".into()));
    }
    let mut dirs: Vec<Vec<f64>> = Vec::new();
    let mut best: Option<Ritz> = None;
    let mut since_best = 0;
    let mut iterations = 0;
    let mut residual_block: Vec<Vec<f64>> = Vec::new();
    loop {
        let basis = orthonormalize(x.iter().cloned().chain(residual_block.iter().map(|r| pc.apply(r))).chain(dirs.iter().cloned()).collect());
        let images: Vec<Vec<f64>> = basis.iter().map(|b| apply(b)).collect();
        let n = basis.len();
        let mut packed = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in 0..=i {
                let a: f64 = basis[i].iter().zip(&images[j]).map(|(a, b)| a * b).sum();
                let b: f64 = basis[j].iter().zip(&images[i]).map(|(a, b)| a * b).sum();
                packed.push(0.5 * (a + b));
            }
        }
        let (values, coefs) = smallest_eigenpairs(packed, n, k)?;
        let combine = |c: &[f64], from: usize, vs: &[Vec<f64>]| {
            let mut out = vec![0.0; vs[0].len()];
            for (cj, v) in c.iter().zip(vs).skip(from) {
                out.iter_mut().zip(v).for_each(|(o, vi)| *o += cj * vi);
            }
            out
        };
        x = coefs.iter().map(|c| combine(c, 0, &basis)).collect();
        let ax: Vec<Vec<f64>> = coefs.iter().map(|c| combine(c, 0, &images)).collect();
        if iterations > 0 {
            dirs = coefs.iter().map(|c| combine(c, k, &basis)).collect();
        }
        residual_block = x
            .iter()
            .zip(&ax)
            .zip(&values)
            .map(|((xi, axi), &th)| axi.iter().zip(xi).map(|(a, b)| a - th * b).collect())
            .collect();
        let residuals: Vec<f64> = residual_block
            .iter()
            .zip(&values)
            .map(|(r, th)| r.iter().map(|v| v * v).sum::<f64>().sqrt() / th.abs().max(f64::MIN_POSITIVE))
            .collect();
        let worst = residuals[..want].iter().copied().fold(0.0, f64::max);
        let improved = best.as_ref().map_or(true, |b| worst < b.residuals[..want].iter().copied().fold(0.0, f64::max));
        if improved {
            best = Some(Ritz { vectors: x.clone(), residuals, iterations });
            since_best = 0;
        } else {
            since_best += 1;
        }
        if worst <= rtol || since_best >= 25 || iterations >= max_iter {
            break;
        }
        iterations += 1;
    }
    let mut out = best.expect("at least one Ritz step");
    out.iterations = iterations;
    Ok(out)
}

/// `|random|` start on the mask.
pub(crate) fn positive_start(m: usize, seed: u64) -> Vec<f64> {
    let mut rng = SplitMix64::new(seed);
    (0..m).map(|_| rng.uniform(-1.0, 1.0).abs() + 1e-3).collect()
}

fn fix_sign(u: &mut [f64]) {
    if u.iter().sum::<f64>() < 0.0 {
        u.iter_mut().for_each(|v| *v = -*v);
    }
}

/// Descent stops once λ stalls, which comes early when λ2 is close to λ1
/// (weakly coupled components): the iterate then still carries a visible
/// second-mode component. A block of two fixes that at p = 2.
fn refine_p2(ctx: &EnergyContext, run: &mut Descent, seed: u64) -> Result<()> {
    let mut rng = SplitMix64::new(seed ^ 0x9E37_79B9_7F4A_7C15);
    let other: Vec<f64> = (0..run.u.len()).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let pc = Preconditioner::laplacian(ctx)?;
    let ritz = lobpcg_p2(ctx, &pc, vec![run.u.clone(), other], 1, REFINE_TOL, REFINE_MAX_ITER)?;
    let mut u = ritz.vectors[0].clone();
    ctx.normalize_c(&mut u)?;
    let lambda = ctx.energy_c(&u);
    if lambda <= run.lambda {
        run.u = u;
        run.lambda = lambda;
    }
    run.iterations += ritz.iterations;
    Ok(())
}

/// λ1(Ω) and its positive normalized eigenfunction. A run that hits
/// `max_iter` comes back with `converged = false` and the best iterate.
pub fn solve_lambda1(ctx: &EnergyContext, params: &SolverParams) -> Result<EigenResult> {
    let start = positive_start(ctx.len(), params.seed);
    let mut run = rayleigh_descent(ctx, start, params)?;
    if ctx.p() == 2.0 && run.converged && ctx.len() > 1 {
        refine_p2(ctx, &mut run, params.seed)?;
    }
    fix_sign(&mut run.u);
    Ok(EigenResult {
        lambda: run.lambda,
        residual: ctx.residual_c(&run.u, run.lambda),
        eigenfunction: ctx.field(&run.u),
        iterations: run.iterations,
        converged: run.converged,
    })
}

#[derive(Debug, Clone)]
pub struct DenseOracle {
    pub lambda1: f64,
    pub lambda2: f64,
    pub eigvec1: Field,
    pub eigvec2: Field,
}

/// Exact eigenpairs of the p = 2 discretization by a dense symmetric solve.
/// Eigenvectors are L²-normalized, the first one positive.
pub fn dense_oracle_p2(ctx: &EnergyContext) -> Result<DenseOracle> {
    if ctx.p() != 2.0 {
        return Err(Error::RequiresP2(ctx.p()));
    }
    let m = ctx.len();
    if m > MAX_DENSE {
        return Err(Error::TooLarge { size: m, limit: MAX_DENSE });
    }
    let a = ctx.assemble_p2_packed()?;
    let (vals, mut vecs) = smallest_eigenpairs(a, m, 2)?;
    if vals.len() < 2 {
        return Err(Error::BadParameter("oracle needs at least two unknowns".into()));
    }
    for v in vecs.iter_mut() {
        ctx.normalize_c(v)?;
    }
    fix_sign(&mut vecs[0]);
    Ok(DenseOracle {
        lambda1: vals[0],
        lambda2: vals[1],
        eigvec1: ctx.field(&vecs[0]),
        eigvec2: ctx.field(&vecs[1]),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SimplicityReport {
    pub lambdas: Vec<f64>,
    pub lambda_spread: f64,
    pub eigenfunction_spread: f64,
    pub min_value: f64,
    pub connected: bool,
    pub agree: bool,
    pub sign_constant: bool,
    pub passed: bool,
}

/// Runs the λ1 solver from `trials` seeds and compares the outcomes. On a
/// disconnected domain the report only flags the situation: λ1 is then not
/// simple and eigenfunctions need not agree.
pub fn check_simplicity(ctx: &EnergyContext, params: &SolverParams, trials: usize) -> Result<SimplicityReport> {
    if trials == 0 {
        return Err(Error::BadParameter("at least one trial needed".into()));
    }
    let mut seeds = SplitMix64::new(params.seed);
    let mut runs = Vec::with_capacity(trials);
    for _ in 0..trials {
        let trial = SolverParams { seed: seeds.next_u64(), ..params.clone() };
        runs.push(solve_lambda1(ctx, &trial)?.require_converged()?);
    }
    let reference = ctx.compact(&runs[0].eigenfunction)?;
    let l0 = runs[0].lambda;
    let mut lambda_spread = 0.0f64;
    let mut eigenfunction_spread = 0.0f64;
    let mut min_value = f64::INFINITY;
    for run in &runs {
        lambda_spread = lambda_spread.max((run.lambda - l0).abs() / l0);
        let u = ctx.compact(&run.eigenfunction)?;
        let dist = |sign: f64| {
            let diff: Vec<f64> = u.iter().zip(&reference).map(|(a, b)| a - sign * b).collect();
            ctx.norm_pow_c(&diff).powf(1.0 / ctx.p())
        };
        eigenfunction_spread = eigenfunction_spread.max(dist(1.0).min(dist(-1.0)));
        min_value = min_value.min(u.iter().copied().fold(f64::INFINITY, f64::min));
    }
    let connected = ctx.domain().is_connected();
    let agree = lambda_spread <= 10.0 * params.tol && eigenfunction_spread <= 1e-4;
    let sign_constant = min_value >= -1e-8;
    let passed = if connected { agree && sign_constant } else { lambda_spread <= 10.0 * params.tol };
    Ok(SimplicityReport {
        lambdas: runs.iter().map(|r| r.lambda).collect(),
        lambda_spread,
        eigenfunction_spread,
        min_value,
        connected,
        agree,
        sign_constant,
        passed,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MonotonicityReport {
    pub lambda_inner: f64,
    pub lambda_outer: f64,
    pub margin: f64,
    pub holds: bool,
}

/// λ1(A) > λ1(B) for A ⊊ B with B connected. Both masks are realized on the
/// grid of B so that the inclusion is exact.
pub fn check_domain_monotonicity(
    inner: &DomainSpec,
    outer: &DomainSpec,
    disc: &Discretization,
    params: &SolverParams,
) -> Result<MonotonicityReport> {
    let ctx_b = disc.build(outer)?;
    let domain_b = ctx_b.domain();
    let grid = domain_b.grid();
    let mask_a: Vec<bool> = (0..grid.len())
        .map(|i| grid.is_interior(i) && inner.contains(grid.center(i)))
        .collect();
    let domain_a = domain_b.with_mask(mask_a)?;
    if !domain_a.is_subset_of(domain_b) || domain_a.cell_count() == domain_b.cell_count() {
        return Err(Error::NotNested);
    }
    if !domain_b.is_connected() {
        return Err(Error::InvalidSpec("outer domain must be connected".into()));
    }
    let ctx_a = disc.on(Arc::new(domain_a))?;
    let la = solve_lambda1(&ctx_a, params)?.require_converged()?.lambda;
    let lb = solve_lambda1(&ctx_b, params)?.require_converged()?.lambda;
    let margin = la - lb;
    Ok(MonotonicityReport { lambda_inner: la, lambda_outer: lb, margin, holds: margin > params.tol * lb })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelSpec;
    use std::f64::consts::PI;

    fn disc(kernel: KernelSpec, p: f64, n: usize) -> Discretization {
        Discretization::new(kernel, p, n)
    }

    #[test]
    fn block_resolves_nearly_degenerate_pair() {
        // two unit intervals 0.1 apart: λ2 - λ1 is a few 1e-5 of λ1
        let spec = DomainSpec::IntervalUnion { intervals: vec![[-1.05, -0.05], [0.05, 1.05]] };
        let ctx = disc(KernelSpec::tent(0.2), 2.0, 84).build(&spec).unwrap();
        let o = dense_oracle_p2(&ctx).unwrap();
        assert!(o.lambda2 - o.lambda1 < 1e-3 * o.lambda1);
        let pc = Preconditioner::laplacian(&ctx).unwrap();
        let start = vec![positive_start(ctx.len(), 1), positive_start(ctx.len(), 2)];
        let ritz = lobpcg_p2(&ctx, &pc, start, 2, 1e-10, 500).unwrap();
        assert!(ritz.residuals.iter().all(|&r| r <= 1e-10));
        for (v, want) in ritz.vectors.iter().zip([o.lambda1, o.lambda2]) {
            let l = ctx.rayleigh_c(v).unwrap();
            assert!((l - want).abs() < 1e-11 * want, "{l} vs {want}");
        }
        let e1 = solve_lambda1(&ctx, &SolverParams::default()).unwrap();
        assert!((e1.lambda - o.lambda1).abs() < 1e-11 * o.lambda1);
    }

    #[test]
    fn classical_interval() {
        let ctx = disc(KernelSpec::none(), 2.0, 100).build(&DomainSpec::interval(0.0, 1.0)).unwrap();
        let r = solve_lambda1(&ctx, &SolverParams::default()).unwrap();
        assert!(r.converged);
        assert!((r.lambda - PI * PI).abs() < 1e-2 * PI * PI);
        let h = 0.01;
        let exact = 4.0 / (h * h) * (PI * h / 2.0).sin().powi(2);
        assert!((r.lambda - exact).abs() < 1e-8 * exact, "{} vs {exact}", r.lambda);
    }

    #[test]
    fn oracle_closed_form() {
        let ctx = disc(KernelSpec::none(), 2.0, 100).build(&DomainSpec::interval(0.0, 1.0)).unwrap();
        let o = dense_oracle_p2(&ctx).unwrap();
        let h = 0.01;
        for (k, lam) in [o.lambda1, o.lambda2].iter().enumerate() {
            let exact = 4.0 / (h * h) * ((k + 1) as f64 * PI * h / 2.0).sin().powi(2);
            assert!((lam - exact).abs() < 1e-10 * exact);
        }
        assert!(o.lambda1 < o.lambda2);
    }

    #[test]
    fn nonlocal_interval_matches_oracle() {
        let ctx = disc(KernelSpec::tent(0.2), 2.0, 100).build(&DomainSpec::interval(0.0, 1.0)).unwrap();
        let o = dense_oracle_p2(&ctx).unwrap();
        let r = solve_lambda1(&ctx, &SolverParams::default()).unwrap();
        assert!((r.lambda - o.lambda1).abs() < 1e-6 * o.lambda1);
        assert!(r.lambda > 0.0);
        assert!(r.residual < 1e-3, "residual {}", r.residual);
    }

    #[test]
    fn p3_converges_and_is_positive() {
        let ctx = disc(KernelSpec::tent(0.2), 3.0, 100).build(&DomainSpec::interval(0.0, 1.0)).unwrap();
        let r = solve_lambda1(&ctx, &SolverParams::default()).unwrap();
        assert!(r.converged && r.lambda > 0.0);
        assert!(r.eigenfunction.min() >= -1e-8);
    }

    #[test]
    fn simplicity_on_interval() {
        let ctx = disc(KernelSpec::tent(0.2), 2.0, 60).build(&DomainSpec::interval(0.0, 1.0)).unwrap();
        let rep = check_simplicity(&ctx, &SolverParams::default(), 3).unwrap();
        assert!(rep.passed && rep.connected, "{rep:?}");
        let one = check_simplicity(&ctx, &SolverParams::default(), 1).unwrap();
        assert!(one.agree);
    }

    #[test]
    fn monotonicity_and_nesting() {
        let d = disc(KernelSpec::tent(0.2), 2.0, 50);
        let rep = check_domain_monotonicity(
            &DomainSpec::interval(0.1, 0.9),
            &DomainSpec::interval(0.0, 1.0),
            &d,
            &SolverParams::default(),
        )
        .unwrap();
        assert!(rep.holds && rep.margin > 0.0);
        let same = check_domain_monotonicity(
            &DomainSpec::interval(0.0, 1.0),
            &DomainSpec::interval(0.0, 1.0),
            &d,
            &SolverParams::default(),
        );
        assert!(matches!(same, Err(Error::NotNested)));
    }

    #[test]
    fn oracle_rejects_p3() {
        let ctx = disc(KernelSpec::none(), 3.0, 20).build(&DomainSpec::interval(0.0, 1.0)).unwrap();
        assert!(matches!(dense_oracle_p2(&ctx), Err(Error::RequiresP2(_))));
    }
}
