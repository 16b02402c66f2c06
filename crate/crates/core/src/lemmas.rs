//! Elementary inequalities behind the variational arguments, as executable
//! checks. Every check compares `lhs <= rhs` with a relative slack of 1e-12,
//! i.e. it holds when `lhs - rhs <= 1e-12 (1 + s)`, where `s` is the larger
//! of `|rhs|` and the largest term summed on either side. The term scale
//! matters where the two sides are equal but built from large cancelling
//! terms (the `U = 0` case of the `g` inequality, for instance).
//!
//! Randomized trials derive one generator per trial from the seed, so the
//! outcome does not depend on the number of worker threads.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Mutex, OnceLock};

use rand_core::RngCore;
use rayon::prelude::*;
use serde::Serialize;

use crate::energy::{Discretization, EnergyContext};
use crate::error::{Error, Result};
use crate::grid::{DomainSpec, Field};
use crate::kernel::KernelSpec;
use crate::rng::SplitMix64;

pub const SLACK: f64 = 1e-12;

/// One evaluated inequality `lhs <= rhs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Check {
    pub lhs: f64,
    pub rhs: f64,
    /// Magnitude of the largest term entering either side.
    pub scale: f64,
    pub holds: bool,
}

impl Check {
    pub fn le(lhs: f64, rhs: f64) -> Self {
        Self::le_scaled(lhs, rhs, 0.0)
    }

    pub fn le_scaled(lhs: f64, rhs: f64, scale: f64) -> Self {
        let scale = scale.abs().max(rhs.abs());
        Self { lhs, rhs, scale, holds: lhs - rhs <= SLACK * (1.0 + scale) }
    }

    /// Relative excess `(lhs - rhs) / (1 + scale)`; positive means violated
    /// before slack.
    pub fn defect(&self) -> f64 {
        (self.lhs - self.rhs) / (1.0 + self.scale)
    }
}

fn check_p(p: f64, min: f64) -> Result<()> {
    if p.is_finite() && p > min || (min == 1.0 && p == 1.0) {
        Ok(())
    } else {
        Err(Error::BadParameter(format!("exponent p = {p} out of range")))
    }
}

fn spow(x: f64, e: f64) -> f64 {
    x.abs().powf(e)
}

/// `g(t) = |U - tV|^p + |U - V|^{p-2}(U - V)V|t|^p` against `g(1)`, for
/// `UV <= 0`. Here `lhs = g(t)`, `rhs = g(1)`.
pub fn g_inequality(u: f64, v: f64, p: f64, t: f64) -> Result<Check> {
    check_p(p, 1.0)?;
    if u * v > 0.0 {
        return Err(Error::ConstraintViolated(format!("U V = {} > 0", u * v)));
    }
    let d = u - v;
    // |d|^{p-2} d written as sign(d)|d|^{p-1}, which is also fine at p = 1
    let phi = |x: f64| x.signum() * spow(x, p - 1.0);
    let terms = |t: f64| (spow(u - t * v, p), phi(d) * v * spow(t, p));
    let (a, b) = terms(t);
    let (a1, b1) = terms(1.0);
    let scale = a.max(b.abs()).max(a1).max(b1.abs());
    Ok(Check::le_scaled(a + b, a1 + b1, scale))
}

/// `σ_t = ((1-t) v^p + t u^p)^{1/p}`.
pub fn sigma_path(u: &[f64], v: &[f64], p: f64, t: f64) -> Vec<f64> {
    u.iter().zip(v).map(|(&a, &b)| ((1.0 - t) * b.powf(p) + t * a.powf(p)).powf(1.0 / p)).collect()
}

/// Convexity of the nonlocal energy along `σ_t`:
/// `lhs = E_J(σ_t)`, `rhs = (1-t) E_J(v) + t E_J(u)`.
pub fn sigma_convexity(ctx: &EnergyContext, u: &Field, v: &Field, t: f64) -> Result<Check> {
    let u = ctx.compact(u)?;
    let v = ctx.compact(v)?;
    sigma_convexity_c(ctx, &u, &v, t)
}

fn sigma_convexity_c(ctx: &EnergyContext, u: &[f64], v: &[f64], t: f64) -> Result<Check> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::BadParameter(format!("t = {t} outside [0, 1]")));
    }
    if u.iter().chain(v).any(|&x| x < 0.0) {
        return Err(Error::NegativeInput);
    }
    let s = sigma_path(u, v, ctx.p(), t);
    let (ev, eu) = (ctx.nonlocal_energy_c(v), ctx.nonlocal_energy_c(u));
    Ok(Check::le_scaled(ctx.nonlocal_energy_c(&s), (1.0 - t) * ev + t * eu, ev.max(eu)))
}

/// `|a-b|^p <= |a|^p + |b|^p + c (a² + b²)^{(p-2)/2} |ab|`.
pub fn cp_part_i(a: f64, b: f64, p: f64, c: f64) -> Check {
    let cross = if a * b == 0.0 { 0.0 } else { c * (a * a + b * b).powf(0.5 * (p - 2.0)) * (a * b).abs() };
    let lhs = spow(a - b, p);
    Check::le_scaled(lhs, spow(a, p) + spow(b, p) + cross, lhs)
}

/// For `ab <= 0`: `|a-b|^{p-2}(a-b)a >= |a|^p - (p-1)|·|^{p-2} b a`, where
/// the weight is `|a|^{p-2}` for `p >= 2` and `|a-b|^{p-2}` for `1 < p < 2`.
/// Returned as `lhs = |a|^p - …`, `rhs = |a-b|^{p-2}(a-b)a`. `None` at the
/// degenerate point `a = b = 0` of the `p < 2` branch.
pub fn cp_part_ii(a: f64, b: f64, p: f64) -> Result<Option<Check>> {
    check_p(p, 1.0)?;
    if a * b > 0.0 {
        return Err(Error::ConstraintViolated(format!("a b = {} > 0", a * b)));
    }
    let d = a - b;
    if p < 2.0 && d == 0.0 {
        return Ok(None);
    }
    let big = d.signum() * spow(d, p - 1.0) * a;
    let w = if p >= 2.0 { spow(a, p - 2.0) } else { spow(d, p - 2.0) };
    let (ap, cross) = (spow(a, p), (p - 1.0) * w * b * a);
    Ok(Some(Check::le_scaled(ap - cross, big, ap.max(cross.abs()))))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CpReport {
    pub c_p: f64,
    pub part_i: Check,
    /// `None` when `ab > 0` or at the skipped degenerate point.
    pub part_ii: Option<Check>,
}

pub const CP_SAMPLES: usize = 100_000;

/// Both parts, with `c_p` from [`calibrate_cp`] on [`CP_SAMPLES`] samples.
pub fn cp_inequalities(a: f64, b: f64, p: f64) -> Result<CpReport> {
    check_p(p, 1.0)?;
    let c_p = calibrate_cp(p, CP_SAMPLES);
    let part_ii = if a * b > 0.0 { None } else { cp_part_ii(a, b, p)? };
    Ok(CpReport { c_p, part_i: cp_part_i(a, b, p, c_p), part_ii })
}

const CP_SEED: u64 = 0x5EED_C0DE;
const CP_GRID_STEPS: f64 = 64.0;

/// Constant `c` needed by part (i) at one point.
fn cp_need(a: f64, b: f64, p: f64) -> f64 {
    if a * b == 0.0 {
        return 0.0;
    }
    (spow(a - b, p) - spow(a, p) - spow(b, p)) / ((a * a + b * b).powf(0.5 * (p - 2.0)) * (a * b).abs())
}

/// Smallest `c = 2^{k/64}` for which part (i) holds on `samples` points of
/// the unit circle (both sides are p-homogeneous) and on the ray `a = -b`.
/// Samples are a fixed stream, so the result is non-decreasing in `samples`.
/// Cached per `(p, samples)`.
pub fn calibrate_cp(p: f64, samples: usize) -> f64 {
    static CACHE: OnceLock<Mutex<HashMap<(u64, usize), f64>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(&c) = cache.lock().unwrap().get(&(p.to_bits(), samples)) {
        return c;
    }
    let mut rng = SplitMix64::new(CP_SEED);
    let mut need = cp_need(1.0, -1.0, p);
    for _ in 0..samples {
        let th = rng.uniform(0.0, std::f64::consts::TAU);
        need = need.max(cp_need(th.cos(), th.sin(), p));
    }
    let mut k = (CP_GRID_STEPS * need.max(f64::MIN_POSITIVE).log2()).ceil();
    while (k / CP_GRID_STEPS).exp2() < need {
        k += 1.0;
    }
    while ((k - 1.0) / CP_GRID_STEPS).exp2() >= need {
        k -= 1.0;
    }
    let c = (k / CP_GRID_STEPS).exp2();
    cache.lock().unwrap().insert((p.to_bits(), samples), c);
    c
}

/// Discrete Picone inequality for one pair:
/// `|u_i-u_j|^{p-2}(u_i-u_j)(v_i^p/u_i^{p-1} - v_j^p/u_j^{p-1}) <= |v_i-v_j|^p`.
/// A zero `u` stands for a point outside the domain, where `v` vanishes too
/// and the quotient is taken as 0.
pub fn picone_pair(ui: f64, uj: f64, vi: f64, vj: f64, p: f64) -> Check {
    let q = |u: f64, v: f64| if u == 0.0 { 0.0 } else { v.powf(p) / u.powf(p - 1.0) };
    let d = ui - uj;
    let (qi, qj) = (q(ui, vi), q(uj, vj));
    let pd = spow(d, p - 1.0);
    let lhs = d.signum() * pd * (qi - qj);
    Check::le_scaled(lhs, spow(vi - vj, p), pd * qi.max(qj))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct PiconeReport {
    /// Kernel pairs inside the mask.
    pub pairs: usize,
    pub pair_violations: usize,
    pub max_pair_defect: f64,
    /// Gradient faces, one per cell and axis, including boundary faces.
    pub faces: usize,
    pub face_violations: usize,
    pub max_face_defect: f64,
    pub holds: bool,
}

/// Picone's inequality on every kernel pair and, for the gradient part, on
/// every face of the difference stencil. In the discrete setting the
/// gradient version is checked per axis: each face is a two-point pair.
pub fn picone_check(ctx: &EnergyContext, u: &Field, v: &Field) -> Result<PiconeReport> {
    let u = ctx.compact(u)?;
    let v = ctx.compact(v)?;
    picone_check_c(ctx, &u, &v)
}

fn picone_check_c(ctx: &EnergyContext, u: &[f64], v: &[f64]) -> Result<PiconeReport> {
    if u.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::NonPositiveU);
    }
    if v.iter().any(|&x| x < 0.0) {
        return Err(Error::NegativeInput);
    }
    let p = ctx.p();
    let mut r = PiconeReport {
        pairs: 0,
        pair_violations: 0,
        max_pair_defect: f64::NEG_INFINITY,
        faces: 0,
        face_violations: 0,
        max_face_defect: f64::NEG_INFINITY,
        holds: true,
    };
    for i in 0..u.len() {
        let (row, _) = ctx.kernel_row(i);
        for (j, _) in row.filter(|&(j, _)| j > i) {
            let c = picone_pair(u[i], u[j], v[i], v[j], p);
            r.pairs += 1;
            r.pair_violations += usize::from(!c.holds);
            r.max_pair_defect = r.max_pair_defect.max(c.defect());
        }
    }
    for (i, j, _, _, _) in ctx.local_faces() {
        if i.is_none() && j.is_none() {
            continue;
        }
        let at = |k: Option<usize>, f: &[f64]| k.map_or(0.0, |k| f[k]);
        let c = picone_pair(at(i, u), at(j, u), at(i, v), at(j, v), p);
        r.faces += 1;
        r.face_violations += usize::from(!c.holds);
        r.max_face_defect = r.max_face_defect.max(c.defect());
    }
    if r.pairs == 0 {
        r.max_pair_defect = 0.0;
    }
    if r.faces == 0 {
        r.max_face_defect = 0.0;
    }
    r.holds = r.pair_violations == 0 && r.face_violations == 0;
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Lemma {
    G,
    Sigma,
    CpI,
    CpII,
    Picone,
}

impl Lemma {
    pub const ALL: [Lemma; 5] = [Lemma::G, Lemma::Sigma, Lemma::CpI, Lemma::CpII, Lemma::Picone];

    pub fn name(self) -> &'static str {
        match self {
            Lemma::G => "g",
            Lemma::Sigma => "sigma",
            Lemma::CpI => "cp_i",
            Lemma::CpII => "cp_ii",
            Lemma::Picone => "picone",
        }
    }
}

impl fmt::Display for Lemma {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Lemma {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Lemma::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| Error::BadParameter(format!("unknown lemma '{s}' (g, sigma, cp_i, cp_ii, picone)")))
    }
}

/// Outcome of a randomized run. `worst` holds the inputs of the largest
/// violation, when there is one.
#[derive(Debug, Clone, Serialize)]
pub struct LemmaRow {
    pub lemma: Lemma,
    pub p: f64,
    pub trials: usize,
    pub violations: usize,
    pub max_defect: f64,
    /// Largest relative gap on the equality cases, run every tenth trial.
    pub equality_error: f64,
    pub worst: Option<Vec<f64>>,
}

impl LemmaRow {
    pub fn passed(&self) -> bool {
        self.violations == 0 && self.equality_error <= 1e-14
    }
}

struct Trial {
    check: Check,
    equality: bool,
    input: Vec<f64>,
}

/// Small fixed contexts for the field-valued lemmas.
fn trial_context(p: f64) -> Result<EnergyContext> {
    Discretization::new(KernelSpec::tent(0.5), p, 5).build(&DomainSpec::rect(&[0.0, 0.0], &[1.0, 1.0]))
}

fn random_signed(rng: &mut SplitMix64) -> f64 {
    // magnitudes over several decades, with exact zeros now and then
    if rng.next_f64() < 0.05 {
        return 0.0;
    }
    let m = rng.uniform(-3.0, 3.0).exp();
    if rng.next_u64() & 1 == 0 { m } else { -m }
}

fn one_trial(lemma: Lemma, p: f64, ctx: Option<&EnergyContext>, rng: &mut SplitMix64, equality: bool) -> Result<Option<Trial>> {
    let trial = |check, input| Ok(Some(Trial { check, equality, input }));
    match lemma {
        Lemma::G => {
            let u = random_signed(rng);
            let mut v = random_signed(rng);
            if u * v > 0.0 {
                v = -v;
            }
            let t = rng.uniform(-3.0, 3.0);
            if equality {
                let (u, t) = if rng.next_u64() & 1 == 0 { (u, 1.0) } else { (0.0, t) };
                return trial(g_inequality(u, v, p, t)?, vec![u, v, t]);
            }
            trial(g_inequality(u, v, p, t)?, vec![u, v, t])
        }
        Lemma::CpI => {
            let a = random_signed(rng);
            let b = if equality { 0.0 } else { random_signed(rng) };
            trial(cp_part_i(a, b, p, calibrate_cp(p, CP_SAMPLES)), vec![a, b])
        }
        Lemma::CpII => {
            let a = random_signed(rng);
            let mut b = random_signed(rng);
            if a * b > 0.0 {
                b = -b;
            }
            let (a, b) = if equality { if rng.next_u64() & 1 == 0 { (a, 0.0) } else { (0.0, b) } } else { (a, b) };
            match cp_part_ii(a, b, p)? {
                Some(c) => trial(c, vec![a, b]),
                None => Ok(None),
            }
        }
        Lemma::Sigma => {
            let ctx = ctx.expect("field context");
            let m = ctx.len();
            let field = |rng: &mut SplitMix64| -> Vec<f64> {
                let scale = rng.uniform(-2.0, 2.0).exp();
                (0..m).map(|_| if rng.next_f64() < 0.2 { 0.0 } else { scale * rng.next_f64() }).collect()
            };
            let u = field(rng);
            let v = field(rng);
            let t = if equality { (rng.next_u64() & 1) as f64 } else { rng.next_f64() };
            let c = sigma_convexity_c(ctx, &u, &v, t)?;
            trial(c, vec![t])
        }
        Lemma::Picone => {
            let ctx = ctx.expect("field context");
            let m = ctx.len();
            let u: Vec<f64> = (0..m).map(|_| rng.uniform(-3.0, 3.0).exp()).collect();
            let v: Vec<f64> = if equality {
                let c = rng.uniform(0.1, 10.0);
                u.iter().map(|x| c * x).collect()
            } else {
                (0..m).map(|_| if rng.next_f64() < 0.1 { 0.0 } else { rng.uniform(-3.0, 3.0).exp() }).collect()
            };
            let r = picone_check_c(ctx, &u, &v)?;
            let check = if r.max_pair_defect >= r.max_face_defect {
                r.max_pair_defect
            } else {
                r.max_face_defect
            };
            // the report already carries relative defects
            let check = Check { lhs: check, rhs: 0.0, scale: 0.0, holds: r.holds };
            trial(check, Vec::new())
        }
    }
}

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Runs `trials` randomized checks of `lemma` at exponent `p`. Trial `k` uses
/// its own generator seeded from the `k`-th output of the seed's stream.
pub fn run_trials(lemma: Lemma, p: f64, trials: usize, seed: u64) -> Result<LemmaRow> {
    check_p(p, 1.0)?;
    let ctx = match lemma {
        Lemma::Sigma | Lemma::Picone => Some(trial_context(p)?),
        _ => None,
    };
    if lemma == Lemma::CpI {
        calibrate_cp(p, CP_SAMPLES);
    }
    let outcomes: Vec<Option<Trial>> = (0..trials)
        .into_par_iter()
        .map(|k| {
            let mut rng = SplitMix64::new(SplitMix64::new(seed.wrapping_add(GAMMA.wrapping_mul(k as u64))).next_u64());
            one_trial(lemma, p, ctx.as_ref(), &mut rng, k % 10 == 0)
        })
        .collect::<Result<_>>()?;
    let mut row = LemmaRow {
        lemma,
        p,
        trials,
        violations: 0,
        max_defect: f64::NEG_INFINITY,
        equality_error: 0.0,
        worst: None,
    };
    let mut worst = f64::NEG_INFINITY;
    for t in outcomes.into_iter().flatten() {
        let d = t.check.defect();
        row.max_defect = row.max_defect.max(d);
        if t.equality {
            row.equality_error = row.equality_error.max(d.abs());
        }
        if !t.check.holds {
            row.violations += 1;
            if d > worst {
                worst = d;
                row.worst = Some(t.input);
            }
        }
    }
    if !row.max_defect.is_finite() {
        row.max_defect = 0.0;
    }
    Ok(row)
}
