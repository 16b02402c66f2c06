//! Shape experiments at desk scale: Faber–Krahn, Hong–Krahn–Szegő, two
//! drifting balls, the kernel-weight sweep of the nodal margins and the
//! Pólya–Szegő refinement study. Each produces [`ExperimentRow`]s plus a
//! report with the verdict.
//!
//! Rows within one experiment are computed concurrently and merged in
//! config order; every solver run is deterministic, so the CSV is
//! byte-identical across runs as long as timings are left out.

use std::fmt::Write as _;
use std::io::{self, Write};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eigen1::{dense_oracle_p2, solve_lambda1, SolverParams};
use crate::eigen2::{nodal_analysis, solve_lambda2, two_ball_upper_bound, StringParams};
use crate::energy::{Discretization, EnergyContext};
use crate::error::{Error, Result};
use crate::grid::{build_domain_with_spacing, BallParams, Domain, DomainSpec, Field};
use crate::kernel::KernelSpec;
use crate::rearrange::polya_szego_check;
use crate::rng::SplitMix64;

pub const CSV_HEADER: &str = "experiment,domain,p,kernel,n,lambda1,lambda2,oracle1,oracle2,margin,seconds";

/// Largest mask the dense p = 2 oracle is asked to handle inside experiments.
const ORACLE_CELLS: usize = 2500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub experiment: String,
    pub domain: String,
    pub p: f64,
    pub kernel: String,
    pub n: usize,
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub oracle1: Option<f64>,
    pub oracle2: Option<f64>,
    pub margin: Option<f64>,
    pub seconds: Option<f64>,
}

impl ExperimentRow {
    fn new(experiment: &str, domain: String, ctx: &EnergyContext, n: usize) -> Self {
        Self {
            experiment: experiment.into(),
            domain,
            p: ctx.p(),
            kernel: ctx.kernel().descriptor(),
            n,
            lambda1: None,
            lambda2: None,
            oracle1: None,
            oracle2: None,
            margin: None,
            seconds: None,
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

/// Writes the rows under [`CSV_HEADER`]. The `seconds` column stays empty
/// unless `timings` is set.
pub fn write_csv<W: Write>(rows: &[ExperimentRow], timings: bool, mut w: W) -> io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.experiment,
            r.domain,
            r.p,
            r.kernel,
            r.n,
            opt(r.lambda1),
            opt(r.lambda2),
            opt(r.oracle1),
            opt(r.oracle2),
            opt(r.margin),
            if timings { opt(r.seconds) } else { String::new() },
        )?;
    }
    Ok(())
}

/// Kernel, exponent and solver settings shared by all rows of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Setup {
    pub kernel: KernelSpec,
    pub p: f64,
    pub solver: SolverParams,
    pub string: StringParams,
}

impl Default for Setup {
    fn default() -> Self {
        Self { kernel: KernelSpec::tent(0.2), p: 2.0, solver: SolverParams::default(), string: StringParams::default() }
    }
}

impl Setup {
    pub fn new(kernel: KernelSpec, p: f64) -> Self {
        Self { kernel, p, ..Self::default() }
    }

    fn context(&self, domain: Domain) -> Result<EnergyContext> {
        Discretization::new(self.kernel.clone(), self.p, 0).on(Arc::new(domain))
    }

    fn at_spacing(&self, spec: &DomainSpec, h: f64) -> Result<EnergyContext> {
        self.context(build_domain_with_spacing(spec, h, self.kernel.support_radius())?)
    }

    fn require_decreasing(&self, dim: usize) -> Result<()> {
        if self.kernel.build(dim)?.is_decreasing() {
            Ok(())
        } else {
            Err(Error::KernelNotDecreasing)
        }
    }

    fn require_p2(&self) -> Result<()> {
        if self.p >= 2.0 {
            Ok(())
        } else {
            Err(Error::BadParameter(format!("shape experiments need p >= 2, got {}", self.p)))
        }
    }
}

fn lambda1_of(ctx: &EnergyContext, setup: &Setup) -> Result<f64> {
    Ok(solve_lambda1(ctx, &setup.solver)?.require_converged()?.lambda)
}

fn oracle(ctx: &EnergyContext) -> Option<(f64, f64)> {
    if ctx.p() == 2.0 && ctx.len() <= ORACLE_CELLS {
        dense_oracle_p2(ctx).ok().map(|o| (o.lambda1, o.lambda2))
    } else {
        None
    }
}

/// Ball (interval in 1D) of the given measure centered at the origin.
pub fn ball_of_measure(dim: usize, measure: f64) -> DomainSpec {
    if dim == 1 {
        DomainSpec::interval(-0.5 * measure, 0.5 * measure)
    } else {
        DomainSpec::ball(&[0.0, 0.0], (measure / std::f64::consts::PI).sqrt())
    }
}

fn is_ball(spec: &DomainSpec) -> bool {
    matches!(spec, DomainSpec::Ball { .. } | DomainSpec::Interval { .. })
}

fn extent(spec: &DomainSpec) -> f64 {
    match spec {
        DomainSpec::Interval { a, b } => b - a,
        DomainSpec::Ball { radius, .. } => 2.0 * radius,
        _ => unreachable!("extent is only taken of balls"),
    }
}

// ---------------------------------------------------------------------------
// Faber–Krahn

#[derive(Debug, Clone, Serialize)]
pub struct FaberKrahnReport {
    pub rows: Vec<ExperimentRow>,
    /// λ1 per resolution (outer) and shape (inner), shapes in input order.
    pub lambda1: Vec<Vec<f64>>,
    /// Per resolution: smallest λ1(shape) - λ1(ball) over the other shapes.
    pub margins: Vec<f64>,
    /// Per shape: |λ1 at the coarsest - λ1 at the finest resolution|.
    pub richardson: Vec<f64>,
    pub ball_minimal: bool,
    /// Every margin beats the discretization-error estimate of its pair.
    pub margin_exceeds_error: bool,
    pub passed: bool,
}

/// λ1 over a family of equal-measure shapes, the ball first. All shapes of
/// one resolution share the spacing `h = diam(ball) / n`, so the comparison
/// is not biased by different grids.
pub fn faber_krahn_sweep(shapes: &[DomainSpec], setup: &Setup, resolutions: &[usize]) -> Result<FaberKrahnReport> {
    let ball = shapes.first().ok_or_else(|| Error::BadParameter("no shapes given".into()))?;
    if !is_ball(ball) {
        return Err(Error::BadParameter("the first shape must be the ball".into()));
    }
    if shapes.len() < 2 || resolutions.is_empty() {
        return Err(Error::BadParameter("need a ball, another shape and a resolution".into()));
    }
    setup.require_p2()?;
    setup.require_decreasing(ball.dim())?;
    let target = ball.exact_measure().expect("balls have a closed-form measure");
    for s in shapes {
        if s.dim() != ball.dim() {
            return Err(Error::BadParameter("shapes of different dimension".into()));
        }
        if let Some(m) = s.exact_measure() {
            if (m - target).abs() > 0.01 * target {
                return Err(Error::MeasureMismatch { realized: m, target });
            }
        }
    }
    let jobs: Vec<(usize, usize)> = (0..resolutions.len()).flat_map(|r| (0..shapes.len()).map(move |s| (r, s))).collect();
    let results: Vec<(ExperimentRow, f64)> = jobs
        .par_iter()
        .map(|&(r, s)| {
            let t0 = Instant::now();
            let n = resolutions[r];
            let ctx = setup.at_spacing(&shapes[s], extent(ball) / n as f64)?;
            let realized = ctx.domain().measure();
            if (realized - target).abs() > 0.01 * target {
                return Err(Error::MeasureMismatch { realized, target });
            }
            let l1 = lambda1_of(&ctx, setup)?;
            let mut row = ExperimentRow::new("faber_krahn", shapes[s].descriptor(), &ctx, n);
            row.lambda1 = Some(l1);
            row.oracle1 = oracle(&ctx).map(|o| o.0);
            row.seconds = Some(t0.elapsed().as_secs_f64());
            Ok((row, l1))
        })
        .collect::<Result<_>>()?;
    let ns = shapes.len();
    let lambda1: Vec<Vec<f64>> = results.chunks(ns).map(|c| c.iter().map(|x| x.1).collect()).collect();
    let mut rows: Vec<ExperimentRow> = results.into_iter().map(|x| x.0).collect();
    for (r, ls) in lambda1.iter().enumerate() {
        for s in 0..ns {
            rows[r * ns + s].margin = Some(ls[s] - ls[0]);
        }
    }
    let margins: Vec<f64> = lambda1.iter().map(|ls| ls[1..].iter().map(|l| l - ls[0]).fold(f64::INFINITY, f64::min)).collect();
    let last = lambda1.len() - 1;
    let richardson: Vec<f64> = (0..ns).map(|s| (lambda1[0][s] - lambda1[last][s]).abs()).collect();
    let ball_minimal = margins.iter().all(|&m| m > 0.0);
    let margin_exceeds_error = lambda1.len() >= 2
        && lambda1.iter().all(|ls| (1..ns).all(|s| ls[s] - ls[0] > richardson[0] + richardson[s]));
    Ok(FaberKrahnReport {
        rows,
        lambda1,
        margins,
        richardson,
        ball_minimal,
        margin_exceeds_error,
        passed: ball_minimal && (resolutions.len() < 2 || margin_exceeds_error),
    })
}

// ---------------------------------------------------------------------------
// Hong–Krahn–Szegő

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SplitPoint {
    pub ratio: f64,
    pub lambda1_first: f64,
    pub lambda1_second: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct HksReport {
    pub rows: Vec<ExperimentRow>,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda1_half_ball: f64,
    /// λ2(Ω) - λ1(B) with |B| = |Ω|/2.
    pub margin: f64,
    pub connected: bool,
    /// Disconnected Ω with components beyond kernel range: equality is the
    /// expected discrete outcome, not a violation.
    pub boundary_case: bool,
    pub split: Vec<SplitPoint>,
    /// Ratio where `max(λ1(B_r1), λ1(B_r2))` is smallest.
    pub split_argmin: Option<f64>,
    pub passed: bool,
}

/// λ2(Ω) against λ1 of a ball of half the measure, on the grid spacing of
/// Ω, and the sweep of `max(λ1(B_r1), λ1(B_r2))` over `|B_r1| = ratio |Ω|`.
pub fn hks_check(spec: &DomainSpec, setup: &Setup, resolution: usize, ratios: &[f64]) -> Result<HksReport> {
    setup.require_p2()?;
    setup.require_decreasing(spec.dim())?;
    if ratios.iter().any(|r| !(*r > 0.0 && *r < 1.0)) {
        return Err(Error::BadParameter("split ratios must lie in (0, 1)".into()));
    }
    let t0 = Instant::now();
    let ctx = Discretization::new(setup.kernel.clone(), setup.p, resolution).build(spec)?;
    let h = ctx.grid().h();
    let dim = spec.dim();
    let measure = ctx.domain().measure();
    let (e1, m) = solve_lambda2(&ctx, &setup.solver, &setup.string)?;
    if !m.eigen.converged {
        return Err(Error::NotConverged { iterations: m.eigen.iterations, best: m.eigen.lambda });
    }
    let lambda2 = m.eigen.lambda;
    let ball_l1 = |frac: f64| -> Result<f64> { lambda1_of(&setup.at_spacing(&ball_of_measure(dim, frac * measure), h)?, setup) };
    let half = ball_l1(0.5)?;
    let margin = lambda2 - half;
    let mut row = ExperimentRow::new("hks", spec.descriptor(), &ctx, resolution);
    row.lambda1 = Some(e1.lambda);
    row.lambda2 = Some(lambda2);
    if let Some((o1, o2)) = oracle(&ctx) {
        row.oracle1 = Some(o1);
        row.oracle2 = Some(o2);
    }
    row.margin = Some(margin);
    row.seconds = Some(t0.elapsed().as_secs_f64());

    let split: Vec<SplitPoint> = ratios
        .par_iter()
        .map(|&ratio| {
            let a = ball_l1(ratio)?;
            let b = ball_l1(1.0 - ratio)?;
            Ok(SplitPoint { ratio, lambda1_first: a, lambda1_second: b, max: a.max(b) })
        })
        .collect::<Result<_>>()?;
    let split_argmin = split.iter().min_by(|a, b| a.max.total_cmp(&b.max)).map(|s| s.ratio);
    let mut rows = vec![row];
    for s in &split {
        let mut r = ExperimentRow::new("hks_split", format!("split({})", s.ratio), &ctx, resolution);
        r.lambda1 = Some(s.max);
        r.margin = Some(lambda2 - s.max);
        rows.push(r);
    }
    let connected = ctx.domain().is_connected();
    let tol = 1e-6 * lambda2;
    let boundary_case = !connected && margin.abs() <= tol;
    let equal_split_best = split_argmin.map_or(true, |r| {
        let closest = ratios.iter().copied().min_by(|a, b| (a - 0.5).abs().total_cmp(&(b - 0.5).abs())).unwrap();
        r == closest
    });
    let strict = if connected { margin > 0.0 } else { margin > -tol };
    Ok(HksReport {
        rows,
        lambda1: e1.lambda,
        lambda2,
        lambda1_half_ball: half,
        margin,
        connected,
        boundary_case,
        split,
        split_argmin,
        passed: strict && equal_split_best,
    })
}

// ---------------------------------------------------------------------------
// two drifting balls

#[derive(Debug, Clone, Copy, Serialize)]
pub struct DriftPoint {
    /// Center distance after snapping to the lattice.
    pub separation: f64,
    /// `separation - 2R`.
    pub gap: f64,
    pub lambda2: f64,
    pub upper_bound: f64,
    pub oracle2: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DriftReport {
    pub rows: Vec<ExperimentRow>,
    pub lambda1_ball: f64,
    pub points: Vec<DriftPoint>,
    pub monotone: bool,
    /// `|λ2 - λ1(B_R)|` within tolerance wherever the gap exceeds the
    /// kernel radius.
    pub decoupled: bool,
    pub passed: bool,
}

/// Relative tolerance for monotonicity and decoupling.
pub const DRIFT_TOL: f64 = 1e-7;

/// `Ω = B_R(-s/2) ∪ B_R(s/2)` for each separation `s`, in dimension `dim`,
/// with `cells` cells across a ball. Separations are snapped to multiples of
/// `h = 2R / cells` so that both balls are the same set of cells at every
/// step.
pub fn drift_experiment(
    radius: f64,
    separations: &[f64],
    dim: usize,
    cells: usize,
    setup: &Setup,
) -> Result<DriftReport> {
    if !(1..=2).contains(&dim) || cells < 4 || !(radius > 0.0) {
        return Err(Error::BadParameter("drift needs dim 1 or 2, cells >= 4, R > 0".into()));
    }
    setup.require_p2()?;
    if separations.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::BadParameter("separations must increase".into()));
    }
    let h = 2.0 * radius / cells as f64;
    let snapped: Vec<f64> = separations.iter().map(|s| (s / h).round() * h).collect();
    if let Some(&s) = snapped.iter().find(|&&s| s <= 2.0 * radius) {
        return Err(Error::OverlapError { separation: s, diameter: 2.0 * radius });
    }
    if snapped.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::BadParameter("separations coincide after snapping to the grid".into()));
    }
    let spec_at = |s: f64| -> DomainSpec {
        if dim == 1 {
            DomainSpec::IntervalUnion { intervals: vec![[-0.5 * s - radius, -0.5 * s + radius], [0.5 * s - radius, 0.5 * s + radius]] }
        } else {
            let ball = |x: f64| BallParams { center: [x, 0.0], radius };
            DomainSpec::BallUnion { balls: vec![ball(-0.5 * s), ball(0.5 * s)] }
        }
    };
    let lambda1_ball = lambda1_of(&setup.at_spacing(&ball_of_measure(dim, spec_at(4.0 * radius).exact_measure().unwrap() / 2.0), h)?, setup)?;
    let results: Vec<(ExperimentRow, DriftPoint, f64)> = snapped
        .par_iter()
        .map(|&s| {
            let t0 = Instant::now();
            let spec = spec_at(s);
            let ctx = setup.at_spacing(&spec, h)?;
            // λ1 of one component on this very lattice
            let comps = ctx.domain().components();
            if comps.len() != 2 {
                return Err(Error::NotTwoComponent(comps.len()));
            }
            let mut mask = vec![false; ctx.grid().len()];
            comps[0].iter().for_each(|&i| mask[i] = true);
            let single = setup.context(ctx.domain().with_mask(mask)?)?;
            let l1_single = lambda1_of(&single, setup)?;
            let (e1, m) = solve_lambda2(&ctx, &setup.solver, &setup.string)?;
            if !m.eigen.converged {
                return Err(Error::NotConverged { iterations: m.eigen.iterations, best: m.eigen.lambda });
            }
            let upper_bound = two_ball_upper_bound(&ctx, &setup.solver, 720)?;
            let o = oracle(&ctx);
            let mut row = ExperimentRow::new("drift", spec.descriptor(), &ctx, cells);
            row.lambda1 = Some(e1.lambda);
            row.lambda2 = Some(m.eigen.lambda);
            row.oracle1 = o.map(|o| o.0);
            row.oracle2 = o.map(|o| o.1);
            row.margin = Some(m.eigen.lambda - l1_single);
            row.seconds = Some(t0.elapsed().as_secs_f64());
            let point = DriftPoint { separation: s, gap: s - 2.0 * radius, lambda2: m.eigen.lambda, upper_bound, oracle2: o.map(|o| o.1) };
            Ok((row, point, l1_single))
        })
        .collect::<Result<_>>()?;
    let reach = setup.kernel.support_radius();
    let mut rows = Vec::new();
    let mut points = Vec::new();
    let mut decoupled = true;
    for (row, point, l1_single) in results {
        if point.gap > reach {
            decoupled &= (point.lambda2 - l1_single).abs() <= DRIFT_TOL * l1_single;
        }
        rows.push(row);
        points.push(point);
    }
    let monotone = points.windows(2).all(|w| w[1].lambda2 <= w[0].lambda2 * (1.0 + DRIFT_TOL));
    Ok(DriftReport { rows, lambda1_ball, points, monotone, decoupled, passed: monotone && decoupled })
}

// ---------------------------------------------------------------------------
// nodal margins under a fading kernel

#[derive(Debug, Clone, Copy, Serialize)]
pub struct NodalPoint {
    pub weight: f64,
    pub lambda2: f64,
    pub lambda1_plus: f64,
    pub lambda1_minus: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct NodalSweepReport {
    pub rows: Vec<ExperimentRow>,
    pub points: Vec<NodalPoint>,
    /// Margins positive for every positive weight.
    pub positive: bool,
    /// Margins non-increasing along the sweep (weights given decreasing).
    pub monotone: bool,
    pub passed: bool,
}

/// Nodal-domain margins `λ2 - max(λ1(Ω⁺), λ1(Ω⁻))` with the kernel scaled
/// by each weight in turn.
pub fn nodal_weight_sweep(spec: &DomainSpec, setup: &Setup, resolution: usize, weights: &[f64]) -> Result<NodalSweepReport> {
    if weights.windows(2).any(|w| !(w[0] > w[1])) || weights.iter().any(|&w| w < 0.0) {
        return Err(Error::BadParameter("weights must be nonnegative and decreasing".into()));
    }
    let results: Vec<(ExperimentRow, NodalPoint)> = weights
        .par_iter()
        .map(|&weight| {
            let t0 = Instant::now();
            let kernel = setup.kernel.clone().with_weight(weight);
            let ctx = Discretization::new(kernel, setup.p, resolution).build(spec)?;
            let (e1, m) = solve_lambda2(&ctx, &setup.solver, &setup.string)?;
            if !m.eigen.converged {
                return Err(Error::NotConverged { iterations: m.eigen.iterations, best: m.eigen.lambda });
            }
            let rep = nodal_analysis(&ctx, &setup.solver, &m.eigen.eigenfunction, m.eigen.lambda)?;
            let margin = rep.min_margin();
            let mut row = ExperimentRow::new("nodal", spec.descriptor(), &ctx, resolution);
            row.lambda1 = Some(e1.lambda);
            row.lambda2 = Some(m.eigen.lambda);
            row.margin = Some(margin);
            row.seconds = Some(t0.elapsed().as_secs_f64());
            let point = NodalPoint {
                weight,
                lambda2: m.eigen.lambda,
                lambda1_plus: rep.lambda1_plus,
                lambda1_minus: rep.lambda1_minus,
                margin,
            };
            Ok((row, point))
        })
        .collect::<Result<_>>()?;
    let (rows, points): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let positive = points.iter().filter(|q| q.weight > 0.0).all(|q| q.margin > 0.0);
    let monotone = points.windows(2).all(|w| w[1].margin <= w[0].margin);
    Ok(NodalSweepReport { rows, points, positive, monotone, passed: positive && monotone })
}

// ---------------------------------------------------------------------------
// Pólya–Szegő under refinement

#[derive(Debug, Clone, Copy, Serialize)]
pub struct PolyaSzegoPoint {
    pub n: usize,
    pub trials: usize,
    /// Trials whose energy increase exceeds `tol_h`.
    pub violations: usize,
    /// Largest energy increase after rearrangement, relative to the energy
    /// before (0 when rearranging never increased it).
    pub max_defect: f64,
    /// Largest `tol_h / E(u)` among the trials.
    pub tol_h: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PolyaSzegoSweepReport {
    pub rows: Vec<ExperimentRow>,
    pub points: Vec<PolyaSzegoPoint>,
    pub decreasing: bool,
    pub passed: bool,
}

/// Random nonnegative field: a few random bumps plus noise of random size.
fn random_field(ctx: &EnergyContext, rng: &mut SplitMix64) -> Field {
    let bumps: Vec<[f64; 3]> = (0..1 + (rng.next_f64() * 4.0) as usize)
        .map(|_| [rng.uniform(0.0, 1.0), rng.uniform(0.02, 0.3), rng.uniform(0.1, 2.0)])
        .collect();
    let noise = rng.uniform(0.0, 0.5);
    let vals: Vec<f64> = ctx
        .cells()
        .iter()
        .map(|&c| {
            let x = ctx.grid().center(c)[0];
            let b: f64 = bumps.iter().map(|[m, w, a]| a * (-((x - m) / w).powi(2)).exp()).sum();
            b + noise * rng.next_f64()
        })
        .collect();
    ctx.field(&vals)
}

/// Pólya–Szegő on the unit interval at each resolution: `trials` random
/// nonnegative fields, rearranged and compared.
pub fn polya_szego_sweep(setup: &Setup, resolutions: &[usize], trials: usize, seed: u64) -> Result<PolyaSzegoSweepReport> {
    let spec = DomainSpec::interval(0.0, 1.0);
    let mut rows = Vec::new();
    let mut points = Vec::new();
    for &n in resolutions {
        let t0 = Instant::now();
        let ctx = Discretization::new(setup.kernel.clone(), setup.p, n).build(&spec)?;
        let outcomes: Vec<(bool, f64, f64)> = (0..trials)
            .into_par_iter()
            .map(|k| {
                let mut rng = SplitMix64::new(seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                let u = random_field(&ctx, &mut rng);
                let rep = polya_szego_check(&ctx, &u)?;
                let e = rep.energy_before.total;
                let inc = (rep.defect_local + rep.defect_nonlocal).max(0.0) / e;
                Ok((rep.holds, inc, rep.tol_h / e))
            })
            .collect::<Result<_>>()?;
        let point = PolyaSzegoPoint {
            n,
            trials,
            violations: outcomes.iter().filter(|o| !o.0).count(),
            max_defect: outcomes.iter().map(|o| o.1).fold(0.0, f64::max),
            tol_h: outcomes.iter().map(|o| o.2).fold(0.0, f64::max),
        };
        let mut row = ExperimentRow::new("polya_szego", spec.descriptor(), &ctx, n);
        row.margin = Some(point.tol_h - point.max_defect);
        row.seconds = Some(t0.elapsed().as_secs_f64());
        rows.push(row);
        points.push(point);
    }
    let decreasing = points.windows(2).all(|w| w[1].max_defect <= w[0].max_defect);
    let passed = decreasing && points.iter().all(|q| q.violations == 0);
    Ok(PolyaSzegoSweepReport { rows, points, decreasing, passed })
}

// ---------------------------------------------------------------------------
// SVG

/// Standalone single-series line chart, with an optional dashed horizontal
/// reference line.
pub fn svg_line_chart(title: &str, xlabel: &str, ylabel: &str, points: &[(f64, f64)], reference: Option<(f64, &str)>) -> String {
    let (w, h, m) = (640.0, 400.0, 60.0);
    let xs = points.iter().map(|p| p.0);
    let mut ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    if let Some((r, _)) = reference {
        ys.push(r);
    }
    let (x0, x1) = (xs.clone().fold(f64::INFINITY, f64::min), xs.fold(f64::NEG_INFINITY, f64::max));
    let (mut y0, mut y1) = (ys.iter().copied().fold(f64::INFINITY, f64::min), ys.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    if !(y1 > y0) {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let pad = 0.05 * (y1 - y0);
    let (y0, y1) = (y0 - pad, y1 + pad);
    let span_x = if x1 > x0 { x1 - x0 } else { 1.0 };
    let sx = |x: f64| m + (x - x0) / span_x * (w - 2.0 * m);
    let sy = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(s, r#"<line x1="{m}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, h - m, w - m, h - m);
    let _ = writeln!(s, r#"<line x1="{m}" y1="{m}" x2="{m}" y2="{}" stroke="black"/>"#, h - m);
    for k in 0..=4 {
        let fx = x0 + span_x * k as f64 / 4.0;
        let fy = y0 + (y1 - y0) * k as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{:.3}</text>"#, sx(fx), h - m + 18.0, fx);
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{:.4}</text>"#, m - 6.0, sy(fy) + 4.0, fy);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, w / 2.0, h - 16.0, escape(xlabel));
    let _ = writeln!(s, r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#, h / 2.0, h / 2.0, escape(ylabel));
    if let Some((r, label)) = reference {
        let _ = writeln!(s, r##"<line x1="{m}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#888" stroke-dasharray="6 4"/>"##, w - m, y = sy(r));
        let _ = writeln!(s, r##"<text x="{}" y="{:.2}" text-anchor="end" fill="#555">{}</text>"##, w - m, sy(r) - 6.0, escape(label));
    }
    let path: Vec<String> = points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
    let _ = writeln!(s, r##"<polyline fill="none" stroke="#1f5fa8" stroke-width="2" points="{}"/>"##, path.join(" "));
    for &(x, y) in points {
        let _ = writeln!(s, r##"<circle cx="{:.2}" cy="{:.2}" r="3" fill="#1f5fa8"/>"##, sx(x), sy(y));
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
