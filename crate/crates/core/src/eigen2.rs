//! Second eigenvalue by the mountain-pass characterization: a string of
//! points on the unit L^p sphere joining -φ1 to φ1 is relaxed until its
//! highest Rayleigh value stops dropping. The top node is then polished by
//! minimizing the eigen-residual.
//!
//! Also here: the explicit paths through `u⁺` and `u⁻`, nodal-domain
//! analysis and the two-ball test set.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eigen1::{lobpcg_p2, solve_lambda1, EigenResult, SolverParams};
use crate::energy::EnergyContext;
use crate::error::{Error, Result};
use crate::grid::{split_signs, Domain, Field};
use crate::lemmas::cp_part_ii;
use crate::precond::{minres, Preconditioner};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StringParams {
    /// Number of nodes K (odd, ≥ 9).
    pub nodes: usize,
    /// Relative drop of the path maximum over `window` sweeps below which the
    /// string counts as converged.
    pub tol: f64,
    pub window: usize,
    pub max_sweeps: usize,
    /// Target for the residual of the polished eigenpair, relative to λ.
    pub polish_tol: f64,
    pub polish_max_iter: usize,
}

impl Default for StringParams {
    fn default() -> Self {
        Self { nodes: 33, tol: 1e-7, window: 50, max_sweeps: 2000, polish_tol: 1e-9, polish_max_iter: 3000 }
    }
}

/// A discrete path in the unit L^p sphere; endpoints are `-φ1` and `φ1`.
#[derive(Debug, Clone)]
pub struct PathState {
    domain: Arc<Domain>,
    nodes: Vec<Vec<f64>>,
}

impl PathState {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Mask values of each node.
    pub fn nodes(&self) -> &[Vec<f64>] {
        &self.nodes
    }

    pub fn node(&self, k: usize) -> Field {
        Field::from_masked(&self.domain, &self.nodes[k]).expect("node of matching length")
    }

    pub fn rayleigh_values(&self, ctx: &EnergyContext) -> Result<Vec<f64>> {
        self.nodes.iter().map(|u| ctx.rayleigh_c(u)).collect()
    }

    /// Writes `node_XXX.csv` files and `manifest.json` into `dir`.
    pub fn dump(&self, ctx: &EnergyContext, dir: &Path, sweep: usize) -> Result<()> {
        fs::create_dir_all(dir)?;
        let values = self.rayleigh_values(ctx)?;
        for k in 0..self.len() {
            let file = fs::File::create(dir.join(format!("node_{k:03}.csv")))?;
            self.node(k).write_csv(std::io::BufWriter::new(file))?;
        }
        let (argmax, max) = path_max(&values);
        let manifest = serde_json::json!({
            "sweep": sweep,
            "max_rayleigh": max,
            "argmax_index": argmax,
            "rayleigh": values,
        });
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }
}

/// Index (lowest among near-ties) and value of the path maximum.
fn path_max(values: &[f64]) -> (usize, f64) {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let slack = 1e-14 * max.abs();
    let idx = values.iter().position(|&v| v >= max - slack).unwrap_or(0);
    (idx, max)
}

fn lp_normalized(u: &[f64], p: f64, hn: f64) -> Option<Vec<f64>> {
    let s: f64 = u.iter().map(|v| v.abs().powf(p)).sum::<f64>() * hn;
    if !(s > 1e-28) || !s.is_finite() {
        return None;
    }
    let inv = s.powf(-1.0 / p);
    Some(u.iter().map(|v| v * inv).collect())
}

/// Samples `γ(t) = (tφ1 + (1-|t|)φ)/‖·‖` at `K` uniform `t ∈ [-1, 1]`.
/// The endpoints are copies of `∓φ1`.
pub fn initial_path(phi1: &Field, probe: &Field, k: usize, p: f64) -> Result<PathState> {
    if k < 9 || k % 2 == 0 {
        return Err(Error::BadParameter(format!("path needs an odd number of nodes >= 9, got {k}")));
    }
    if !phi1.same_domain(probe) {
        return Err(Error::GridMismatch);
    }
    let hn = phi1.grid().cell_volume();
    let phi = phi1.masked_values();
    let pr = lp_normalized(&probe.masked_values(), p, hn).ok_or(Error::DegenerateProbe)?;
    let dist = |sign: f64| {
        let d: Vec<f64> = pr.iter().zip(&phi).map(|(a, b)| a - sign * b).collect();
        (d.iter().map(|v| v.abs().powf(p)).sum::<f64>() * hn).powf(1.0 / p)
    };
    if dist(1.0).min(dist(-1.0)) <= 1e-3 {
        return Err(Error::DegenerateProbe);
    }
    let mut nodes = Vec::with_capacity(k);
    for i in 0..k {
        let t = -1.0 + 2.0 * i as f64 / (k - 1) as f64;
        let node = if i == 0 {
            phi.iter().map(|v| -v).collect()
        } else if i == k - 1 {
            phi.clone()
        } else if 2 * i == k - 1 {
            pr.clone()
        } else {
            let raw: Vec<f64> = phi.iter().zip(&pr).map(|(a, b)| t * a + (1.0 - t.abs()) * b).collect();
            lp_normalized(&raw, p, hn).ok_or(Error::DegenerateProbe)?
        };
        nodes.push(node);
    }
    Ok(PathState { domain: Arc::clone(phi1.domain()), nodes })
}

/// Antisymmetric probe `(x - x̄) φ1`, with `x̄` the first coordinate of the
/// mask centroid.
pub fn default_probe(phi1: &Field) -> Field {
    let c = phi1.domain().centroid();
    let grid = phi1.grid();
    let values = phi1
        .values()
        .iter()
        .enumerate()
        .map(|(i, &v)| (grid.center(i)[0] - c[0]) * v)
        .collect();
    Field::from_values(phi1.domain(), values).expect("probe inherits the mask")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// The path maximum dropped by less than `tol` over `window` sweeps.
    Stagnated,
    /// Every step, down to a negligible length, raised the maximum of the
    /// reparametrized path.
    NoAdmissibleStep,
    MaxSweeps,
}

#[derive(Debug, Clone)]
pub struct MinimaxResult {
    /// Polished eigenpair.
    pub eigen: EigenResult,
    /// Highest Rayleigh value on the relaxed path. Node values only: with few
    /// nodes the pass can fall between two of them, so this may undercut λ2.
    pub path_max: f64,
    pub argmax: usize,
    pub sweeps: usize,
    pub stop: StopReason,
    /// Path maximum after every sweep (index 0 is the initial path).
    pub history: Vec<f64>,
    pub path: PathState,
}

fn polish_preconditioner(ctx: &EnergyContext, u: &[f64]) -> Result<Preconditioner> {
    if ctx.p() >= 2.0 {
        Preconditioner::laplacian(ctx)
    } else {
        Preconditioner::linearized(ctx, u)
    }
}

/// One preconditioned descent step of an interior node with the component
/// along the local path tangent removed (in the metric of `P`).
fn descend_node(
    ctx: &EnergyContext,
    pc: &Preconditioner,
    u: &[f64],
    lambda: f64,
    tangent: &[f64],
    max_len: f64,
    params: &SolverParams,
) -> Option<(Vec<f64>, f64)> {
    let p = ctx.p();
    let r = ctx.residual_vec_c(u, lambda);
    let z = pc.apply(&r);
    let pt = pc.mul(tangent);
    let tpt: f64 = tangent.iter().zip(&pt).map(|(a, b)| a * b).sum();
    let coef = if tpt > 0.0 { r.iter().zip(tangent).map(|(a, b)| a * b).sum::<f64>() / tpt } else { 0.0 };
    let d: Vec<f64> = z.iter().zip(tangent).map(|(zi, ti)| -zi + coef * ti).collect();
    let slope = p * ctx.dot_c(&r, &d);
    if !(slope < 0.0) {
        return None;
    }
    // a node may not move further than half the distance to its neighbours,
    // otherwise it can hop over the saddle into the basin of ±φ1
    let dn = ctx.dot_c(&d, &d).sqrt();
    let mut tau = params.initial_step.min(0.5 * max_len / dn);
    let mut trial = vec![0.0; u.len()];
    while tau > 1e-12 * params.initial_step {
        for ((t, ui), di) in trial.iter_mut().zip(u).zip(&d) {
            *t = ui + tau * di;
        }
        if ctx.normalize_c(&mut trial).is_ok() {
            let value = ctx.energy_c(&trial);
            if value <= lambda + params.armijo * tau * slope {
                return Some((trial, value));
            }
        }
        tau *= params.shrink;
    }
    None
}

const MIN_STEP_SCALE: f64 = 1e-6;

fn l2_dist(ctx: &EnergyContext, a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    ctx.dot_c(&d, &d).sqrt()
}

/// Redistributes nodes to equal L² arc length on either side of the top
/// node `pin`, which is kept as is. Each side gets a share of the nodes
/// proportional to its length. Interpolating across the top would shave the
/// saddle off and leave a path that is rejected forever after.
fn reparametrize(ctx: &EnergyContext, nodes: &[Vec<f64>], pin: usize) -> Result<Vec<Vec<f64>>> {
    let k = nodes.len();
    let mut cum = vec![0.0; k];
    for i in 1..k {
        let len = l2_dist(ctx, &nodes[i], &nodes[i - 1]);
        if len < 1e-12 {
            return Err(Error::CollapsedPath { distance: len });
        }
        cum[i] = cum[i - 1] + len;
    }
    let total = cum[k - 1];
    let new_pin = if pin == 0 || pin == k - 1 {
        None
    } else {
        Some(((cum[pin] / total * (k - 1) as f64).round() as usize).clamp(1, k - 2))
    };
    // (output range, source node range) per piece
    let pieces = match new_pin {
        Some(j) => vec![(0, j, 0, pin), (j, k - 1, pin, k - 1)],
        None => vec![(0, k - 1, 0, k - 1)],
    };
    let mut out = vec![Vec::new(); k];
    for (o0, o1, s0, s1) in pieces {
        out[o0] = nodes[s0].clone();
        out[o1] = nodes[s1].clone();
        let mut seg = s0;
        for j in o0 + 1..o1 {
            let target = cum[s0] + (cum[s1] - cum[s0]) * (j - o0) as f64 / (o1 - o0) as f64;
            while seg + 1 < s1 && cum[seg + 1] < target {
                seg += 1;
            }
            let a = ((target - cum[seg]) / (cum[seg + 1] - cum[seg])).clamp(0.0, 1.0);
            let mut v: Vec<f64> = nodes[seg].iter().zip(&nodes[seg + 1]).map(|(x, y)| (1.0 - a) * x + a * y).collect();
            ctx.normalize_c(&mut v)?;
            out[j] = v;
        }
    }
    Ok(out)
}

/// String-method minimax between the endpoints of `path0`, followed by
/// residual polishing of the top node.
pub fn minimax_lambda2(
    ctx: &EnergyContext,
    params: &SolverParams,
    string: &StringParams,
    path0: PathState,
) -> Result<MinimaxResult> {
    params.validate()?;
    let k = path0.len();
    if k < 9 || k % 2 == 0 {
        return Err(Error::BadParameter(format!("path needs an odd number of nodes >= 9, got {k}")));
    }
    if !(Arc::ptr_eq(&path0.domain, ctx.domain()) || *path0.domain == **ctx.domain()) {
        return Err(Error::GridMismatch);
    }
    let mut nodes = path0.nodes;
    let mut values: Vec<f64> = nodes.iter().map(|u| ctx.energy_c(u)).collect();
    let (_, mut top) = path_max(&values);
    let mut history = vec![top];
    // The linearized stencil degenerates on the zero set of a node when
    // p > 2 and lets nodes hop off the saddle; the fixed p = 2 stencil is a
    // uniformly good metric for the string. The polish picks its own.
    let pc = Preconditioner::laplacian(ctx)?;
    let mut stop = StopReason::MaxSweeps;
    let mut sweeps = 0;
    // Nodes descend independently, so a large step can carry the path
    // through the pass between two nodes. The reparametrized path exposes
    // that as a higher maximum; such a sweep is redone with shorter steps.
    let mut scale = 1.0f64;
    while sweeps < string.max_sweeps {
        sweeps += 1;
        let mut trial = None;
        while scale >= MIN_STEP_SCALE {
            let updates: Vec<Option<(Vec<f64>, f64)>> = (1..k - 1)
                .into_par_iter()
                .map(|i| {
                    let tangent: Vec<f64> = nodes[i + 1].iter().zip(&nodes[i - 1]).map(|(a, b)| a - b).collect();
                    let gap = l2_dist(ctx, &nodes[i], &nodes[i - 1]).min(l2_dist(ctx, &nodes[i], &nodes[i + 1]));
                    descend_node(ctx, &pc, &nodes[i], values[i], &tangent, scale * gap, params)
                })
                .collect();
            let mut moved = nodes.clone();
            let mut moved_values = values.clone();
            for (i, up) in updates.into_iter().enumerate() {
                if let Some((u, v)) = up {
                    moved[i + 1] = u;
                    moved_values[i + 1] = v;
                }
            }
            let (pin, _) = path_max(&moved_values);
            let moved = reparametrize(ctx, &moved, pin)?;
            let moved_values: Vec<f64> = moved.iter().map(|u| ctx.energy_c(u)).collect();
            if path_max(&moved_values).1 <= top * (1.0 + 1e-12) {
                trial = Some((moved, moved_values));
                break;
            }
            scale *= 0.5;
        }
        let Some((moved, moved_values)) = trial else {
            stop = StopReason::NoAdmissibleStep;
            history.push(top);
            break;
        };
        scale = (2.0 * scale).min(1.0);
        nodes = moved;
        values = moved_values;
        let (_, t) = path_max(&values);
        assert!(t <= top * (1.0 + 1e-12), "path maximum increased: {top} -> {t}");
        top = t;
        history.push(top);

        if sweeps >= string.window {
            let old = history[sweeps - string.window];
            if old - top <= string.tol * top {
                stop = StopReason::Stagnated;
                break;
            }
        }
    }
    let (argmax, top) = path_max(&values);

    let mut polished = polish(ctx, &nodes[argmax], string)?;
    if !polished.converged && ctx.p() == 2.0 {
        // Gauss-Newton stalls when λ1 is nearly degenerate with λ2; at p = 2
        // the minimax level is λ2, which a block of two resolves directly
        polished = block_polish(ctx, &nodes[0], &polished, string)?.unwrap_or(polished);
    }
    let eigen = EigenResult {
        lambda: polished.lambda,
        residual: polished.residual,
        eigenfunction: ctx.field(&polished.u),
        iterations: sweeps + polished.iterations,
        converged: stop != StopReason::MaxSweeps && polished.converged,
    };
    Ok(MinimaxResult {
        eigen,
        path_max: top,
        argmax,
        sweeps,
        stop,
        history,
        path: PathState { domain: Arc::clone(ctx.domain()), nodes },
    })
}

/// λ1 and the minimax λ2, starting from the default probe path.
pub fn solve_lambda2(ctx: &EnergyContext, params: &SolverParams, string: &StringParams) -> Result<(EigenResult, MinimaxResult)> {
    let e1 = solve_lambda1(ctx, params)?.require_converged()?;
    let probe = default_probe(&e1.eigenfunction);
    let path = initial_path(&e1.eigenfunction, &probe, string.nodes, ctx.p())?;
    let m = minimax_lambda2(ctx, params, string, path)?;
    Ok((e1, m))
}

pub(crate) struct Polished {
    pub u: Vec<f64>,
    pub lambda: f64,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Scale-invariant preconditioned residual `ρ(u) / S(u)^{2(p-1)/p}` with
/// `ρ = rᵀ P⁻¹ r h^N`, and its gradient. `u` must be normalized.
fn residual_objective(ctx: &EnergyContext, pc: &Preconditioner, u: &[f64]) -> (f64, Vec<f64>, f64) {
    let p = ctx.p();
    let hn = ctx.cell_volume();
    let pow = ctx.power();
    let lambda = ctx.energy_c(u);
    let r = ctx.residual_vec_c(u, lambda);
    let z = pc.apply(&r);
    let rho = hn * r.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>();
    let mut hz = vec![0.0; u.len()];
    ctx.hess_c(u, &z, &mut hz);
    let psi_z: f64 = u.iter().zip(&z).map(|(&ui, zi)| pow.psi(ui) * zi).sum();
    let q = 2.0 * (p - 1.0) / p;
    let grad = (0..u.len())
        .map(|i| {
            let drho = 2.0
                * hn
                * (hz[i] - lambda * (p - 1.0) * pow.weight(u[i]) * z[i] - p * hn * psi_z * r[i]);
            drho - q * rho * p * hn * pow.psi(u[i])
        })
        .collect();
    (rho, grad, lambda)
}

/// Preconditioned nonlinear conjugate gradients on the residual objective.
pub(crate) fn polish(ctx: &EnergyContext, u0: &[f64], string: &StringParams) -> Result<Polished> {
    let mut u = u0.to_vec();
    ctx.normalize_c(&mut u)?;
    let mut pc = polish_preconditioner(ctx, &u)?;
    let mut iterations = 0;
    let mut converged = false;
    let mut prev: Option<(Vec<f64>, Vec<f64>, Vec<f64>)> = None; // (grad, precond grad, direction)
    let mut stalls = 0;
    let pow = ctx.power();
    loop {
        let lambda = ctx.energy_c(&u);
        let residual = ctx.residual_c(&u, lambda);
        if residual <= string.polish_tol * lambda.max(1.0) {
            converged = true;
            break;
        }
        if iterations >= string.polish_max_iter || stalls >= 3 {
            break;
        }
        iterations += 1;
        if ctx.p() != 2.0 && iterations % 10 == 0 {
            pc = polish_preconditioner(ctx, &u)?;
            prev = None;
        }
        let (f, g, _) = residual_objective(ctx, &pc, &u);

        let pg = pc.apply(&g);
        // Gauss-Newton direction: an inexact solve of the linearized
        // residual equation K δ = -r, K = ∂L(u) - λ(p-1)|u|^{p-2}
        let newton = {
            let lam = ctx.energy_c(&u);
            let r = ctx.residual_vec_c(&u, lam);
            let rhs: Vec<f64> = r.iter().map(|x| -x).collect();
            let op = |z: &[f64]| {
                let mut out = vec![0.0; z.len()];
                ctx.hess_c(&u, z, &mut out);
                for ((o, &ui), zi) in out.iter_mut().zip(&u).zip(z) {
                    *o -= lam * (ctx.p() - 1.0) * pow.weight(ui) * zi;
                }
                out
            };
            minres(op, &pc, &rhs, 1e-3, 200)
        };
        let newton_slope: f64 = g.iter().zip(&newton).map(|(a, b)| a * b).sum();
        let mut d: Vec<f64>;
        if newton_slope < 0.0 && newton.iter().all(|x| x.is_finite()) {
            d = newton;
            prev = None;
        } else {
            d = pg.iter().map(|x| -x).collect();
            if let Some((g0, pg0, d0)) = &prev {
                let num: f64 = g.iter().zip(pg.iter().zip(pg0)).map(|(gi, (a, b))| gi * (a - b)).sum();
                let den: f64 = g0.iter().zip(pg0).map(|(a, b)| a * b).sum();
                let beta = (num / den).max(0.0);
                if beta.is_finite() {
                    d.iter_mut().zip(d0).for_each(|(di, d0i)| *di += beta * d0i);
                }
            }
        }
        let mut slope: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) {
            d = pg.iter().map(|x| -x).collect();
            slope = g.iter().zip(&d).map(|(a, b)| a * b).sum();
            if !(slope < 0.0) {
                break;
            }
        }
        let mut tau = 1.0;
        let mut accepted = None;
        let mut trial = vec![0.0; u.len()];
        for _ in 0..60 {
            for ((t, ui), di) in trial.iter_mut().zip(&u).zip(&d) {
                *t = ui + tau * di;
            }
            if ctx.normalize_c(&mut trial).is_ok() {
                let (ft, _, _) = residual_objective_value(ctx, &pc, &trial);
                if ft <= f + 1e-4 * tau * slope {
                    accepted = Some(ft);
                    break;
                }
            }
            tau *= 0.5;
        }
        match accepted {
            Some(ft) => {
                stalls = if f - ft <= 1e-15 * f { stalls + 1 } else { 0 };
                u.copy_from_slice(&trial);
                prev = Some((g, pg, d));
            }
            None => {
                if prev.is_none() {
                    break;
                }
                prev = None;
                stalls += 1;
            }
        }
    }
    if u.iter().sum::<f64>() < 0.0 {
        u.iter_mut().for_each(|v| *v = -*v);
    }
    let lambda = ctx.energy_c(&u);
    let residual = ctx.residual_c(&u, lambda);
    Ok(Polished { u, lambda, residual, iterations, converged })
}

fn block_polish(ctx: &EnergyContext, phi1: &[f64], from: &Polished, string: &StringParams) -> Result<Option<Polished>> {
    let pc = Preconditioner::laplacian(ctx)?;
    let ritz = lobpcg_p2(ctx, &pc, vec![phi1.to_vec(), from.u.clone()], 2, string.polish_tol, string.polish_max_iter)?;
    let mut u = ritz.vectors[1].clone();
    ctx.normalize_c(&mut u)?;
    if u.iter().sum::<f64>() < 0.0 {
        u.iter_mut().for_each(|v| *v = -*v);
    }
    let lambda = ctx.energy_c(&u);
    let residual = ctx.residual_c(&u, lambda);
    if !(residual < from.residual) {
        return Ok(None);
    }
    let converged = residual <= string.polish_tol * lambda.max(1.0);
    Ok(Some(Polished { u, lambda, residual, iterations: from.iterations + ritz.iterations, converged }))
}

fn residual_objective_value(ctx: &EnergyContext, pc: &Preconditioner, u: &[f64]) -> (f64, f64, ()) {
    let lambda = ctx.energy_c(u);
    let r = ctx.residual_vec_c(u, lambda);
    let z = pc.apply(&r);
    let rho = ctx.cell_volume() * r.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>();
    (rho, lambda, ())
}

/// The three paths through `u⁺`, `u⁻` used to bound the mountain-pass level:
/// `γ1(t) = u⁺ - (1-t)u⁻`, `γ2(t) = ((1-t)(u⁺)^p + t(u⁻)^p)^{1/p}`,
/// `γ3(t) = (1-t)u⁺ - u⁻`, each normalized, sampled at uniform `t ∈ [0, 1]`.
#[derive(Debug, Clone)]
pub struct SignSplitPaths {
    pub gamma1: Vec<Field>,
    pub gamma2: Vec<Field>,
    pub gamma3: Vec<Field>,
}

pub fn sign_split_paths(u: &Field, p: f64, samples: usize) -> Result<SignSplitPaths> {
    if samples < 2 {
        return Err(Error::BadParameter("need at least two samples".into()));
    }
    let s = split_signs(u);
    if s.plus.values().iter().all(|&v| v == 0.0) || s.minus.values().iter().all(|&v| v == 0.0) {
        return Err(Error::NotSignChanging);
    }
    let (up, um) = (s.plus.values(), s.minus.values());
    let build = |f: &dyn Fn(f64, f64, f64) -> f64| -> Result<Vec<Field>> {
        (0..samples)
            .map(|k| {
                let t = k as f64 / (samples - 1) as f64;
                let vals = up.iter().zip(um).map(|(&a, &b)| f(t, a, b)).collect();
                Field::from_values(u.domain(), vals)?.normalize(p)
            })
            .collect()
    };
    Ok(SignSplitPaths {
        gamma1: build(&|t, a, b| a - (1.0 - t) * b)?,
        gamma2: build(&|t, a, b| ((1.0 - t) * a.powf(p) + t * b.powf(p)).powf(1.0 / p))?,
        gamma3: build(&|t, a, b| (1.0 - t) * a - b)?,
    })
}

/// Highest Rayleigh value along each of the three paths.
pub fn sign_split_levels(ctx: &EnergyContext, paths: &SignSplitPaths) -> Result<[f64; 3]> {
    let top = |g: &[Field]| -> Result<f64> {
        g.iter().try_fold(f64::NEG_INFINITY, |m, f| Ok(m.max(ctx.rayleigh(f)?)))
    };
    Ok([top(&paths.gamma1)?, top(&paths.gamma2)?, top(&paths.gamma3)?])
}

#[derive(Debug, Clone, Serialize)]
pub struct NodalReport {
    pub lambda: f64,
    pub lambda1_plus: f64,
    pub lambda1_minus: f64,
    pub margins: [f64; 2],
    /// Kernel pairs `(u_i, u_j)` of opposite sign fed to the part (ii)
    /// inequality of the c_p lemma, and the smallest relative slack seen.
    pub cp_pairs: usize,
    pub cp_min_slack: f64,
}

impl NodalReport {
    pub fn min_margin(&self) -> f64 {
        self.margins[0].min(self.margins[1])
    }
}

/// Compares λ with the first eigenvalues of the positivity and negativity
/// sets of its eigenfunction `u`.
pub fn nodal_analysis(ctx: &EnergyContext, params: &SolverParams, u: &Field, lambda: f64) -> Result<NodalReport> {
    let residual = ctx.residual(u, lambda)?;
    if !(residual < 1e-6) {
        return Err(Error::ResidualTooLarge { residual, limit: 1e-6 });
    }
    let s = split_signs(u);
    if !s.plus_mask.iter().any(|&m| m) || !s.minus_mask.iter().any(|&m| m) {
        return Err(Error::NotSignChanging);
    }
    // Dirichlet point of a nodal face at the interpolated zero, θh from the
    // active cell; θ = 1/2 gives the usual boundary-face scaling. Locally u±
    // then solves the restricted equation exactly (1D, or any dimension at
    // p = 2), so the margin is carried by the kernel alone.
    let vals = u.values();
    let exponent = -(ctx.p() - 1.0) / ctx.p();
    let interface = |c: usize, n: usize| {
        let theta = vals[c] / (vals[c] - vals[n]);
        theta.powf(exponent)
    };
    let sub = |mask: Vec<bool>| -> Result<f64> {
        Ok(solve_lambda1(&ctx.restricted(mask, interface)?, params)?.require_converged()?.lambda)
    };
    let lp = sub(s.plus_mask)?;
    let lm = sub(s.minus_mask)?;
    let uc = ctx.compact(u)?;
    let (mut cp_pairs, mut cp_min_slack) = (0, f64::INFINITY);
    for i in 0..uc.len() {
        let (row, _) = ctx.kernel_row(i);
        for (j, _) in row {
            if uc[i] * uc[j] <= 0.0 {
                if let Some(c) = cp_part_ii(uc[i], uc[j], ctx.p())? {
                    cp_pairs += 1;
                    cp_min_slack = cp_min_slack.min(-c.defect());
                }
            }
        }
    }
    Ok(NodalReport {
        lambda,
        lambda1_plus: lp,
        lambda1_minus: lm,
        margins: [lambda - lp, lambda - lm],
        cp_pairs,
        cp_min_slack,
    })
}

/// Maximum of the Rayleigh quotient over
/// `f(θ) = |θ1|^{(2-p)/p}θ1 φ_s - |θ2|^{(2-p)/p}θ2 φ_t` on the p-circle,
/// with `φ_s, φ_t` the first eigenfunctions of the two components. This is
/// an upper bound for λ2 of the union.
pub fn two_ball_upper_bound(ctx: &EnergyContext, params: &SolverParams, theta_samples: usize) -> Result<f64> {
    let comps = ctx.domain().components();
    if comps.len() != 2 {
        return Err(Error::NotTwoComponent(comps.len()));
    }
    if theta_samples == 0 {
        return Err(Error::BadParameter("need at least one angle".into()));
    }
    let len = ctx.grid().len();
    let mut phis = Vec::with_capacity(2);
    for comp in &comps {
        let mut mask = vec![false; len];
        comp.iter().for_each(|&i| mask[i] = true);
        let d = Arc::new(ctx.domain().with_mask(mask)?);
        let sub_ctx = EnergyContext::new(d, ctx.kernel().clone(), ctx.p())?;
        let phi = solve_lambda1(&sub_ctx, params)?.require_converged()?.eigenfunction;
        // re-home onto the union's domain
        phis.push(ctx.compact(&Field::from_values(ctx.domain(), phi.values().to_vec())?)?);
    }
    let p = ctx.p();
    let e = (2.0 - p) / p;
    let coef = |x: f64| if x == 0.0 { 0.0 } else { x.abs().powf(e) * x };
    let values: Vec<f64> = (0..theta_samples)
        .into_par_iter()
        .map(|k| {
            let ang = 2.0 * std::f64::consts::PI * k as f64 / theta_samples as f64;
            let (c, s) = (ang.cos(), ang.sin());
            let n = (c.abs().powf(p) + s.abs().powf(p)).powf(1.0 / p);
            let (a, b) = (coef(c / n), coef(s / n));
            let f: Vec<f64> = phis[0].iter().zip(&phis[1]).map(|(x, y)| a * x - b * y).collect();
            ctx.rayleigh_c(&f).unwrap_or(f64::NEG_INFINITY)
        })
        .collect();
    Ok(values.into_iter().fold(f64::NEG_INFINITY, f64::max))
}
