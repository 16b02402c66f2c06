//! Banded Cholesky preconditioners built from the local stencil.
//!
//! Mask cells are numbered in grid order, so the local stencil has half
//! bandwidth 1 in 1D and about one grid row in 2D; a dense band factorization
//! is cheap at desk scale. The nonlocal term is kept on the diagonal only: it is
//! a bounded perturbation of the local operator.

use crate::energy::EnergyContext;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct BandCholesky {
    m: usize,
    b: usize,
    l: Vec<f64>,
}

impl BandCholesky {
    /// Factors the SPD matrix given by its diagonal and symmetric off-diagonal
    /// entries `(i, j, value)` with `i > j`. Duplicates are summed.
    pub fn factor(diag: &[f64], lower: &[(usize, usize, f64)]) -> Result<Self> {
        let m = diag.len();
        let b = lower.iter().map(|&(i, j, _)| i - j).max().unwrap_or(0);
        let w = b + 1;
        let mut l = vec![0.0; m * w];
        for i in 0..m {
            l[i * w + b] = diag[i];
        }
        for &(i, j, v) in lower {
            l[i * w + (j + b - i)] += v;
        }
        for i in 0..m {
            let lo = i.saturating_sub(b);
            for j in lo..=i {
                let kmin = lo.max(j.saturating_sub(b));
                let mut s = l[i * w + (j + b - i)];
                for k in kmin..j {
                    s -= l[i * w + (k + b - i)] * l[j * w + (k + b - j)];
                }
                if j == i {
                    if !(s > 0.0) {
                        return Err(Error::BadParameter(format!(
                            "preconditioner not positive definite at row {i}"
                        )));
                    }
                    l[i * w + b] = s.sqrt();
                } else {
                    l[i * w + (j + b - i)] = s / l[j * w + b];
                }
            }
        }
        Ok(Self { m, b, l })
    }

    pub fn bandwidth(&self) -> usize {
        self.b
    }

    /// `L Lᵀ x`.
    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let (m, b, w) = (self.m, self.b, self.b + 1);
        // t = Lᵀ x
        let mut t = vec![0.0; m];
        for i in 0..m {
            let lo = i.saturating_sub(b);
            for k in lo..=i {
                t[k] += self.l[i * w + (k + b - i)] * x[i];
            }
        }
        (0..m)
            .map(|i| {
                let lo = i.saturating_sub(b);
                (lo..=i).map(|k| self.l[i * w + (k + b - i)] * t[k]).sum()
            })
            .collect()
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let (m, b, w) = (self.m, self.b, self.b + 1);
        let mut y = rhs.to_vec();
        for i in 0..m {
            let lo = i.saturating_sub(b);
            let mut s = y[i];
            for k in lo..i {
                s -= self.l[i * w + (k + b - i)] * y[k];
            }
            y[i] = s / self.l[i * w + b];
        }
        for i in (0..m).rev() {
            y[i] /= self.l[i * w + b];
            let lo = i.saturating_sub(b);
            let yi = y[i];
            for k in lo..i {
                y[k] -= self.l[i * w + (k + b - i)] * yi;
            }
        }
        y
    }
}

/// `P ≈ ∂L_h` used to precondition descent directions.
#[derive(Debug, Clone)]
pub struct Preconditioner {
    chol: BandCholesky,
}

impl Preconditioner {
    /// p = 2 local stencil plus the nonlocal diagonal. Exact for the local
    /// part when p = 2.
    pub fn laplacian(ctx: &EnergyContext) -> Result<Self> {
        Self::assemble_at(ctx, None, |_| 1.0, |_, _| 1.0, 1.0)
    }

    /// Stencil of the operator linearized at `u`: face weights
    /// `(|∇u|² + δ²)^{(p-2)/2}` and likewise for kernel pairs, times `p - 1`.
    pub fn linearized(ctx: &EnergyContext, u: &[f64]) -> Result<Self> {
        let p = ctx.p();
        if p == 2.0 {
            return Self::laplacian(ctx);
        }
        let e = 0.5 * (p - 2.0);
        let g2 = ctx.grad_norms_sq(u);
        let delta2 = 1e-4 * g2.iter().sum::<f64>() / g2.len().max(1) as f64 + 1e-300;
        let d2 = 1e-4 * u.iter().map(|v| v * v).sum::<f64>() / u.len().max(1) as f64 + 1e-300;
        Self::assemble_at(
            ctx,
            Some(u),
            |gi| (g2[gi] + delta2).powf(e),
            |a, b| ((a - b) * (a - b) + d2).powf(e),
            p - 1.0,
        )
    }

    fn assemble_at(
        ctx: &EnergyContext,
        u: Option<&[f64]>,
        face_w: impl Fn(usize) -> f64,
        pair_w: impl Fn(f64, f64) -> f64,
        factor: f64,
    ) -> Result<Self> {
        let m = ctx.len();
        let mut diag = vec![0.0; m];
        let mut lower = Vec::new();
        for (i, j, c, gi, _) in ctx.local_faces() {
            let c = factor * c * face_w(gi);
            if let Some(i) = i {
                diag[i] += c;
            }
            if let Some(j) = j {
                diag[j] += c;
            }
            if let (Some(i), Some(j)) = (i, j) {
                lower.push((i.max(j), i.min(j), -c));
            }
        }
        let s = 2.0 * factor / ctx.cell_volume();
        for (i, d) in diag.iter_mut().enumerate() {
            let (row, ext) = ctx.kernel_row(i);
            let ui = u.map_or(0.0, |u| u[i]);
            let mut acc = ext * pair_w(ui, 0.0);
            for (j, w) in row {
                let uj = u.map_or(0.0, |u| u[j]);
                acc += w * pair_w(ui, uj);
            }
            *d += s * acc;
        }
        Ok(Self { chol: BandCholesky::factor(&diag, &lower)? })
    }

    /// `P⁻¹ r`.
    pub fn apply(&self, r: &[f64]) -> Vec<f64> {
        self.chol.solve(r)
    }

    /// `P x`.
    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        self.chol.mul(x)
    }
}

/// Preconditioned MINRES for a symmetric (possibly indefinite) operator
/// with an SPD preconditioner. Stops when the preconditioned residual has
/// dropped by `rtol` or after `max_iter` steps; returns the iterate.
pub fn minres(
    op: impl Fn(&[f64]) -> Vec<f64>,
    pc: &Preconditioner,
    b: &[f64],
    rtol: f64,
    max_iter: usize,
) -> Vec<f64> {
    let n = b.len();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut x = vec![0.0; n];
    let mut r1 = b.to_vec();
    let mut y = pc.apply(&r1);
    let beta1 = dot(&r1, &y).max(0.0).sqrt();
    if beta1 == 0.0 {
        return x;
    }
    let mut r2 = r1.clone();
    let (mut oldb, mut beta) = (0.0, beta1);
    let (mut dbar, mut epsln, mut phibar) = (0.0, 0.0, beta1);
    let (mut cs, mut sn) = (-1.0, 0.0);
    let mut w = vec![0.0; n];
    let mut w2 = vec![0.0; n];
    for itn in 1..=max_iter {
        let v: Vec<f64> = y.iter().map(|yi| yi / beta).collect();
        y = op(&v);
        if itn >= 2 {
            let c = beta / oldb;
            y.iter_mut().zip(&r1).for_each(|(yi, ri)| *yi -= c * ri);
        }
        let alfa = dot(&v, &y);
        let c = alfa / beta;
        y.iter_mut().zip(&r2).for_each(|(yi, ri)| *yi -= c * ri);
        r1 = std::mem::replace(&mut r2, y);
        y = pc.apply(&r2);
        oldb = beta;
        beta = dot(&r2, &y).max(0.0).sqrt();
        let oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;
        let gamma = gbar.hypot(beta).max(f64::EPSILON);
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar *= sn;
        let w1 = std::mem::replace(&mut w2, std::mem::take(&mut w));
        w = (0..n).map(|i| (v[i] - oldeps * w1[i] - delta * w2[i]) / gamma).collect();
        x.iter_mut().zip(&w).for_each(|(xi, wi)| *xi += phi * wi);
        if phibar <= rtol * beta1 || beta == 0.0 {
            break;
        }
    }
    x
}
