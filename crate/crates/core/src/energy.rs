//! Discrete energy `I(u) = ∫|∇u|^p + ∫∫|u(x)-u(y)|^p J(x-y)`, its weak pairing,
//! the operator it induces and the Rayleigh quotient.
//!
//! Gradients are forward differences evaluated on "gradient cells": every mask
//! cell plus its lower neighbor along each axis, so that every cell face that
//! touches Ω is seen exactly once. The Dirichlet condition sits on the cell
//! faces bounding the mask: a difference across such a face spans only half a
//! cell, which is accounted for by scaling it with `2^{(p-1)/p}` (exact in 1D,
//! and for p = 2 the usual ghost-reflection stencil).
//!
//! Internally fields are "compact" vectors holding only the mask values, in
//! increasing grid order.

use std::io::{self, Write};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{build_domain, Domain, DomainSpec, Field, Grid};
use crate::kernel::{Kernel, KernelSpec};

const NONE: u32 = u32::MAX;
const CHUNK: usize = 2048;

/// Sums `f(i)` over `0..n` in fixed chunks so the result does not depend on
/// the number of worker threads.
pub(crate) fn chunked_sum<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    if n <= CHUNK {
        return (0..n).map(&f).sum();
    }
    let parts: Vec<f64> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| (c * CHUNK..((c + 1) * CHUNK).min(n)).map(&f).sum())
        .collect();
    parts.iter().sum()
}

/// Exponent-specialized powers; p = 2, 3, 4 avoid `powf`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Power {
    p: f64,
    kind: u8,
}

impl Power {
    pub(crate) fn new(p: f64) -> Self {
        let kind = if p == 2.0 {
            2
        } else if p == 3.0 {
            3
        } else if p == 4.0 {
            4
        } else {
            0
        };
        Self { p, kind }
    }

    /// `|x|^p`.
    #[inline]
    pub(crate) fn abs_pow(self, x: f64) -> f64 {
        match self.kind {
            2 => x * x,
            3 => x.abs() * x * x,
            4 => (x * x) * (x * x),
            _ => x.abs().powf(self.p),
        }
    }

    /// `|x|^{p-2} x`, zero at the origin.
    #[inline]
    pub(crate) fn psi(self, x: f64) -> f64 {
        match self.kind {
            2 => x,
            3 => x.abs() * x,
            4 => x * x * x,
            _ if x == 0.0 => 0.0,
            _ => x.abs().powf(self.p - 2.0) * x,
        }
    }

    /// `|x|^{p-2}`, the derivative weight of `psi` up to the factor `p-1`.
    /// Zero at the origin unless p = 2.
    #[inline]
    pub(crate) fn weight(self, x: f64) -> f64 {
        match self.kind {
            2 => 1.0,
            3 => x.abs(),
            4 => x * x,
            _ if x == 0.0 => 0.0,
            _ => x.abs().powf(self.p - 2.0),
        }
    }

    /// `s^{p/2}` for a squared norm `s`.
    #[inline]
    fn sq_pow(self, s: f64) -> f64 {
        match self.kind {
            2 => s,
            3 => s * s.sqrt(),
            4 => s * s,
            _ => s.powf(0.5 * self.p),
        }
    }

    /// `s^{(p-2)/2}` for a squared norm `s`; zero at `s = 0` unless p = 2.
    #[inline]
    fn sq_weight(self, s: f64) -> f64 {
        match self.kind {
            2 => 1.0,
            3 => s.sqrt(),
            4 => s,
            _ if s == 0.0 => 0.0,
            _ => s.powf(0.5 * self.p - 1.0),
        }
    }
}

/// Everything needed to turn a domain description into an [`EnergyContext`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Discretization {
    pub kernel: KernelSpec,
    pub p: f64,
    /// Cells across the longest side of the bounding box.
    pub resolution: usize,
}

impl Discretization {
    pub fn new(kernel: KernelSpec, p: f64, resolution: usize) -> Self {
        Self { kernel, p, resolution }
    }

    pub fn build(&self, spec: &DomainSpec) -> Result<EnergyContext> {
        let domain = build_domain(spec, self.resolution, self.kernel.support_radius())?;
        self.on(Arc::new(domain))
    }

    pub fn on(&self, domain: Arc<Domain>) -> Result<EnergyContext> {
        let kernel = self.kernel.build(domain.grid().dim())?;
        EnergyContext::new(domain, kernel, self.p)
    }
}

#[derive(Debug, Clone)]
struct GradCell {
    at: u32,
    next: [u32; 2],
    scale: [f64; 2],
}

/// Precomputed stencils for one (domain, kernel, p).
#[derive(Debug, Clone)]
pub struct EnergyContext {
    domain: Arc<Domain>,
    kernel: Kernel,
    p: f64,
    pow: Power,
    dim: usize,
    hn: f64,
    inv_h: f64,
    cells: Vec<usize>,
    pos: Vec<u32>,
    grad: Vec<GradCell>,
    own: Vec<u32>,
    prev: Vec<[u32; 2]>,
    row_start: Vec<usize>,
    cols: Vec<u32>,
    weights: Vec<f64>,
    exterior: Vec<f64>,
}

impl EnergyContext {
    pub fn new(domain: Arc<Domain>, kernel: Kernel, p: f64) -> Result<Self> {
        Self::build(domain, kernel, p, None)
    }

    /// This discretization restricted to fields vanishing off `mask`, a subset
    /// of the domain. Faces to cells outside the domain keep their scaling;
    /// a face from an active cell `c` to a switched-off cell `n` of the domain
    /// gets `interface(c, n)` (grid indices), which places the Dirichlet point.
    pub fn restricted(&self, mask: Vec<bool>, interface: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let domain = Arc::new(self.domain.with_mask(mask)?);
        if !domain.is_subset_of(&self.domain) {
            return Err(Error::BadParameter("restriction mask leaves the domain".into()));
        }
        Self::build(domain, self.kernel.clone(), self.p, Some((self.domain.mask(), &interface)))
    }

    fn build(domain: Arc<Domain>, kernel: Kernel, p: f64, parent: Option<(&[bool], &dyn Fn(usize, usize) -> f64)>) -> Result<Self> {
        if !(p > 1.0 && p.is_finite()) {
            return Err(Error::BadParameter(format!("p = {p} must satisfy 1 < p < ∞")));
        }
        let grid = domain.grid().clone();
        if kernel.dim() != grid.dim() {
            return Err(Error::BadParameter(format!(
                "kernel dimension {} on a {}D grid",
                kernel.dim(),
                grid.dim()
            )));
        }
        let pad_width = grid.pad() as f64 * grid.h();
        if !kernel.is_null() && pad_width < kernel.radius() * (1.0 - 1e-12) {
            return Err(Error::PaddingTooSmall { pad_width, radius: kernel.radius() });
        }
        if grid.pad() == 0 {
            return Err(Error::PaddingTooSmall { pad_width, radius: kernel.radius() });
        }
        let dim = grid.dim();
        let mask = domain.mask();
        let cells = domain.cells();
        let mut pos = vec![NONE; grid.len()];
        for (k, &c) in cells.iter().enumerate() {
            pos[c] = k as u32;
        }

        let mut is_grad = vec![false; grid.len()];
        for &c in &cells {
            is_grad[c] = true;
            for a in 0..dim {
                let lower = grid.shift(c, a, -1).expect("mask cell inside collar");
                is_grad[lower] = true;
            }
        }
        let beta = 2f64.powf((p - 1.0) / p);
        let mut gpos = vec![NONE; grid.len()];
        let mut grad = Vec::new();
        for c in (0..grid.len()).filter(|&c| is_grad[c]) {
            let mut next = [NONE; 2];
            let mut scale = [1.0; 2];
            for a in 0..dim {
                let n = grid.shift(c, a, 1).expect("gradient cell inside grid");
                next[a] = pos[n];
                scale[a] = match parent {
                    Some((outer, _)) if outer[c] != outer[n] => beta,
                    Some((_, interface)) if mask[c] != mask[n] => {
                        if mask[c] {
                            interface(c, n)
                        } else {
                            interface(n, c)
                        }
                    }
                    None if mask[c] != mask[n] => beta,
                    _ => 1.0,
                };
            }
            gpos[c] = grad.len() as u32;
            grad.push(GradCell { at: pos[c], next, scale });
        }
        let own = cells.iter().map(|&c| gpos[c]).collect();
        let prev = cells
            .iter()
            .map(|&c| {
                let mut pr = [NONE; 2];
                for (a, slot) in pr.iter_mut().enumerate().take(dim) {
                    *slot = gpos[grid.shift(c, a, -1).expect("inside")];
                }
                pr
            })
            .collect();

        let stencil = kernel.stencil(grid.h());
        let mut row_start = Vec::with_capacity(cells.len() + 1);
        let mut cols = Vec::new();
        let mut weights = Vec::new();
        let mut exterior = vec![0.0; cells.len()];
        row_start.push(0);
        for (k, &c) in cells.iter().enumerate() {
            for (o, w) in &stencil {
                let j = shift2(&grid, c, *o).ok_or(Error::PaddingTooSmall {
                    pad_width,
                    radius: kernel.radius(),
                })?;
                if mask[j] {
                    cols.push(pos[j]);
                    weights.push(*w);
                } else {
                    exterior[k] += w;
                }
            }
            row_start.push(cols.len());
        }

        Ok(Self {
            hn: grid.cell_volume(),
            inv_h: 1.0 / grid.h(),
            domain,
            kernel,
            p,
            pow: Power::new(p),
            dim,
            cells,
            pos,
            grad,
            own,
            prev,
            row_start,
            cols,
            weights,
            exterior,
        })
    }

    pub fn domain(&self) -> &Arc<Domain> {
        &self.domain
    }

    pub fn grid(&self) -> &Grid {
        self.domain.grid()
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub(crate) fn power(&self) -> Power {
        self.pow
    }

    /// Number of unknowns (mask cells).
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cell_volume(&self) -> f64 {
        self.hn
    }

    /// Grid indices of the unknowns.
    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    /// Compact index of a grid cell, if it is in the mask.
    pub fn compact_index(&self, grid_idx: usize) -> Option<usize> {
        match self.pos.get(grid_idx) {
            Some(&k) if k != NONE => Some(k as usize),
            _ => None,
        }
    }

    /// Number of stored (ordered) mask–mask kernel pairs.
    pub fn pair_count(&self) -> usize {
        self.cols.len()
    }

    pub fn compact(&self, u: &Field) -> Result<Vec<f64>> {
        if !(Arc::ptr_eq(u.domain(), &self.domain) || **u.domain() == *self.domain) {
            return Err(Error::GridMismatch);
        }
        Ok(self.cells.iter().map(|&c| u.values()[c]).collect())
    }

    pub fn field(&self, v: &[f64]) -> Field {
        Field::from_masked(&self.domain, v).expect("compact vector of matching length")
    }

    #[inline]
    fn val(v: &[f64], k: u32) -> f64 {
        if k == NONE {
            0.0
        } else {
            v[k as usize]
        }
    }

    #[inline]
    fn diffs(&self, g: &GradCell, u: &[f64]) -> [f64; 2] {
        let here = Self::val(u, g.at);
        let mut d = [0.0; 2];
        for a in 0..self.dim {
            d[a] = g.scale[a] * (Self::val(u, g.next[a]) - here) * self.inv_h;
        }
        d
    }

    // ---- compact kernels -------------------------------------------------

    pub fn local_energy_c(&self, u: &[f64]) -> f64 {
        let s = chunked_sum(self.grad.len(), |i| {
            let d = self.diffs(&self.grad[i], u);
            self.pow.sq_pow(d[0] * d[0] + d[1] * d[1])
        });
        s * self.hn
    }

    pub fn nonlocal_energy_c(&self, u: &[f64]) -> f64 {
        chunked_sum(self.len(), |i| {
            let ui = u[i];
            let mut s = 0.0;
            for e in self.row_start[i]..self.row_start[i + 1] {
                s += self.pow.abs_pow(ui - u[self.cols[e] as usize]) * self.weights[e];
            }
            s + 2.0 * self.pow.abs_pow(ui) * self.exterior[i]
        })
    }

    pub fn energy_c(&self, u: &[f64]) -> f64 {
        self.local_energy_c(u) + self.nonlocal_energy_c(u)
    }

    /// `Σ |u_i|^p h^N`.
    pub fn norm_pow_c(&self, u: &[f64]) -> f64 {
        chunked_sum(u.len(), |i| self.pow.abs_pow(u[i])) * self.hn
    }

    pub fn rayleigh_c(&self, u: &[f64]) -> Result<f64> {
        let s = self.norm_pow_c(u);
        if s == 0.0 {
            return Err(Error::ZeroField);
        }
        Ok(self.energy_c(u) / s)
    }

    /// `h^N`-weighted inner product.
    pub fn dot_c(&self, a: &[f64], b: &[f64]) -> f64 {
        chunked_sum(a.len(), |i| a[i] * b[i]) * self.hn
    }

    fn fluxes(&self, u: &[f64]) -> Vec<[f64; 2]> {
        let flux = |g: &GradCell| {
            let d = self.diffs(g, u);
            let w = self.pow.sq_weight(d[0] * d[0] + d[1] * d[1]);
            let mut f = [0.0; 2];
            for a in 0..self.dim {
                f[a] = w * d[a] * g.scale[a] * self.inv_h;
            }
            f
        };
        if self.grad.len() > 4 * CHUNK {
            self.grad.par_iter().map(flux).collect()
        } else {
            self.grad.iter().map(flux).collect()
        }
    }

    fn gather(&self, fluxes: &[[f64; 2]], out: &mut [f64], nonlocal: impl Fn(usize) -> f64 + Sync) {
        let body = |k: usize| {
            let own = fluxes[self.own[k] as usize];
            let mut s = 0.0;
            for a in 0..self.dim {
                s += fluxes[self.prev[k][a] as usize][a] - own[a];
            }
            s + nonlocal(k)
        };
        if out.len() > 4 * CHUNK {
            out.par_chunks_mut(CHUNK).enumerate().for_each(|(c, chunk)| {
                for (o, slot) in chunk.iter_mut().enumerate() {
                    *slot = body(c * CHUNK + o);
                }
            });
        } else {
            for (k, slot) in out.iter_mut().enumerate() {
                *slot = body(k);
            }
        }
    }

    /// `(L_h u)_k`, the weak-form adjoint: `Σ_k (L_h u)_k φ_k h^N = pairing(u, φ)`.
    pub fn apply_c(&self, u: &[f64], out: &mut [f64]) {
        let fl = self.fluxes(u);
        let scale = 2.0 / self.hn;
        self.gather(&fl, out, |k| {
            let uk = u[k];
            let mut s = 0.0;
            for e in self.row_start[k]..self.row_start[k + 1] {
                s += self.pow.psi(uk - u[self.cols[e] as usize]) * self.weights[e];
            }
            scale * (s + self.pow.psi(uk) * self.exterior[k])
        });
    }

    /// Directional derivative of `apply_c` at `u` along `z` (the Hessian of
    /// `I/p` applied to `z`). Uses the zero convention at kinks when p < 2.
    pub fn hess_c(&self, u: &[f64], z: &[f64], out: &mut [f64]) {
        let p2 = self.p - 2.0;
        let dfl: Vec<[f64; 2]> = self
            .grad
            .iter()
            .map(|g| {
                let d = self.diffs(g, u);
                let dz = self.diffs(g, z);
                let s = d[0] * d[0] + d[1] * d[1];
                let w = self.pow.sq_weight(s);
                let cross = if s > 0.0 && p2 != 0.0 {
                    p2 * w / s * (d[0] * dz[0] + d[1] * dz[1])
                } else {
                    0.0
                };
                let mut f = [0.0; 2];
                for a in 0..self.dim {
                    f[a] = (w * dz[a] + cross * d[a]) * g.scale[a] * self.inv_h;
                }
                f
            })
            .collect();
        let scale = 2.0 * (self.p - 1.0) / self.hn;
        self.gather(&dfl, out, |k| {
            let (uk, zk) = (u[k], z[k]);
            let mut s = 0.0;
            for e in self.row_start[k]..self.row_start[k + 1] {
                let j = self.cols[e] as usize;
                s += self.pow.weight(uk - u[j]) * (zk - z[j]) * self.weights[e];
            }
            scale * (s + self.pow.weight(uk) * zk * self.exterior[k])
        });
    }

    /// Strong-form eigen-residual `r = L_h u - λ ψ(u)` on the mask.
    pub fn residual_vec_c(&self, u: &[f64], lambda: f64) -> Vec<f64> {
        let mut r = vec![0.0; u.len()];
        self.apply_c(u, &mut r);
        for (ri, &ui) in r.iter_mut().zip(u) {
            *ri -= lambda * self.pow.psi(ui);
        }
        r
    }

    /// `sqrt(Σ r_i² h^N)`.
    pub fn residual_c(&self, u: &[f64], lambda: f64) -> f64 {
        let r = self.residual_vec_c(u, lambda);
        self.dot_c(&r, &r).sqrt()
    }

    /// Projection onto the unit L^p sphere.
    pub fn normalize_c(&self, u: &mut [f64]) -> Result<()> {
        let s = self.norm_pow_c(u);
        if s == 0.0 || !s.is_finite() {
            return Err(Error::ZeroField);
        }
        let inv = s.powf(-1.0 / self.p);
        for v in u.iter_mut() {
            *v *= inv;
        }
        Ok(())
    }

    // ---- field API ------------------------------------------------------

    pub fn local_energy(&self, u: &Field) -> Result<f64> {
        Ok(self.local_energy_c(&self.compact(u)?))
    }

    pub fn nonlocal_energy(&self, u: &Field) -> Result<f64> {
        Ok(self.nonlocal_energy_c(&self.compact(u)?))
    }

    pub fn total_energy(&self, u: &Field) -> Result<f64> {
        Ok(self.energy_c(&self.compact(u)?))
    }

    /// `H(u, φ)`; satisfies `pairing(u, u) = total_energy(u)`.
    pub fn pairing(&self, u: &Field, phi: &Field) -> Result<f64> {
        let (u, phi) = (self.compact(u)?, self.compact(phi)?);
        let mut lu = vec![0.0; u.len()];
        self.apply_c(&u, &mut lu);
        Ok(self.dot_c(&lu, &phi))
    }

    pub fn apply_operator(&self, u: &Field) -> Result<Field> {
        let u = self.compact(u)?;
        let mut lu = vec![0.0; u.len()];
        self.apply_c(&u, &mut lu);
        Ok(self.field(&lu))
    }

    pub fn rayleigh(&self, u: &Field) -> Result<f64> {
        self.rayleigh_c(&self.compact(u)?)
    }

    /// Gradient of `total_energy` in the `h^N` inner product: `p · L_h u`.
    pub fn energy_gradient(&self, u: &Field) -> Result<Field> {
        Ok(self.apply_operator(u)?.scaled(self.p))
    }

    pub fn residual(&self, u: &Field, lambda: f64) -> Result<f64> {
        Ok(self.residual_c(&self.compact(u)?, lambda))
    }

    // ---- p = 2 assembly -------------------------------------------------

    /// Sparse rows `(diag, off-diagonal entries)` of the matrix of `L_h`,
    /// which is linear for any p only in the sense of the p = 2 stencil; the
    /// caller checks p.
    fn sparse_p2(&self) -> (Vec<f64>, Vec<Vec<(u32, f64)>>) {
        let m = self.len();
        let mut diag = vec![0.0; m];
        let mut off: Vec<Vec<(u32, f64)>> = vec![Vec::new(); m];
        let ih2 = self.inv_h * self.inv_h;
        for g in &self.grad {
            for a in 0..self.dim {
                let c = g.scale[a] * g.scale[a] * ih2;
                let (i, j) = (g.at, g.next[a]);
                if i != NONE {
                    diag[i as usize] += c;
                }
                if j != NONE {
                    diag[j as usize] += c;
                }
                if i != NONE && j != NONE {
                    off[i as usize].push((j, -c));
                    off[j as usize].push((i, -c));
                }
            }
        }
        let s = 2.0 / self.hn;
        for i in 0..m {
            let mut row = 0.0;
            for e in self.row_start[i]..self.row_start[i + 1] {
                row += self.weights[e];
                off[i].push((self.cols[e], -s * self.weights[e]));
            }
            diag[i] += s * (row + self.exterior[i]);
        }
        (diag, off)
    }

    /// Largest `|w_ij - w_ji|` over the stored kernel pairs.
    pub fn symmetry_defect(&self) -> f64 {
        let mut defect = 0.0f64;
        for i in 0..self.len() {
            for e in self.row_start[i]..self.row_start[i + 1] {
                let j = self.cols[e] as usize;
                let row = &self.cols[self.row_start[j]..self.row_start[j + 1]];
                let back = row
                    .iter()
                    .position(|&c| c as usize == i)
                    .map(|q| self.weights[self.row_start[j] + q]);
                defect = match back {
                    Some(w) => defect.max((w - self.weights[e]).abs()),
                    None => f64::INFINITY,
                };
            }
        }
        defect
    }

    /// Lower triangle (row-major, packed) of `A_ij = pairing(e_i, e_j)/h^N`
    /// for p = 2.
    pub fn assemble_p2_packed(&self) -> Result<Vec<f64>> {
        if self.p != 2.0 {
            return Err(Error::RequiresP2(self.p));
        }
        let defect = self.symmetry_defect();
        if !(defect <= 1e-12) {
            return Err(Error::NotSymmetric { defect });
        }
        let m = self.len();
        let (diag, off) = self.sparse_p2();
        let mut a = vec![0.0; m * (m + 1) / 2];
        for i in 0..m {
            let base = i * (i + 1) / 2;
            a[base + i] = diag[i];
            for &(j, v) in &off[i] {
                if (j as usize) < i {
                    a[base + j as usize] += v;
                }
            }
        }
        Ok(a)
    }

    /// Per-axis face coefficients `(i, j, s²/h²)` of the local term, with
    /// `NONE`-free endpoints replaced by `None`. Used by preconditioners.
    pub(crate) fn local_faces(&self) -> impl Iterator<Item = (Option<usize>, Option<usize>, f64, usize, usize)> + '_ {
        let ih2 = self.inv_h * self.inv_h;
        self.grad.iter().enumerate().flat_map(move |(gi, g)| {
            (0..self.dim).map(move |a| {
                let opt = |k: u32| if k == NONE { None } else { Some(k as usize) };
                (opt(g.at), opt(g.next[a]), g.scale[a] * g.scale[a] * ih2, gi, a)
            })
        })
    }

    /// Per gradient cell, the squared norm of the discrete gradient of `u`.
    pub(crate) fn grad_norms_sq(&self, u: &[f64]) -> Vec<f64> {
        self.grad
            .iter()
            .map(|g| {
                let d = self.diffs(g, u);
                d[0] * d[0] + d[1] * d[1]
            })
            .collect()
    }

    /// Kernel rows: `(neighbors with weights, exterior weight)` of cell `i`.
    pub(crate) fn kernel_row(&self, i: usize) -> (impl Iterator<Item = (usize, f64)> + '_, f64) {
        let r = self.row_start[i]..self.row_start[i + 1];
        (r.map(move |e| (self.cols[e] as usize, self.weights[e])), self.exterior[i])
    }

    /// Debug dump of every kernel pair `(i, j, w_ij)` with grid indices,
    /// including pairs that reach outside the mask.
    pub fn write_neighbor_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "i,j,w_ij")?;
        let grid = self.grid();
        for &c in &self.cells {
            for (o, wt) in self.kernel.stencil(grid.h()) {
                if let Some(j) = shift2(grid, c, o) {
                    writeln!(w, "{c},{j},{wt}")?;
                }
            }
        }
        Ok(())
    }
}

fn shift2(grid: &Grid, c: usize, o: [isize; 2]) -> Option<usize> {
    let mut j = grid.shift(c, 0, o[0])?;
    if o[1] != 0 {
        j = grid.shift(j, 1, o[1])?;
    }
    Some(j)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_domain, DomainSpec};
    use crate::kernel::{fractional_kernel, Kernel};
    use crate::rng::SplitMix64;

    fn ctx(spec: &DomainSpec, n: usize, kernel: Kernel, p: f64) -> EnergyContext {
        let d = Arc::new(build_domain(spec, n, kernel.radius()).unwrap());
        EnergyContext::new(d, kernel, p).unwrap()
    }

    fn random(m: usize, seed: u64) -> Vec<f64> {
        let mut r = SplitMix64::new(seed);
        (0..m).map(|_| r.uniform(-1.0, 1.0)).collect()
    }

    fn none(dim: usize) -> Kernel {
        crate::kernel::KernelSpec::none().build(dim).unwrap()
    }

    #[test]
    fn restriction_keeps_zero_extended_energy() {
        for p in [2.0, 3.0] {
            let c = ctx(&DomainSpec::ball(&[0.0, 0.0], 1.0), 14, Kernel::tent(0.3, 2), p);
            let mask: Vec<bool> = (0..c.grid().len()).map(|i| c.domain().mask()[i] && c.grid().center(i)[0] > 0.1).collect();
            let sub = c.restricted(mask.clone(), |_, _| 1.0).unwrap();
            let v = random(sub.len(), 3);
            let mut full = vec![0.0; c.len()];
            for (k, &cell) in sub.cells().iter().enumerate() {
                full[c.compact_index(cell).unwrap()] = v[k];
            }
            assert!((sub.energy_c(&v) - c.energy_c(&full)).abs() < 1e-12 * c.energy_c(&full));
            // a fresh context on the same mask puts the boundary at the faces
            let fresh = EnergyContext::new(Arc::new(c.domain().with_mask(mask).unwrap()), c.kernel().clone(), p).unwrap();
            assert!(fresh.local_energy_c(&v) > sub.local_energy_c(&v));
        }
    }

    #[test]
    fn single_cell_local_energy() {
        // one mask cell, h = 1: both faces are boundary faces, each difference
        // is scaled by sqrt(2) at p = 2
        let g = Grid::new(1, [5, 1], 1.0, [0.0, 0.0], 1).unwrap();
        let mut mask = vec![false; g.len()];
        mask[3] = true;
        let d = Arc::new(Domain::new(g, mask).unwrap());
        let c = EnergyContext::new(d, none(1), 2.0).unwrap();
        assert!((c.local_energy_c(&[1.0]) - 4.0).abs() < 1e-14);
    }

    #[test]
    fn boundary_scaling_is_exact_for_linear_profiles_at_any_p() {
        // u(x) = x on (0,1) extended by 0: continuum ∫|u'|^p = 1 over the
        // interior; the half-cell at x=1 adds the jump 1/(h/2) over h/2.
        let c = ctx(&DomainSpec::interval(0.0, 1.0), 20, none(1), 3.0);
        let u: Vec<f64> = c.cells().iter().map(|&i| c.grid().center(i)[0]).collect();
        let h = c.grid().h();
        // interior faces: slope 1 over (h/2, 1-h/2); boundary faces: slopes
        // (h/2)/(h/2) = 1 on (0,h/2) and (1-h/2)/(h/2) on (1-h/2,1)
        let expect = (1.0 - h) + 0.5 * h + ((1.0 - h / 2.0) / (h / 2.0)).powi(3) * h / 2.0;
        assert!((c.local_energy_c(&u) - expect).abs() < 1e-10 * expect);
    }

    #[test]
    fn two_cell_pair_energy() {
        // cells 0 and 1 in the mask, kernel reaching exactly one cell
        let g = Grid::new(1, [2, 1], 1.0, [0.0, 0.0], 2).unwrap();
        let mut mask = vec![false; g.len()];
        mask[2] = true;
        mask[3] = true;
        let d = Arc::new(Domain::new(g, mask).unwrap());
        let k = Kernel::tent(1.5, 1);
        let c = EnergyContext::new(d, k.clone(), 2.0).unwrap();
        let w = k.eval_radial(1.0);
        // u = [1, 0]: the mask pair counts twice, the exterior pair of cell 0
        // (offset -1) counts twice as well
        let e = c.nonlocal_energy_c(&[1.0, 0.0]);
        assert!((e - (2.0 * w + 2.0 * w)).abs() < 1e-15);
    }

    #[test]
    fn interior_pair_weight_only() {
        // far from the boundary: only the mask-mask pair contributes
        let g = Grid::new(1, [6, 1], 1.0, [0.0, 0.0], 2).unwrap();
        let mask: Vec<bool> = (0..g.len()).map(|i| (2..8).contains(&i)).collect();
        let d = Arc::new(Domain::new(g, mask).unwrap());
        let k = Kernel::tent(1.5, 1);
        let c = EnergyContext::new(d, k.clone(), 2.0).unwrap();
        // a unit spike at an interior cell sees its two mask neighbors only
        let u = vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        let w = k.eval_radial(1.0);
        assert!((c.nonlocal_energy_c(&u) - 2.0 * 2.0 * w).abs() < 1e-15);
    }

    #[test]
    fn identities_on_random_fields() {
        let shapes = [
            (DomainSpec::interval(0.0, 1.0), 40, Kernel::tent(0.2, 1)),
            (DomainSpec::ball(&[0.0, 0.0], 1.0), 16, Kernel::bump(0.3, 2)),
        ];
        for (spec, n, k) in shapes {
            for p in [2.0, 2.5, 3.0, 1.5] {
                let c = ctx(&spec, n, k.clone(), p);
                let u = random(c.len(), 11);
                let e = c.energy_c(&u);
                let mut lu = vec![0.0; u.len()];
                c.apply_c(&u, &mut lu);
                let pair = c.dot_c(&lu, &u);
                assert!((pair - e).abs() <= 1e-12 * e, "Euler p={p}");
                let t = -1.7;
                let ut: Vec<f64> = u.iter().map(|v| t * v).collect();
                assert!((c.energy_c(&ut) - t.abs().powf(p) * e).abs() <= 1e-12 * e);
            }
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        for p in [2.0, 2.5, 3.0] {
            let c = ctx(&DomainSpec::ball(&[0.0, 0.0], 1.0), 12, Kernel::tent(0.3, 2), p);
            let u = random(c.len(), 3);
            let phi = random(c.len(), 4);
            let g = c.energy_gradient(&c.field(&u)).unwrap();
            let analytic = c.dot_c(&c.compact(&g).unwrap(), &phi);
            let eps = 1e-6;
            let plus: Vec<f64> = u.iter().zip(&phi).map(|(a, b)| a + eps * b).collect();
            let minus: Vec<f64> = u.iter().zip(&phi).map(|(a, b)| a - eps * b).collect();
            let fd = (c.energy_c(&plus) - c.energy_c(&minus)) / (2.0 * eps);
            assert!((fd - analytic).abs() <= 1e-5 * analytic.abs(), "p={p}: {fd} vs {analytic}");
        }
    }

    #[test]
    fn hessian_matches_operator_differences() {
        for p in [2.0, 3.0, 2.5] {
            let c = ctx(&DomainSpec::ball(&[0.0, 0.0], 1.0), 10, Kernel::tent(0.3, 2), p);
            let u = random(c.len(), 5);
            let z = random(c.len(), 6);
            let mut hz = vec![0.0; u.len()];
            c.hess_c(&u, &z, &mut hz);
            let eps = 1e-6;
            let mut a = vec![0.0; u.len()];
            let mut b = vec![0.0; u.len()];
            let up: Vec<f64> = u.iter().zip(&z).map(|(x, y)| x + eps * y).collect();
            let um: Vec<f64> = u.iter().zip(&z).map(|(x, y)| x - eps * y).collect();
            c.apply_c(&up, &mut a);
            c.apply_c(&um, &mut b);
            let num: f64 = hz.iter().zip(a.iter().zip(&b)).map(|(h, (x, y))| (h - (x - y) / (2.0 * eps)).powi(2)).sum();
            let den: f64 = hz.iter().map(|h| h * h).sum();
            assert!((num / den).sqrt() < 1e-6, "p={p}");
        }
    }

    #[test]
    fn local_only_matches_three_point_laplacian() {
        let c = ctx(&DomainSpec::interval(0.0, 1.0), 10, none(1), 2.0);
        let h = c.grid().h();
        let u = random(c.len(), 9);
        let mut lu = vec![0.0; u.len()];
        c.apply_c(&u, &mut lu);
        let m = u.len();
        for k in 0..m {
            let left = if k == 0 { -u[0] } else { u[k - 1] };
            let right = if k == m - 1 { -u[m - 1] } else { u[k + 1] };
            let expect = (2.0 * u[k] - left - right) / (h * h);
            assert!((lu[k] - expect).abs() < 1e-9 * expect.abs().max(1.0));
        }
    }

    #[test]
    fn assembled_matrix_reproduces_operator() {
        let c = ctx(&DomainSpec::ball(&[0.0, 0.0], 1.0), 10, Kernel::tent(0.3, 2), 2.0);
        let a = c.assemble_p2_packed().unwrap();
        let u = random(c.len(), 1);
        let m = u.len();
        let mut au = vec![0.0; m];
        for i in 0..m {
            for j in 0..=i {
                let v = a[i * (i + 1) / 2 + j];
                au[i] += v * u[j];
                if j != i {
                    au[j] += v * u[i];
                }
            }
        }
        let mut lu = vec![0.0; m];
        c.apply_c(&u, &mut lu);
        for (x, y) in au.iter().zip(&lu) {
            assert!((x - y).abs() < 1e-10 * y.abs().max(1.0));
        }
        assert!(c.symmetry_defect() < 1e-15);
        let c3 = ctx(&DomainSpec::interval(0.0, 1.0), 10, none(1), 3.0);
        assert!(matches!(c3.assemble_p2_packed(), Err(Error::RequiresP2(_))));
    }

    #[test]
    fn separated_supports_decouple() {
        let spec = DomainSpec::IntervalUnion { intervals: vec![[0.0, 1.0], [1.5, 2.5]] };
        let c = ctx(&spec, 50, Kernel::tent(0.2, 1), 3.0);
        let mut u = random(c.len(), 2);
        let mut v = u.clone();
        for (k, &cell) in c.cells().iter().enumerate() {
            if c.grid().center(cell)[0] < 1.2 {
                v[k] = 0.0;
            } else {
                u[k] = 0.0;
            }
        }
        let sum: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a + b).collect();
        let total = c.energy_c(&sum);
        assert!((total - (c.energy_c(&u) + c.energy_c(&v))).abs() <= 1e-13 * total);
    }

    #[test]
    fn padding_validated_at_context_build() {
        let d = Arc::new(build_domain(&DomainSpec::interval(0.0, 1.0), 10, 0.1).unwrap());
        let err = EnergyContext::new(d, Kernel::tent(0.3, 1), 2.0).unwrap_err();
        assert!(matches!(err, Error::PaddingTooSmall { .. }));
    }

    #[test]
    fn mismatched_field_rejected() {
        let c = ctx(&DomainSpec::interval(0.0, 1.0), 10, none(1), 2.0);
        let other = Arc::new(build_domain(&DomainSpec::interval(0.0, 2.0), 10, 0.0).unwrap());
        assert!(matches!(c.total_energy(&Field::zeros(&other)), Err(Error::GridMismatch)));
    }

    #[test]
    fn smaller_inner_cutoff_raises_energy_of_a_spike() {
        let spec = DomainSpec::interval(0.0, 1.0);
        let mut last = 0.0;
        for eps in [0.16, 0.08, 0.04, 0.02] {
            let k = fractional_kernel(0.4, 2.0, eps, 0.2, 1).unwrap();
            let c = ctx(&spec, 100, k, 2.0);
            let mut u = vec![0.0; c.len()];
            u[50] = 1.0;
            let e = c.nonlocal_energy_c(&u);
            assert!(e > last);
            last = e;
        }
    }

    #[test]
    fn rayleigh_of_sine_approaches_pi_squared() {
        let c = ctx(&DomainSpec::interval(0.0, 1.0), 200, none(1), 2.0);
        let u: Vec<f64> = c.cells().iter().map(|&i| (std::f64::consts::PI * c.grid().center(i)[0]).sin()).collect();
        let r = c.rayleigh_c(&u).unwrap();
        let pi2 = std::f64::consts::PI.powi(2);
        assert!((r - pi2).abs() < 1e-3 * pi2);
        let u7: Vec<f64> = u.iter().map(|v| -7.0 * v).collect();
        assert!((c.rayleigh_c(&u7).unwrap() - r).abs() < 1e-12 * r);
    }
}
