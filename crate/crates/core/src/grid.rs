//! Cell-centered Cartesian grids in one or two dimensions, domain masks and
//! grid functions that vanish outside the mask.
//!
//! A [`Grid`] covers the bounding box of a domain plus a collar of `pad` cells
//! on every side. The collar holds the zero extension of a field, which the
//! nonlocal term reads whenever the kernel reaches past the domain.

use std::collections::VecDeque;
use std::io::{self, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform cell-centered grid. In 1D the second axis has a single cell and no
/// padding.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dim: usize,
    cells: [usize; 2],
    h: f64,
    origin: [f64; 2],
    pad: usize,
}

impl Grid {
    /// `cells` counts interior cells per axis, `origin` is the lower corner of
    /// the padded cell `(0, 0)`.
    pub fn new(dim: usize, cells: [usize; 2], h: f64, origin: [f64; 2], pad: usize) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::InvalidSpec(format!("dimension {dim} not supported")));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidSpec(format!("spacing {h} must be positive")));
        }
        if cells[0] == 0 || (dim == 2 && cells[1] == 0) {
            return Err(Error::InvalidSpec("grid needs at least one cell per axis".into()));
        }
        let cells = if dim == 1 { [cells[0], 1] } else { cells };
        let origin = if dim == 1 { [origin[0], 0.0] } else { origin };
        Ok(Self { dim, cells, h, origin, pad })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Interior cells per axis.
    pub fn cells(&self) -> [usize; 2] {
        self.cells
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn origin(&self) -> [f64; 2] {
        self.origin
    }

    pub fn pad(&self) -> usize {
        self.pad
    }

    /// Padded cell counts per axis.
    pub fn shape(&self) -> [usize; 2] {
        if self.dim == 1 {
            [self.cells[0] + 2 * self.pad, 1]
        } else {
            [self.cells[0] + 2 * self.pad, self.cells[1] + 2 * self.pad]
        }
    }

    pub fn len(&self) -> usize {
        let s = self.shape();
        s[0] * s[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `h^N`, the quadrature weight of one cell.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.shape()[0] + ix
    }

    pub fn coords(&self, idx: usize) -> [usize; 2] {
        let nx = self.shape()[0];
        [idx % nx, idx / nx]
    }

    pub fn center(&self, idx: usize) -> [f64; 2] {
        let [ix, iy] = self.coords(idx);
        let x = self.origin[0] + (ix as f64 + 0.5) * self.h;
        if self.dim == 1 {
            [x, 0.0]
        } else {
            [x, self.origin[1] + (iy as f64 + 0.5) * self.h]
        }
    }

    /// Neighbor of `idx` shifted by `delta` cells along `axis`, if inside the
    /// padded grid.
    pub fn shift(&self, idx: usize, axis: usize, delta: isize) -> Option<usize> {
        let shape = self.shape();
        let mut c = self.coords(idx);
        let moved = c[axis] as isize + delta;
        if moved < 0 || moved as usize >= shape[axis] {
            return None;
        }
        c[axis] = moved as usize;
        Some(self.index(c[0], c[1]))
    }

    /// Whether the cell lies at least `pad` cells away from the padded box edge.
    pub fn is_interior(&self, idx: usize) -> bool {
        let c = self.coords(idx);
        (0..self.dim).all(|a| c[a] >= self.pad && c[a] < self.pad + self.cells[a])
    }
}

/// Collar width in cells needed so that `pad * h >= kernel_radius`, at least one
/// cell so forward differences always find a neighbor.
pub fn pad_for(h: f64, kernel_radius: f64) -> usize {
    let cells = (kernel_radius / h - 1e-9).ceil();
    (cells.max(1.0)) as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BallParams {
    pub center: [f64; 2],
    pub radius: f64,
}

/// Geometric description of Ω. Serialized as `{"shape": ..., "params": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", content = "params", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainSpec {
    Interval {
        a: f64,
        b: f64,
    },
    /// Axis-aligned box; `lo`/`hi` have one entry per dimension.
    Box {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    Ball {
        center: Vec<f64>,
        radius: f64,
    },
    /// Union of 2D disks.
    BallUnion {
        balls: Vec<BallParams>,
    },
    IntervalUnion {
        intervals: Vec<[f64; 2]>,
    },
    Annulus {
        center: [f64; 2],
        inner: f64,
        outer: f64,
    },
    /// Explicit mask over `cells` interior cells, x fastest. `origin` is the
    /// lower corner of the first interior cell.
    Custom {
        cells: Vec<usize>,
        h: f64,
        mask: Vec<bool>,
        #[serde(default)]
        origin: Option<Vec<f64>>,
    },
}

impl DomainSpec {
    pub fn interval(a: f64, b: f64) -> Self {
        Self::Interval { a, b }
    }

    pub fn ball(center: &[f64], radius: f64) -> Self {
        Self::Ball { center: center.to_vec(), radius }
    }

    pub fn rect(lo: &[f64], hi: &[f64]) -> Self {
        Self::Box { lo: lo.to_vec(), hi: hi.to_vec() }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Interval { .. } | Self::IntervalUnion { .. } => 1,
            Self::Box { lo, .. } => lo.len(),
            Self::Ball { center, .. } => center.len(),
            Self::BallUnion { .. } | Self::Annulus { .. } => 2,
            Self::Custom { cells, .. } => cells.len(),
        }
    }

    /// Short human-readable label used in result tables.
    pub fn descriptor(&self) -> String {
        match self {
            Self::Interval { a, b } => format!("interval({a};{b})"),
            Self::Box { lo, hi } => format!("box({lo:?};{hi:?})").replace(',', ";"),
            Self::Ball { center, radius } => {
                format!("ball({center:?};R={radius})").replace(',', ";")
            }
            Self::BallUnion { balls } => {
                let parts: Vec<String> = balls
                    .iter()
                    .map(|b| format!("ball([{};{}];R={})", b.center[0], b.center[1], b.radius))
                    .collect();
                parts.join("+")
            }
            Self::IntervalUnion { intervals } => {
                let parts: Vec<String> =
                    intervals.iter().map(|[a, b]| format!("interval({a};{b})")).collect();
                parts.join("+")
            }
            Self::Annulus { center, inner, outer } => {
                format!("annulus([{};{}];{inner};{outer})", center[0], center[1])
            }
            Self::Custom { cells, h, .. } => format!("custom({cells:?};h={h})").replace(',', ";"),
        }
    }

    /// Lebesgue measure of the continuum set, when it has a closed form.
    /// Unions are assumed disjoint.
    pub fn exact_measure(&self) -> Option<f64> {
        use std::f64::consts::PI;
        match self {
            Self::Interval { a, b } => Some(b - a),
            Self::Box { lo, hi } => Some(lo.iter().zip(hi).map(|(l, h)| h - l).product()),
            Self::Ball { center, radius } => Some(if center.len() == 1 { 2.0 * radius } else { PI * radius * radius }),
            Self::BallUnion { balls } => Some(balls.iter().map(|b| PI * b.radius * b.radius).sum()),
            Self::IntervalUnion { intervals } => Some(intervals.iter().map(|[a, b]| b - a).sum()),
            Self::Annulus { inner, outer, .. } => Some(PI * (outer * outer - inner * inner)),
            Self::Custom { .. } => None,
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.to_string()));
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match self {
            Self::Interval { a, b } => {
                if !(finite(&[*a, *b]) && a < b) {
                    return bad("interval needs a < b");
                }
            }
            Self::Box { lo, hi } => {
                if lo.len() != hi.len() || !(1..=2).contains(&lo.len()) {
                    return bad("box corners need matching dimension 1 or 2");
                }
                if !finite(lo) || !finite(hi) || lo.iter().zip(hi).any(|(l, h)| l >= h) {
                    return bad("box needs lo < hi on every axis");
                }
            }
            Self::Ball { center, radius } => {
                if !(1..=2).contains(&center.len()) || !finite(center) {
                    return bad("ball center must have dimension 1 or 2");
                }
                if !(*radius > 0.0 && radius.is_finite()) {
                    return bad("ball radius must be positive");
                }
            }
            Self::BallUnion { balls } => {
                if balls.is_empty() {
                    return bad("ball union needs at least one ball");
                }
                if balls.iter().any(|b| !(b.radius > 0.0) || !finite(&b.center)) {
                    return bad("ball radius must be positive");
                }
            }
            Self::IntervalUnion { intervals } => {
                if intervals.is_empty() || intervals.iter().any(|[a, b]| !(a < b)) {
                    return bad("interval union needs nonempty intervals with a < b");
                }
            }
            Self::Annulus { inner, outer, center } => {
                if !(*inner >= 0.0 && inner < outer) || !finite(center) {
                    return bad("annulus needs 0 <= inner < outer");
                }
            }
            Self::Custom { cells, h, mask, origin } => {
                if !(1..=2).contains(&cells.len()) || cells.iter().any(|&c| c == 0) {
                    return bad("custom mask needs 1 or 2 positive cell counts");
                }
                if !(*h > 0.0) {
                    return bad("custom spacing must be positive");
                }
                if mask.len() != cells.iter().product::<usize>() {
                    return bad("custom mask length does not match cell counts");
                }
                if let Some(o) = origin {
                    if o.len() != cells.len() {
                        return bad("custom origin dimension mismatch");
                    }
                }
            }
        }
        Ok(())
    }

    fn bounding_box(&self) -> ([f64; 2], [f64; 2]) {
        match self {
            Self::Interval { a, b } => ([*a, 0.0], [*b, 0.0]),
            Self::Box { lo, hi } => (pad2(lo), pad2(hi)),
            Self::Ball { center, radius } => {
                let c = pad2(center);
                let r2 = if center.len() == 2 { *radius } else { 0.0 };
                ([c[0] - radius, c[1] - r2], [c[0] + radius, c[1] + r2])
            }
            Self::BallUnion { balls } => {
                let mut lo = [f64::INFINITY; 2];
                let mut hi = [f64::NEG_INFINITY; 2];
                for b in balls {
                    for a in 0..2 {
                        lo[a] = lo[a].min(b.center[a] - b.radius);
                        hi[a] = hi[a].max(b.center[a] + b.radius);
                    }
                }
                (lo, hi)
            }
            Self::IntervalUnion { intervals } => {
                let lo = intervals.iter().map(|i| i[0]).fold(f64::INFINITY, f64::min);
                let hi = intervals.iter().map(|i| i[1]).fold(f64::NEG_INFINITY, f64::max);
                ([lo, 0.0], [hi, 0.0])
            }
            Self::Annulus { center, outer, .. } => (
                [center[0] - outer, center[1] - outer],
                [center[0] + outer, center[1] + outer],
            ),
            Self::Custom { cells, h, origin, .. } => {
                let o = origin.as_deref().map(pad2).unwrap_or([0.0; 2]);
                let c = [cells[0] as f64, cells.get(1).copied().unwrap_or(0) as f64];
                (o, [o[0] + c[0] * h, o[1] + c[1] * h])
            }
        }
    }

    /// Whether the point lies in the open set Ω.
    pub fn contains(&self, x: [f64; 2]) -> bool {
        let dist2 = |c: [f64; 2]| (x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2);
        match self {
            Self::Interval { a, b } => *a < x[0] && x[0] < *b,
            Self::Box { lo, hi } => (0..lo.len()).all(|i| lo[i] < x[i] && x[i] < hi[i]),
            Self::Ball { center, radius } => dist2(pad2(center)) < radius * radius,
            Self::BallUnion { balls } => {
                balls.iter().any(|b| dist2(b.center) < b.radius * b.radius)
            }
            Self::IntervalUnion { intervals } => {
                intervals.iter().any(|[a, b]| *a < x[0] && x[0] < *b)
            }
            Self::Annulus { center, inner, outer } => {
                let d = dist2(*center);
                inner * inner < d && d < outer * outer
            }
            // membership is explicit; never queried geometrically
            Self::Custom { .. } => false,
        }
    }
}

fn pad2(v: &[f64]) -> [f64; 2] {
    [v.first().copied().unwrap_or(0.0), v.get(1).copied().unwrap_or(0.0)]
}

/// A grid together with the indicator of Ω.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    grid: Grid,
    mask: Vec<bool>,
    count: usize,
}

impl Domain {
    /// Wraps an explicit mask. Masked cells must keep `pad` cells of collar.
    pub fn new(grid: Grid, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != grid.len() {
            return Err(Error::InvalidSpec(format!(
                "mask has {} entries, grid has {}",
                mask.len(),
                grid.len()
            )));
        }
        if mask.iter().enumerate().any(|(i, &m)| m && !grid.is_interior(i)) {
            return Err(Error::InvalidSpec("mask cell inside the padding collar".into()));
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(Error::EmptyMask);
        }
        Ok(Self { grid, mask, count })
    }

    /// Same grid, different mask (nodal domains, components).
    pub fn with_mask(&self, mask: Vec<bool>) -> Result<Self> {
        Self::new(self.grid.clone(), mask)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn cell_count(&self) -> usize {
        self.count
    }

    pub fn measure(&self) -> f64 {
        measure(&self.grid, &self.mask)
    }

    /// Indices of masked cells in increasing order.
    pub fn cells(&self) -> Vec<usize> {
        (0..self.mask.len()).filter(|&i| self.mask[i]).collect()
    }

    /// Mass centroid of the masked cell centers.
    pub fn centroid(&self) -> [f64; 2] {
        let mut c = [0.0; 2];
        for i in self.cells() {
            let x = self.grid.center(i);
            c[0] += x[0];
            c[1] += x[1];
        }
        [c[0] / self.count as f64, c[1] / self.count as f64]
    }

    /// Connected components under 2N-neighbor adjacency, each sorted.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut label = vec![usize::MAX; self.mask.len()];
        let mut comps = Vec::new();
        for start in 0..self.mask.len() {
            if !self.mask[start] || label[start] != usize::MAX {
                continue;
            }
            let id = comps.len();
            let mut comp = Vec::new();
            let mut queue = VecDeque::from([start]);
            label[start] = id;
            while let Some(i) = queue.pop_front() {
                comp.push(i);
                for axis in 0..self.grid.dim() {
                    for delta in [-1, 1] {
                        if let Some(j) = self.grid.shift(i, axis, delta) {
                            if self.mask[j] && label[j] == usize::MAX {
                                label[j] = id;
                                queue.push_back(j);
                            }
                        }
                    }
                }
            }
            comp.sort_unstable();
            comps.push(comp);
        }
        comps
    }

    pub fn is_connected(&self) -> bool {
        self.components().len() == 1
    }

    /// Whether this mask is a subset of `other` (same grid required).
    pub fn is_subset_of(&self, other: &Domain) -> bool {
        self.grid == other.grid && self.mask.iter().zip(&other.mask).all(|(&a, &b)| !a || b)
    }
}

/// `(count of mask cells) * h^N`.
pub fn measure(grid: &Grid, mask: &[bool]) -> f64 {
    mask.iter().filter(|&&m| m).count() as f64 * grid.cell_volume()
}

/// Builds the grid and mask for `spec` with `resolution` cells across the
/// longest side of its bounding box.
pub fn build_domain(spec: &DomainSpec, resolution: usize, kernel_radius: f64) -> Result<Domain> {
    if resolution < 4 {
        return Err(Error::InvalidSpec(format!("resolution {resolution} < 4")));
    }
    spec.validate()?;
    if let DomainSpec::Custom { .. } = spec {
        return build_custom(spec, kernel_radius);
    }
    let (lo, hi) = spec.bounding_box();
    let extent = (0..spec.dim()).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
    build_domain_with_spacing(spec, extent / resolution as f64, kernel_radius)
}

/// Builds the grid for `spec` at a prescribed spacing `h`. Each axis gets
/// `round(extent / h)` interior cells centered on the bounding box.
pub fn build_domain_with_spacing(spec: &DomainSpec, h: f64, kernel_radius: f64) -> Result<Domain> {
    spec.validate()?;
    if !(kernel_radius >= 0.0 && kernel_radius.is_finite()) {
        return Err(Error::InvalidSpec(format!("kernel radius {kernel_radius} invalid")));
    }
    if let DomainSpec::Custom { .. } = spec {
        return build_custom(spec, kernel_radius);
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidSpec(format!("spacing {h} must be positive")));
    }
    let dim = spec.dim();
    let (lo, hi) = spec.bounding_box();
    let pad = pad_for(h, kernel_radius);
    let mut cells = [1usize; 2];
    let mut origin = [0.0; 2];
    for a in 0..dim {
        let extent = hi[a] - lo[a];
        cells[a] = ((extent / h).round() as usize).max(1);
        let mid = 0.5 * (lo[a] + hi[a]);
        origin[a] = mid - cells[a] as f64 * h / 2.0 - pad as f64 * h;
    }
    if cells[..dim].iter().all(|&c| c < 4) {
        return Err(Error::InvalidSpec("fewer than 4 cells across the domain".into()));
    }
    let grid = Grid::new(dim, cells, h, origin, pad)?;
    let mask: Vec<bool> = (0..grid.len())
        .map(|i| grid.is_interior(i) && spec.contains(grid.center(i)))
        .collect();
    Domain::new(grid, mask)
}

fn build_custom(spec: &DomainSpec, kernel_radius: f64) -> Result<Domain> {
    let DomainSpec::Custom { cells, h, mask, origin } = spec else {
        unreachable!("build_custom called with a geometric spec")
    };
    let dim = cells.len();
    let pad = pad_for(*h, kernel_radius);
    let o = origin.as_deref().map(pad2).unwrap_or([0.0; 2]);
    let c = [cells[0], cells.get(1).copied().unwrap_or(1)];
    let origin = [o[0] - pad as f64 * h, o[1] - if dim == 2 { pad as f64 * h } else { 0.0 }];
    let grid = Grid::new(dim, c, *h, origin, pad)?;
    let mut full = vec![false; grid.len()];
    for iy in 0..c[1] {
        for ix in 0..c[0] {
            if mask[iy * c[0] + ix] {
                let gy = if dim == 2 { iy + pad } else { 0 };
                full[grid.index(ix + pad, gy)] = true;
            }
        }
    }
    Domain::new(grid, full)
}

/// A grid function, zero outside the mask of its domain.
#[derive(Debug, Clone)]
pub struct Field {
    domain: Arc<Domain>,
    values: Vec<f64>,
}

/// Positive and negative parts of a field and the masks of Ω⁺ = {u > 0} and
/// Ω⁻ = {u < 0}.
#[derive(Debug, Clone)]
pub struct SignSplit {
    pub plus: Field,
    pub minus: Field,
    pub plus_mask: Vec<bool>,
    pub minus_mask: Vec<bool>,
}

impl Field {
    pub fn zeros(domain: &Arc<Domain>) -> Self {
        Self { domain: Arc::clone(domain), values: vec![0.0; domain.grid().len()] }
    }

    /// Samples `f` at the centers of masked cells.
    pub fn from_fn(domain: &Arc<Domain>, f: impl Fn([f64; 2]) -> f64) -> Self {
        let grid = domain.grid();
        let values = (0..grid.len())
            .map(|i| if domain.mask()[i] { f(grid.center(i)) } else { 0.0 })
            .collect();
        let field = Self { domain: Arc::clone(domain), values };
        field.debug_check();
        field
    }

    /// Wraps raw values; rejects nonzero or non-finite off-mask entries.
    pub fn from_values(domain: &Arc<Domain>, values: Vec<f64>) -> Result<Self> {
        if values.len() != domain.grid().len() {
            return Err(Error::GridMismatch);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::BadParameter("field values must be finite".into()));
        }
        if values.iter().zip(domain.mask()).any(|(&v, &m)| !m && v != 0.0) {
            return Err(Error::BadParameter("field is nonzero outside the mask".into()));
        }
        Ok(Self { domain: Arc::clone(domain), values })
    }

    /// Values on masked cells only, in increasing cell order.
    pub fn from_masked(domain: &Arc<Domain>, masked: &[f64]) -> Result<Self> {
        if masked.len() != domain.cell_count() {
            return Err(Error::GridMismatch);
        }
        let mut values = vec![0.0; domain.grid().len()];
        for (v, i) in masked.iter().zip(domain.cells()) {
            values[i] = *v;
        }
        Self::from_values(domain, values)
    }

    pub fn domain(&self) -> &Arc<Domain> {
        &self.domain
    }

    pub fn grid(&self) -> &Grid {
        self.domain.grid()
    }

    pub fn mask(&self) -> &[bool] {
        self.domain.mask()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Values on masked cells in increasing cell order.
    pub fn masked_values(&self) -> Vec<f64> {
        self.values.iter().zip(self.mask()).filter(|(_, &m)| m).map(|(v, _)| *v).collect()
    }

    pub fn same_domain(&self, other: &Field) -> bool {
        Arc::ptr_eq(&self.domain, &other.domain) || *self.domain == *other.domain
    }

    /// Applies `f` on masked cells.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        let values = self
            .values
            .iter()
            .zip(self.mask())
            .map(|(&v, &m)| if m { f(v) } else { 0.0 })
            .collect();
        let out = Field { domain: Arc::clone(&self.domain), values };
        out.debug_check();
        out
    }

    pub fn scaled(&self, t: f64) -> Field {
        self.map(|v| t * v)
    }

    /// `self + t * other`.
    pub fn axpy(&self, t: f64, other: &Field) -> Result<Field> {
        if !self.same_domain(other) {
            return Err(Error::GridMismatch);
        }
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + t * b).collect();
        let out = Field { domain: Arc::clone(&self.domain), values };
        out.debug_check();
        Ok(out)
    }

    pub fn lp_norm(&self, p: f64) -> f64 {
        lp_norm(self, p)
    }

    pub fn normalize(&self, p: f64) -> Result<Field> {
        normalize(self, p)
    }

    pub fn split_signs(&self) -> SignSplit {
        split_signs(self)
    }

    pub fn min(&self) -> f64 {
        self.masked_values().into_iter().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.masked_values().into_iter().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Writes the dump format: a `dim,n,h,pad` header and its values, then
    /// one `index,x(,y),value,in_mask` row per cell of the padded grid.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let g = self.grid();
        writeln!(w, "dim,n,h,pad")?;
        writeln!(w, "{},{},{},{}", g.dim(), g.cells()[0], g.h(), g.pad())?;
        if g.dim() == 1 {
            writeln!(w, "index,x,value,in_mask")?;
        } else {
            writeln!(w, "index,x,y,value,in_mask")?;
        }
        for (i, (&v, &m)) in self.values.iter().zip(self.mask()).enumerate() {
            let c = g.center(i);
            if g.dim() == 1 {
                writeln!(w, "{i},{},{v},{}", c[0], m as u8)?;
            } else {
                writeln!(w, "{i},{},{},{v},{}", c[0], c[1], m as u8)?;
            }
        }
        Ok(())
    }

    fn debug_check(&self) {
        debug_assert!(
            self.values.iter().zip(self.mask()).all(|(&v, &m)| m || v == 0.0),
            "field nonzero off the mask"
        );
    }
}

/// `(Σ |u_i|^p h^N)^{1/p}`.
pub fn lp_norm(u: &Field, p: f64) -> f64 {
    let hn = u.grid().cell_volume();
    let s: f64 = u.values.iter().map(|v| v.abs().powf(p)).sum();
    (s * hn).powf(1.0 / p)
}

pub fn normalize(u: &Field, p: f64) -> Result<Field> {
    let n = lp_norm(u, p);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::ZeroField);
    }
    Ok(u.map(|v| v / n))
}

pub fn split_signs(u: &Field) -> SignSplit {
    let plus = u.map(|v| v.max(0.0));
    let minus = u.map(|v| (-v).max(0.0));
    let plus_mask = u.values.iter().map(|&v| v > 0.0).collect();
    let minus_mask = u.values.iter().map(|&v| v < 0.0).collect();
    SignSplit { plus, minus, plus_mask, minus_mask }
}
