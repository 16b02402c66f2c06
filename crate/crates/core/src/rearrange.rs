//! Discrete Schwarz symmetrization and the Pólya–Szegő check.
//!
//! `u*` lives on Ω*, the set of `|Ω|` cells closest to the mask centroid;
//! the values of `|u|` are sorted descending and dealt out in order of
//! increasing distance. Distances are compared in units of `h²` rounded to
//! 1e-9, ties go to the lower grid index, so symmetric cells really tie.

use std::sync::Arc;

use serde::Serialize;

use crate::energy::EnergyContext;
use crate::error::{Error, Result};
use crate::grid::{pad_for, Domain, Field, Grid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyParts {
    pub local: f64,
    pub nonlocal: f64,
    pub total: f64,
}

impl EnergyParts {
    pub fn of(ctx: &EnergyContext, u: &Field) -> Result<Self> {
        let local = ctx.local_energy(u)?;
        let nonlocal = ctx.nonlocal_energy(u)?;
        Ok(Self { local, nonlocal, total: local + nonlocal })
    }
}

#[derive(Debug, Clone)]
pub struct RearrangementResult {
    pub u_star: Field,
    pub energy_before: EnergyParts,
    pub energy_after: EnergyParts,
    /// `|‖u*‖_p - ‖u‖_p|`.
    pub norm_defect: f64,
    /// Whether `|u|` was used because `u` had negative values.
    pub took_abs: bool,
}

/// Cells ordered by distance from `c`, ties by index.
fn by_distance(grid: &Grid, cells: impl Iterator<Item = usize>, c: [f64; 2]) -> Vec<usize> {
    let h2 = grid.h() * grid.h();
    let mut keyed: Vec<(u64, usize)> = cells
        .map(|i| {
            let x = grid.center(i);
            let d2 = ((x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2)) / h2;
            ((d2 * 1e9).round() as u64, i)
        })
        .collect();
    keyed.sort_unstable();
    keyed.into_iter().map(|(_, i)| i).collect()
}

/// The ball Ω* with as many cells as `domain`, centered at its centroid.
/// Reuses `domain` when the two coincide and the grid when Ω* fits into it.
pub fn symmetrized_domain(domain: &Arc<Domain>, kernel_radius: f64) -> Result<Arc<Domain>> {
    let grid = domain.grid();
    let n = domain.cell_count();
    let c = domain.centroid();
    // the ball fits when none of the nearest cells of the whole padded grid
    // falls into the collar
    let chosen: Vec<usize> = by_distance(grid, 0..grid.len(), c).into_iter().take(n).collect();
    let fits = chosen.iter().all(|&i| grid.is_interior(i));
    if fits {
        if chosen.iter().all(|&i| domain.mask()[i]) {
            return Ok(Arc::clone(domain));
        }
        let mut mask = vec![false; grid.len()];
        chosen.iter().for_each(|&i| mask[i] = true);
        return Ok(Arc::new(domain.with_mask(mask)?));
    }
    // enlarge the box on the same lattice
    let h = grid.h();
    let dim = grid.dim();
    let r = match dim {
        1 => 0.5 * n as f64 * h,
        _ => (n as f64 / std::f64::consts::PI).sqrt() * h,
    } + 2.0 * h;
    let pad = pad_for(h, kernel_radius).max(grid.pad());
    let mut cells = [1usize; 2];
    let mut origin = [0.0; 2];
    for a in 0..dim {
        let first = ((c[a] - r - grid.origin()[a]) / h).floor();
        let last = ((c[a] + r - grid.origin()[a]) / h).ceil();
        cells[a] = (last - first) as usize;
        origin[a] = grid.origin()[a] + (first - pad as f64) * h;
    }
    let big = Grid::new(dim, cells, h, origin, pad)?;
    let interior = (0..big.len()).filter(|&i| big.is_interior(i));
    let chosen: Vec<usize> = by_distance(&big, interior, c).into_iter().take(n).collect();
    let mut mask = vec![false; big.len()];
    chosen.iter().for_each(|&i| mask[i] = true);
    Ok(Arc::new(Domain::new(big, mask)?))
}

/// Schwarz symmetrization of `u` (of `|u|` if it changes sign) with the
/// energies of `ctx` evaluated before and after.
pub fn schwarz_symmetrize(ctx: &EnergyContext, u: &Field) -> Result<RearrangementResult> {
    if !Arc::ptr_eq(u.domain(), ctx.domain()) && **u.domain() != **ctx.domain() {
        return Err(Error::GridMismatch);
    }
    let took_abs = u.min() < 0.0;
    let u = if took_abs { u.map(f64::abs) } else { u.clone() };
    let star = symmetrized_domain(u.domain(), ctx.kernel().radius())?;
    let mut vals = u.masked_values();
    vals.sort_unstable_by(|a, b| b.total_cmp(a));
    let order = by_distance(star.grid(), star.cells().into_iter(), u.domain().centroid());
    let mut values = vec![0.0; star.grid().len()];
    for (&i, &v) in order.iter().zip(&vals) {
        values[i] = v;
    }
    let u_star = Field::from_values(&star, values)?;
    let energy_before = EnergyParts::of(ctx, &u)?;
    let energy_after = if Arc::ptr_eq(&star, ctx.domain()) {
        EnergyParts::of(ctx, &u_star)?
    } else {
        let star_ctx = EnergyContext::new(Arc::clone(&star), ctx.kernel().clone(), ctx.p())?;
        EnergyParts::of(&star_ctx, &u_star)?
    };
    let p = ctx.p();
    let norm_defect = (u_star.lp_norm(p) - u.lp_norm(p)).abs();
    Ok(RearrangementResult { u_star, energy_before, energy_after, norm_defect, took_abs })
}

#[derive(Debug, Clone, Serialize)]
pub struct PolyaSzegoReport {
    pub energy_before: EnergyParts,
    pub energy_after: EnergyParts,
    /// After minus before; positive values are violations.
    pub defect_local: f64,
    pub defect_nonlocal: f64,
    pub norm_defect: f64,
    /// Discretization slack `C h^{1/2} E(u)`.
    pub tol_h: f64,
    pub holds: bool,
}

/// Constant in the slack `tol_h = C h^{1/2} E(u)`.
pub const POLYA_SZEGO_C: f64 = 1.0;

pub fn polya_szego_check(ctx: &EnergyContext, u: &Field) -> Result<PolyaSzegoReport> {
    if !ctx.kernel().is_decreasing() {
        return Err(Error::KernelNotDecreasing);
    }
    let r = schwarz_symmetrize(ctx, u)?;
    let defect_local = r.energy_after.local - r.energy_before.local;
    let defect_nonlocal = r.energy_after.nonlocal - r.energy_before.nonlocal;
    let tol_h = POLYA_SZEGO_C * ctx.grid().h().sqrt() * r.energy_before.total;
    Ok(PolyaSzegoReport {
        energy_before: r.energy_before,
        energy_after: r.energy_after,
        defect_local,
        defect_nonlocal,
        norm_defect: r.norm_defect,
        tol_h,
        holds: defect_local <= tol_h && defect_nonlocal <= tol_h,
    })
}

/// `Σ |u_{i+1} - u_i|^p` over the sequence padded with a zero at each end.
pub fn chain_variation(u: &[f64], p: f64) -> f64 {
    let mut s = 0.0;
    let mut prev = 0.0;
    for &v in u.iter().chain(std::iter::once(&0.0)) {
        s += (v - prev).abs().powf(p);
        prev = v;
    }
    s
}

/// Symmetric-decreasing arrangement of a sequence: the largest value in the
/// middle (left-middle for even length), then alternating outwards, the
/// lower index first.
pub fn symmetric_decreasing(u: &[f64]) -> Vec<f64> {
    let n = u.len();
    let mut vals = u.to_vec();
    vals.sort_unstable_by(|a, b| b.total_cmp(a));
    let c = (n as f64 - 1.0) / 2.0;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| (a as f64 - c).abs().total_cmp(&(b as f64 - c).abs()).then(a.cmp(&b)));
    let mut out = vec![0.0; n];
    for (&i, v) in idx.iter().zip(vals) {
        out[i] = v;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::Discretization;
    use crate::grid::DomainSpec;
    use crate::kernel::KernelSpec;

    fn interval(n: usize) -> EnergyContext {
        Discretization::new(KernelSpec::tent(0.2), 2.0, n).build(&DomainSpec::interval(-0.5, 0.5)).unwrap()
    }

    #[test]
    fn five_cell_example_follows_tie_rule() {
        let ctx = interval(5);
        let d = ctx.domain();
        let u = Field::from_masked(d, &[0.0, 3.0, 1.0, 2.0, 0.0]).unwrap();
        let r = schwarz_symmetrize(&ctx, &u).unwrap();
        assert!(Arc::ptr_eq(r.u_star.domain(), d));
        assert_eq!(r.u_star.masked_values(), vec![0.0, 2.0, 3.0, 1.0, 0.0]);
    }

    #[test]
    fn radial_field_is_fixed_and_idempotent() {
        let ctx = Discretization::new(KernelSpec::tent(0.3), 2.0, 30)
            .build(&DomainSpec::ball(&[0.0, 0.0], 1.0))
            .unwrap();
        // exactly radial: mirror cells get bit-identical values
        let h = ctx.grid().h();
        let u = Field::from_fn(ctx.domain(), |x| {
            let k = ((x[0] * x[0] + x[1] * x[1]) / (h * h) * 1e6).round() * 1e-6 * h * h;
            (1.0 - k).max(0.0) + 0.1
        });
        let r = schwarz_symmetrize(&ctx, &u).unwrap();
        assert!(Arc::ptr_eq(r.u_star.domain(), ctx.domain()));
        assert_eq!(r.u_star.values(), u.values());
        let twice = schwarz_symmetrize(&ctx, &r.u_star).unwrap();
        assert_eq!(twice.u_star.values(), r.u_star.values());
        let rep = polya_szego_check(&ctx, &u).unwrap();
        assert_eq!(rep.defect_local, 0.0);
        assert_eq!(rep.defect_nonlocal, 0.0);
    }

    #[test]
    fn square_moves_to_enlarged_ball() {
        let ctx = Discretization::new(KernelSpec::none(), 2.0, 20)
            .build(&DomainSpec::rect(&[0.0, 0.0], &[1.0, 1.0]))
            .unwrap();
        let u = Field::from_fn(ctx.domain(), |x| (std::f64::consts::PI * x[0]).sin() * (std::f64::consts::PI * x[1]).sin());
        let r = schwarz_symmetrize(&ctx, &u).unwrap();
        let star = r.u_star.domain();
        assert_eq!(star.cell_count(), ctx.domain().cell_count());
        assert!(r.norm_defect < 1e-12);
        let mut a = u.masked_values();
        let mut b = r.u_star.masked_values();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        assert_eq!(a, b);
        assert!(r.energy_after.local < r.energy_before.local);
    }

    #[test]
    fn sign_changing_input_is_flagged() {
        let ctx = interval(10);
        let u = Field::from_fn(ctx.domain(), |x| x[0]);
        let r = schwarz_symmetrize(&ctx, &u).unwrap();
        assert!(r.took_abs);
        assert!(r.u_star.min() >= 0.0);
    }

    #[test]
    fn organ_pipe_shape() {
        assert_eq!(symmetric_decreasing(&[1.0, 5.0, 2.0, 4.0, 3.0]), vec![2.0, 4.0, 5.0, 3.0, 1.0]);
        assert_eq!(chain_variation(&[1.0, 2.0], 2.0), 1.0 + 1.0 + 4.0);
    }
}
