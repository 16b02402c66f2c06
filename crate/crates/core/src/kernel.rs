//! Radial convolution kernels J with compact support.
//!
//! Every kernel carries a `weight` multiplier so experiments can fade the
//! nonlocal term out continuously; `weight = 0` (or family `none`) leaves the
//! purely local operator.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    None,
    Tent,
    TruncatedGaussian,
    Bump,
    TruncatedFractional,
}

/// Serialized kernel description, e.g. `{"family":"tent","radius":0.2}`.
/// The fractional family takes `s`, `p`, `epsilon` and `r_cut` instead of a
/// radius.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub family: Family,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_cut: Option<f64>,
}

impl KernelSpec {
    pub fn none() -> Self {
        Self::compact(Family::None, 0.0)
    }

    pub fn tent(radius: f64) -> Self {
        Self::compact(Family::Tent, radius)
    }

    pub fn compact(family: Family, radius: f64) -> Self {
        Self { family, radius: Some(radius), weight: None, s: None, p: None, epsilon: None, r_cut: None }
    }

    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = Some(weight);
        self
    }

    /// Radius the grid padding has to cover.
    pub fn support_radius(&self) -> f64 {
        match self.family {
            Family::None => 0.0,
            Family::TruncatedFractional => self.r_cut.unwrap_or(0.0),
            _ => self.radius.unwrap_or(0.0),
        }
    }

    pub fn build(&self, dim: usize) -> Result<Kernel> {
        Kernel::from_spec(self, dim)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Profile {
    None,
    Tent,
    Gaussian,
    Bump,
    Fractional { s: f64, p: f64, epsilon: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    profile: Profile,
    radius: f64,
    norm_const: f64,
    weight: f64,
    dim: usize,
}

const GAUSS_SHARPNESS: f64 = 4.5;

impl Kernel {
    pub fn from_spec(spec: &KernelSpec, dim: usize) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::BadParameter(format!("kernel dimension {dim}")));
        }
        let weight = spec.weight.unwrap_or(1.0);
        if !(weight >= 0.0 && weight.is_finite()) {
            return Err(Error::BadParameter(format!("kernel weight {weight} must be >= 0")));
        }
        let radius = || match spec.radius {
            Some(r) if r > 0.0 && r.is_finite() => Ok(r),
            other => Err(Error::BadParameter(format!("kernel radius {other:?} must be positive"))),
        };
        let kernel = match spec.family {
            Family::None => Self { profile: Profile::None, radius: 0.0, norm_const: 0.0, weight: 0.0, dim },
            Family::Tent => Self::tent(radius()?, dim),
            Family::TruncatedGaussian => Self::compact(Profile::Gaussian, radius()?, dim),
            Family::Bump => Self::compact(Profile::Bump, radius()?, dim),
            Family::TruncatedFractional => {
                let need = |v: Option<f64>, name: &str| {
                    v.ok_or_else(|| Error::BadParameter(format!("fractional kernel needs {name}")))
                };
                fractional_kernel(
                    need(spec.s, "s")?,
                    need(spec.p, "p")?,
                    need(spec.epsilon, "epsilon")?,
                    need(spec.r_cut, "r_cut")?,
                    dim,
                )?
            }
        };
        Ok(kernel.with_weight(weight))
    }

    /// `J(x) = c (1 - |x|/r)` with `c = 1/r` in 1D and `3/(π r²)` in 2D.
    pub fn tent(radius: f64, dim: usize) -> Self {
        let norm_const = if dim == 1 { 1.0 / radius } else { 3.0 / (PI * radius * radius) };
        Self { profile: Profile::Tent, radius, norm_const, weight: 1.0, dim }
    }

    pub fn truncated_gaussian(radius: f64, dim: usize) -> Self {
        Self::compact(Profile::Gaussian, radius, dim)
    }

    pub fn bump(radius: f64, dim: usize) -> Self {
        Self::compact(Profile::Bump, radius, dim)
    }

    fn compact(profile: Profile, radius: f64, dim: usize) -> Self {
        let raw = Self { profile, radius, norm_const: 1.0, weight: 1.0, dim };
        let mass = radial_integral(|rho| raw.profile_value(rho), radius, dim);
        Self { norm_const: 1.0 / mass, ..raw }
    }

    /// Same profile with the multiplier replaced.
    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = if self.profile == Profile::None { 0.0 } else { weight };
        self
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn norm_const(&self) -> f64 {
        self.norm_const
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn family(&self) -> Family {
        match self.profile {
            Profile::None => Family::None,
            Profile::Tent => Family::Tent,
            Profile::Gaussian => Family::TruncatedGaussian,
            Profile::Bump => Family::Bump,
            Profile::Fractional { .. } => Family::TruncatedFractional,
        }
    }

    /// Whether the kernel contributes nothing (local-only operator).
    pub fn is_null(&self) -> bool {
        self.profile == Profile::None || self.weight == 0.0
    }

    /// Radially non-increasing on `[0, ∞)`. Fails for the fractional family,
    /// which vanishes inside its inner cutoff.
    pub fn is_decreasing(&self) -> bool {
        !matches!(self.profile, Profile::Fractional { .. }) || self.weight == 0.0
    }

    fn profile_value(&self, rho: f64) -> f64 {
        let r = self.radius;
        match self.profile {
            Profile::None => 0.0,
            _ if rho > r => 0.0,
            Profile::Tent => 1.0 - rho / r,
            Profile::Gaussian => {
                let q = rho / r;
                (-GAUSS_SHARPNESS * q * q).exp() - (-GAUSS_SHARPNESS).exp()
            }
            Profile::Bump => {
                let q = rho / r;
                if q >= 1.0 {
                    0.0
                } else {
                    (1.0 - 1.0 / (1.0 - q * q)).exp()
                }
            }
            Profile::Fractional { s, p, epsilon } => {
                if rho < epsilon {
                    0.0
                } else {
                    rho.powf(-(self.dim as f64 + p * s))
                }
            }
        }
    }

    /// `J` at radial distance `rho`.
    pub fn eval_radial(&self, rho: f64) -> f64 {
        self.weight * self.norm_const * self.profile_value(rho.abs())
    }

    pub fn eval(&self, displacement: &[f64]) -> f64 {
        let rho = displacement.iter().map(|x| x * x).sum::<f64>().sqrt();
        self.eval_radial(rho)
    }

    /// Lattice offsets `o ≠ 0` with `|o| h ≤ r` and `J(o h) > 0`, paired with
    /// the quadrature weight `J(o h) h^{2N}`.
    pub fn stencil(&self, h: f64) -> Vec<([isize; 2], f64)> {
        if self.is_null() {
            return Vec::new();
        }
        let reach = (self.radius / h * (1.0 + 1e-12)).floor() as isize;
        let h2n = h.powi(2 * self.dim as i32);
        let ys = if self.dim == 2 { -reach..=reach } else { 0..=0 };
        let mut out = Vec::new();
        for oy in ys {
            for ox in -reach..=reach {
                if ox == 0 && oy == 0 {
                    continue;
                }
                let rho = h * ((ox * ox + oy * oy) as f64).sqrt();
                if rho > self.radius * (1.0 + 1e-12) {
                    continue;
                }
                let j = self.eval_radial(rho.min(self.radius));
                if j > 0.0 {
                    out.push(([ox, oy], j * h2n));
                }
            }
        }
        out
    }

    /// Human-readable label for result tables (no commas).
    pub fn descriptor(&self) -> String {
        let w = if self.weight != 1.0 { format!(";w={}", self.weight) } else { String::new() };
        match self.profile {
            Profile::None => "none".to_string(),
            Profile::Tent => format!("tent(r={}{w})", self.radius),
            Profile::Gaussian => format!("truncated_gaussian(r={}{w})", self.radius),
            Profile::Bump => format!("bump(r={}{w})", self.radius),
            Profile::Fractional { s, p, epsilon } => format!(
                "fractional (truncated)(s={s};p={p};eps={epsilon};r_cut={}{w})",
                self.radius
            ),
        }
    }
}

/// Outcome of a Riemann-sum check of `∫ J = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub value: f64,
    pub normalized: bool,
}

/// Riemann sum of `J` over the lattice `quadrature_h · Z^N`. The fractional
/// family is not normalized by construction and is reported as an error that
/// carries the raw value.
pub fn normalization_check(k: &Kernel, quadrature_h: f64) -> Result<Normalization> {
    if k.profile == Profile::None {
        return Ok(Normalization { value: 0.0, normalized: false });
    }
    if !(quadrature_h > 0.0 && quadrature_h <= k.radius / 8.0 * (1.0 + 1e-12)) {
        return Err(Error::BadParameter(format!(
            "quadrature spacing {quadrature_h} must be in (0, r/8]"
        )));
    }
    let mut value = k.eval_radial(0.0) * quadrature_h.powi(k.dim as i32);
    // stencil weights are J h^{2N}; rescale to J h^N
    let hn = quadrature_h.powi(k.dim as i32);
    value += k.stencil(quadrature_h).iter().map(|(_, w)| w / hn).sum::<f64>();
    if let Profile::Fractional { .. } = k.profile {
        return Err(Error::NotNormalizable { value });
    }
    Ok(Normalization { value, normalized: (value - 1.0).abs() <= 1e-4 })
}

/// Doubly truncated fractional kernel `|x|^{-(N+ps)}` on `ε ≤ |x| ≤ R_cut`.
pub fn fractional_kernel(s: f64, p: f64, epsilon: f64, r_cut: f64, dim: usize) -> Result<Kernel> {
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::InvalidOrder(format!("s = {s} outside (0, 1)")));
    }
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::InvalidOrder(format!("p = {p} must exceed 1")));
    }
    if dim as f64 <= p * s {
        return Err(Error::InvalidOrder(format!("N = {dim} <= ps = {}", p * s)));
    }
    if !(epsilon > 0.0 && epsilon < r_cut && r_cut.is_finite()) {
        return Err(Error::BadParameter(format!(
            "need 0 < epsilon < r_cut, got {epsilon}, {r_cut}"
        )));
    }
    Ok(Kernel {
        profile: Profile::Fractional { s, p, epsilon },
        radius: r_cut,
        norm_const: 1.0,
        weight: 1.0,
        dim,
    })
}

/// `∫_{R^N} f(|x|) dx` for a profile supported on `[0, r]`.
fn radial_integral(f: impl Fn(f64) -> f64, r: f64, dim: usize) -> f64 {
    if dim == 1 {
        2.0 * adaptive_simpson(&f, 0.0, r, 1e-13)
    } else {
        2.0 * PI * adaptive_simpson(&|rho| f(rho) * rho, 0.0, r, 1e-13)
    }
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
            + recurse(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = simpson(fa, fm, fb, a, b);
    recurse(f, a, b, fa, fm, fb, whole, tol, 40)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tent_values() {
        let k = Kernel::tent(1.0, 1);
        assert!((k.eval(&[0.0]) - 1.0).abs() < 1e-15);
        assert_eq!(k.eval(&[2.0]), 0.0);
        assert!((k.eval(&[0.3]) - k.eval(&[-0.3])).abs() == 0.0);
    }

    #[test]
    fn compact_families_vanish_beyond_radius() {
        for dim in [1, 2] {
            for k in [Kernel::tent(0.3, dim), Kernel::truncated_gaussian(0.3, dim), Kernel::bump(0.3, dim)] {
                assert_eq!(k.eval_radial(0.6), 0.0);
                assert!(k.eval_radial(0.0) > 0.0);
                let mut last = f64::INFINITY;
                for i in 0..=60 {
                    let v = k.eval_radial(0.3 * i as f64 / 60.0);
                    assert!(v <= last && v >= 0.0);
                    last = v;
                }
            }
        }
    }

    #[test]
    fn riemann_sums_are_one() {
        let k = Kernel::tent(1.0, 1);
        let n = normalization_check(&k, 0.01).unwrap();
        assert!((n.value - 1.0).abs() < 1e-4 && n.normalized);
        for dim in [1, 2] {
            for k in [Kernel::tent(0.2, dim), Kernel::truncated_gaussian(0.2, dim), Kernel::bump(0.2, dim)] {
                let n = normalization_check(&k, 0.2 / 400.0).unwrap();
                assert!((n.value - 1.0).abs() < 1e-4, "{:?} dim {dim}: {}", k.family(), n.value);
            }
        }
    }

    #[test]
    fn scaled_bump_flags_violation() {
        let k = Kernel::bump(0.5, 1).with_weight(2.0);
        let n = normalization_check(&k, 0.5 / 200.0).unwrap();
        assert!((n.value - 2.0).abs() < 1e-4);
        assert!(!n.normalized);
    }

    #[test]
    fn coarse_quadrature_rejected() {
        assert!(normalization_check(&Kernel::tent(1.0, 1), 0.2).is_err());
    }

    #[test]
    fn fractional_window() {
        let k = fractional_kernel(0.4, 2.0, 0.1, 2.0, 1).unwrap();
        assert!((k.eval(&[1.0]) - 1.0).abs() < 1e-15);
        assert_eq!(k.eval(&[0.05]), 0.0);
        assert_eq!(k.eval(&[2.5]), 0.0);
        assert!(!k.is_decreasing());
        match normalization_check(&k, 0.01) {
            Err(Error::NotNormalizable { value }) => assert!(value.is_finite() && value > 0.0),
            other => panic!("expected NotNormalizable, got {other:?}"),
        }
    }

    #[test]
    fn fractional_order_constraints() {
        assert!(matches!(fractional_kernel(0.5, 2.0, 0.1, 1.0, 1), Err(Error::InvalidOrder(_))));
        assert!(matches!(fractional_kernel(1.0, 2.0, 0.1, 1.0, 2), Err(Error::InvalidOrder(_))));
        assert!(matches!(fractional_kernel(0.0, 2.0, 0.1, 1.0, 2), Err(Error::InvalidOrder(_))));
        assert!(fractional_kernel(0.5, 2.0, 0.1, 1.0, 2).is_ok());
    }

    #[test]
    fn spec_round_trip() {
        let spec: KernelSpec = serde_json::from_str(r#"{"family":"tent","radius":0.2}"#).unwrap();
        let k = spec.build(1).unwrap();
        assert_eq!(k, Kernel::tent(0.2, 1));
        let frac: KernelSpec = serde_json::from_str(
            r#"{"family":"truncated_fractional","s":0.3,"p":2,"epsilon":0.05,"r_cut":0.5}"#,
        )
        .unwrap();
        assert_eq!(frac.build(1).unwrap().family(), Family::TruncatedFractional);
        assert!(serde_json::from_str::<KernelSpec>(r#"{"family":"tent","radius":0.2,"x":1}"#).is_err());
        assert!(KernelSpec::compact(Family::Bump, -1.0).build(1).is_err());
    }

    #[test]
    fn stencil_is_symmetric() {
        let k = Kernel::tent(0.2, 2);
        let st = k.stencil(0.05);
        for (o, w) in &st {
            let mirror = st.iter().find(|(q, _)| q[0] == -o[0] && q[1] == -o[1]).unwrap();
            assert_eq!(*w, mirror.1);
        }
        assert!(Kernel::tent(0.2, 1).with_weight(0.0).stencil(0.05).is_empty());
    }
}
