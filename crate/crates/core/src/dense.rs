//! Dense symmetric eigensolver for the few smallest eigenpairs.
//!
//! Householder reduction to tridiagonal form on packed lower storage, Sturm
//! bisection for the eigenvalues and inverse iteration for the vectors. The
//! reduction fuses the rank-2 update of step k with the matrix-vector product
//! of step k+1, so each step streams the trailing matrix once.

use crate::error::{Error, Result};

/// Largest matrix the oracle accepts.
pub const MAX_DENSE: usize = 4000;

#[inline]
fn idx(i: usize, j: usize) -> usize {
    i * (i + 1) / 2 + j
}

fn householder(x: &[f64]) -> (Vec<f64>, f64, f64) {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return (vec![0.0; x.len()], 0.0, 0.0);
    }
    let alpha = if x[0] > 0.0 { -norm } else { norm };
    let mut v = x.to_vec();
    v[0] -= alpha;
    let vv: f64 = v.iter().map(|a| a * a).sum();
    (v, 2.0 / vv, alpha)
}

struct Tridiagonal {
    d: Vec<f64>,
    e: Vec<f64>,
    reflectors: Vec<(Vec<f64>, f64)>,
}

fn tridiagonalize(mut a: Vec<f64>, m: usize) -> Tridiagonal {
    let mut d = vec![0.0; m];
    let mut e = vec![0.0; m.saturating_sub(1)];
    let mut reflectors = Vec::with_capacity(m.saturating_sub(1));
    if m == 1 {
        d[0] = a[0];
        return Tridiagonal { d, e, reflectors };
    }
    let column = |a: &[f64], k: usize| -> Vec<f64> { (k + 1..m).map(|i| a[idx(i, k)]).collect() };

    let (mut v, mut beta, mut alpha) = householder(&column(&a, 0));
    // p = beta * B v for the trailing block of step 0
    let mut p = vec![0.0; m - 1];
    for i in 1..m {
        let row = &a[idx(i, 0)..];
        let vi = v[i - 1];
        let mut acc = 0.0;
        for j in 1..i {
            acc += row[j] * v[j - 1];
            p[j - 1] += row[j] * vi;
        }
        p[i - 1] += acc + row[i] * vi;
    }
    p.iter_mut().for_each(|x| *x *= beta);

    for k in 0..m - 1 {
        d[k] = a[idx(k, k)];
        e[k] = alpha;
        let kk = beta * v.iter().zip(&p).map(|(x, y)| x * y).sum::<f64>() / 2.0;
        let w: Vec<f64> = p.iter().zip(&v).map(|(pi, vi)| pi - kk * vi).collect();

        // column k+1 of the trailing block, including its diagonal
        for t in 0..v.len() {
            a[idx(k + 1 + t, k + 1)] -= v[t] * w[0] + w[t] * v[0];
        }
        if k + 1 == m - 1 {
            d[m - 1] = a[idx(m - 1, m - 1)];
            reflectors.push((v, beta));
            break;
        }
        let (v2, beta2, alpha2) = householder(&column(&a, k + 1));
        let mut p2 = vec![0.0; m - k - 2];
        for i in k + 2..m {
            let ti = i - k - 1;
            let (vi, wi, v2i) = (v[ti], w[ti], v2[i - k - 2]);
            let base = idx(i, 0);
            let row = &mut a[base + k + 2..=base + i];
            let (vs, ws) = (&v[1..], &w[1..]);
            let mut acc = 0.0;
            let n = row.len() - 1;
            for j in 0..n {
                let aij = row[j] - (vi * ws[j] + wi * vs[j]);
                row[j] = aij;
                acc += aij * v2[j];
                p2[j] += aij * v2i;
            }
            let aii = row[n] - 2.0 * vi * wi;
            row[n] = aii;
            p2[n] += acc + aii * v2i;
        }
        p2.iter_mut().for_each(|x| *x *= beta2);
        reflectors.push((std::mem::replace(&mut v, v2), beta));
        beta = beta2;
        alpha = alpha2;
        p = p2;
    }
    Tridiagonal { d, e, reflectors }
}

impl Tridiagonal {
    fn len(&self) -> usize {
        self.d.len()
    }

    fn pivmin(&self) -> f64 {
        let emax = self.e.iter().map(|x| x * x).fold(1.0, f64::max);
        f64::MIN_POSITIVE * emax
    }

    /// Number of eigenvalues strictly below `x` (Sturm sequence).
    fn count_below(&self, x: f64) -> usize {
        let pivmin = self.pivmin();
        let mut q = self.d[0] - x;
        if q.abs() < pivmin {
            q = -pivmin;
        }
        let mut count = usize::from(q < 0.0);
        for i in 1..self.len() {
            q = self.d[i] - x - self.e[i - 1] * self.e[i - 1] / q;
            if q.abs() < pivmin {
                q = -pivmin;
            }
            count += usize::from(q < 0.0);
        }
        count
    }

    fn gershgorin(&self) -> (f64, f64) {
        let m = self.len();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..m {
            let r = if i > 0 { self.e[i - 1].abs() } else { 0.0 }
                + if i + 1 < m { self.e[i].abs() } else { 0.0 };
            lo = lo.min(self.d[i] - r);
            hi = hi.max(self.d[i] + r);
        }
        (lo, hi)
    }

    /// The `k`-th smallest eigenvalue (0-based) by bisection.
    fn eigenvalue(&self, k: usize) -> f64 {
        let (mut lo, mut hi) = self.gershgorin();
        let span = hi - lo;
        lo -= 1e-14 * span.max(1.0);
        hi += 1e-14 * span.max(1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.count_below(mid) > k {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo <= 2.0 * f64::EPSILON * lo.abs().max(hi.abs()) + self.pivmin() {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    /// Inverse iteration for the eigenvector of `lambda`, orthogonalized
    /// against `previous`.
    fn eigenvector(&self, lambda: f64, previous: &[Vec<f64>]) -> Vec<f64> {
        let m = self.len();
        let norm = self.d.iter().map(|x| x.abs()).fold(0.0, f64::max)
            + 2.0 * self.e.iter().map(|x| x.abs()).fold(0.0, f64::max);
        let tiny = f64::EPSILON * norm.max(f64::MIN_POSITIVE);
        let lu = TriLu::factor(&self.d, &self.e, lambda, tiny);
        let mut y: Vec<f64> = (0..m).map(|i| 1.0 + 0.1 * ((i * 7919 % 101) as f64 / 101.0)).collect();
        for _ in 0..4 {
            lu.solve(&mut y);
            for q in previous {
                let s: f64 = q.iter().zip(&y).map(|(a, b)| a * b).sum();
                y.iter_mut().zip(q).for_each(|(a, b)| *a -= s * b);
            }
            let n = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            y.iter_mut().for_each(|v| *v /= n);
        }
        y
    }
}

/// LU with partial pivoting of `T - λI` for tridiagonal `T`.
struct TriLu {
    dl: Vec<f64>,
    dd: Vec<f64>,
    du: Vec<f64>,
    du2: Vec<f64>,
    swapped: Vec<bool>,
}

impl TriLu {
    fn factor(d: &[f64], e: &[f64], lambda: f64, tiny: f64) -> Self {
        let m = d.len();
        let mut dl = e.to_vec();
        let mut du = e.to_vec();
        let mut dd: Vec<f64> = d.iter().map(|x| x - lambda).collect();
        let mut du2 = vec![0.0; m.saturating_sub(2)];
        let mut swapped = vec![false; m.saturating_sub(1)];
        for i in 0..m.saturating_sub(1) {
            if dd[i].abs() >= dl[i].abs() {
                if dd[i] == 0.0 {
                    dd[i] = tiny;
                }
                let fact = dl[i] / dd[i];
                dl[i] = fact;
                dd[i + 1] -= fact * du[i];
            } else {
                let fact = dd[i] / dl[i];
                dd[i] = dl[i];
                dl[i] = fact;
                let temp = du[i];
                du[i] = dd[i + 1];
                dd[i + 1] = temp - fact * dd[i + 1];
                if i + 2 < m {
                    du2[i] = du[i + 1];
                    du[i + 1] = -fact * du[i + 1];
                }
                swapped[i] = true;
            }
        }
        for x in dd.iter_mut() {
            if x.abs() < tiny {
                *x = if *x < 0.0 { -tiny } else { tiny };
            }
        }
        Self { dl, dd, du, du2, swapped }
    }

    fn solve(&self, b: &mut [f64]) {
        let m = b.len();
        for i in 0..m.saturating_sub(1) {
            if self.swapped[i] {
                let temp = b[i];
                b[i] = b[i + 1];
                b[i + 1] = temp - self.dl[i] * b[i];
            } else {
                b[i + 1] -= self.dl[i] * b[i];
            }
        }
        for i in (0..m).rev() {
            let mut s = b[i];
            if i + 1 < m {
                s -= self.du[i] * b[i + 1];
            }
            if i + 2 < m {
                s -= self.du2[i] * b[i + 2];
            }
            b[i] = s / self.dd[i];
            if !b[i].is_finite() {
                b[i] = 0.0;
            }
        }
    }
}

/// The `count` smallest eigenvalues (ascending) and unit eigenvectors of the
/// symmetric matrix whose lower triangle is packed row by row in `a`.
pub fn smallest_eigenpairs(a: Vec<f64>, m: usize, count: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if m > MAX_DENSE {
        return Err(Error::TooLarge { size: m, limit: MAX_DENSE });
    }
    if m == 0 || a.len() != m * (m + 1) / 2 {
        return Err(Error::BadParameter("packed matrix size mismatch".into()));
    }
    let count = count.min(m);
    let t = tridiagonalize(a, m);
    let mut values = Vec::with_capacity(count);
    let mut tvecs: Vec<Vec<f64>> = Vec::with_capacity(count);
    for k in 0..count {
        let lambda = t.eigenvalue(k);
        let y = t.eigenvector(lambda, &tvecs);
        values.push(lambda);
        tvecs.push(y);
    }
    let vectors = tvecs
        .into_iter()
        .map(|mut y| {
            for (k, (v, beta)) in t.reflectors.iter().enumerate().rev() {
                let sub = &mut y[k + 1..];
                let s = beta * v.iter().zip(sub.iter()).map(|(a, b)| a * b).sum::<f64>();
                sub.iter_mut().zip(v).for_each(|(x, vi)| *x -= s * vi);
            }
            y
        })
        .collect();
    Ok((values, vectors))
}
