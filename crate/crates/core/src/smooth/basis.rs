//! B-spline bases with quantile knots and difference penalties.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::SmoothTermSpec;
use crate::error::{Error, Result};

/// A clamped B-spline basis. Outside `[lower, upper]` every basis function is
/// continued linearly from the nearest boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BSpline {
    /// Full knot vector, boundary knots repeated `degree + 1` times.
    pub knots: Vec<f64>,
    pub degree: usize,
}

impl BSpline {
    /// Basis with interior knots at quantiles of the distinct values of `x`.
    pub fn from_quantiles(x: &[f64], basis_size: usize, degree: usize) -> Result<Self> {
        if basis_size <= degree {
            return Err(Error::Config(format!(
                "basis_size ({basis_size}) must exceed degree ({degree})"
            )));
        }
        let mut distinct: Vec<f64> = x.iter().copied().filter(|v| v.is_finite()).collect();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        if distinct.len() < 2 {
            return Err(Error::Structure("spline needs at least two distinct values".into()));
        }
        let lower = distinct[0];
        let upper = *distinct.last().expect("non-empty");
        let n_interior = basis_size - degree - 1;
        let mut knots = vec![lower; degree + 1];
        for k in 1..=n_interior {
            let q = k as f64 / (n_interior + 1) as f64;
            knots.push(quantile_sorted(&distinct, q));
        }
        knots.extend(std::iter::repeat_n(upper, degree + 1));
        Ok(Self { knots, degree })
    }

    pub fn n_basis(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    /// Greville abscissae: the knot averages at which coefficients of a
    /// linear function `a + b x` equal `a + b xi_k`.
    pub fn greville(&self) -> Vec<f64> {
        (0..self.n_basis())
            .map(|k| self.knots[k + 1..=k + self.degree].iter().sum::<f64>() / self.degree as f64)
            .collect()
    }

    pub fn lower(&self) -> f64 {
        self.knots[0]
    }

    pub fn upper(&self) -> f64 {
        *self.knots.last().expect("non-empty knots")
    }

    /// Row of basis values at `x`. Rows sum to one everywhere.
    pub fn evaluate(&self, x: f64) -> Vec<f64> {
        let (lo, hi) = (self.lower(), self.upper());
        if x < lo {
            let mut v = self.values(lo, self.degree);
            let d = self.derivative(lo);
            for (vi, di) in v.iter_mut().zip(d) {
                *vi += (x - lo) * di;
            }
            v
        } else if x > hi {
            let mut v = self.values(hi, self.degree);
            let d = self.derivative(hi);
            for (vi, di) in v.iter_mut().zip(d) {
                *vi += (x - hi) * di;
            }
            v
        } else {
            self.values(x, self.degree)
        }
    }

    /// Cox-de Boor recursion for all basis functions of degree `p` on the
    /// knot vector, for `x` inside the boundary knots.
    fn values(&self, x: f64, p: usize) -> Vec<f64> {
        let t = &self.knots;
        let n0 = t.len() - 1;
        let hi = self.upper();
        let mut b = vec![0.0; n0];
        // The right boundary belongs to the last non-empty interval.
        let span = if x >= hi {
            (0..n0).rev().find(|&i| t[i] < t[i + 1])
        } else {
            (0..n0).find(|&i| t[i] <= x && x < t[i + 1])
        };
        if let Some(i) = span {
            b[i] = 1.0;
        }
        for d in 1..=p {
            let len = n0 - d;
            let mut next = vec![0.0; len];
            for (i, out) in next.iter_mut().enumerate() {
                let mut v = 0.0;
                let den_l = t[i + d] - t[i];
                if den_l > 0.0 {
                    v += (x - t[i]) / den_l * b[i];
                }
                let den_r = t[i + d + 1] - t[i + 1];
                if den_r > 0.0 {
                    v += (t[i + d + 1] - x) / den_r * b[i + 1];
                }
                *out = v;
            }
            b = next;
        }
        b
    }

    /// First derivative of every basis function at `x` (inside the range).
    fn derivative(&self, x: f64) -> Vec<f64> {
        let p = self.degree;
        let n = self.n_basis();
        if p == 0 {
            return vec![0.0; n];
        }
        let t = &self.knots;
        let lower = self.values(x, p - 1);
        (0..n)
            .map(|i| {
                let mut v = 0.0;
                let den_l = t[i + p] - t[i];
                if den_l > 0.0 {
                    v += p as f64 / den_l * lower[i];
                }
                let den_r = t[i + p + 1] - t[i + 1];
                if den_r > 0.0 {
                    v -= p as f64 / den_r * lower[i + 1];
                }
                v
            })
            .collect()
    }
}

/// Type-7 quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `D'D` for the `order`-th difference operator on `k` coefficients.
pub fn difference_penalty(k: usize, order: usize) -> DMatrix<f64> {
    let mut d = DMatrix::<f64>::identity(k, k);
    for _ in 0..order {
        let rows = d.nrows();
        let mut next = DMatrix::<f64>::zeros(rows - 1, k);
        for r in 0..rows - 1 {
            for c in 0..k {
                next[(r, c)] = d[(r + 1, c)] - d[(r, c)];
            }
        }
        d = next;
    }
    d.transpose() * d
}

/// `D'D` for scaled divided differences of the coefficients over the
/// Greville abscissae, rescaled to unit mean spacing. Equals
/// [`difference_penalty`] for equally spaced abscissae; for any knots the
/// null space of the order-2 penalty is exactly the linear functions.
pub fn spline_penalty(spline: &BSpline, order: usize) -> DMatrix<f64> {
    let k = spline.n_basis();
    let xi = spline.greville();
    let span = xi[k - 1] - xi[0];
    if spline.degree == 0 || span <= 0.0 {
        return difference_penalty(k, order);
    }
    let xi: Vec<f64> = xi.iter().map(|v| (v - xi[0]) / span * (k - 1) as f64).collect();
    let mut d = DMatrix::<f64>::identity(k, k);
    for r in 1..=order {
        let rows = d.nrows();
        let mut next = DMatrix::<f64>::zeros(rows - 1, k);
        for i in 0..rows - 1 {
            let h = (xi[i + r] - xi[i]) / r as f64;
            for c in 0..k {
                next[(i, c)] = (d[(i + 1, c)] - d[(i, c)]) / h;
            }
        }
        d = next;
    }
    d.transpose() * d
}

/// Raw (unconstrained) B-spline basis matrix and its difference penalty.
///
/// Fails with a structural error when `x` has fewer than `basis_size`
/// distinct values; callers building models fall back to a linear term.
pub fn build_spline_basis(x: &[f64], spec: &SmoothTermSpec) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    spec.validate()?;
    let mut distinct: Vec<f64> = x.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < spec.basis_size {
        return Err(Error::Structure(format!(
            "`{}` has {} distinct values, fewer than basis_size {}",
            spec.variable,
            distinct.len(),
            spec.basis_size
        )));
    }
    let spline = BSpline::from_quantiles(x, spec.basis_size, spec.degree)?;
    let k = spline.n_basis();
    let mut basis = DMatrix::<f64>::zeros(x.len(), k);
    for (r, &xi) in x.iter().enumerate() {
        for (c, v) in spline.evaluate(xi).into_iter().enumerate() {
            basis[(r, c)] = v;
        }
    }
    Ok((basis, spline_penalty(&spline, spec.penalty_order)))
}
