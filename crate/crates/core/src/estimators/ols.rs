use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinFit {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub weighted_rss: f64,
}

impl LinFit {
    pub fn coef(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.coefficients[i])
    }
}

/// Weighted least squares of `y` on the regressor rows `x` (include a column
/// of ones for an intercept).
pub fn weighted_ols(y: &[f64], x: &[Vec<f64>], weights: &[f64], names: &[&str]) -> Result<LinFit> {
    let n = y.len();
    let p = names.len();
    if x.len() != n || weights.len() != n {
        return Err(Error::Argument(format!(
            "{n} responses, {} regressor rows, {} weights",
            x.len(),
            weights.len()
        )));
    }
    if let Some(row) = x.iter().find(|r| r.len() != p) {
        return Err(Error::Argument(format!("regressor row of length {} for {p} names", row.len())));
    }
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
        return Err(Error::Argument(format!("weights must be positive and finite, got {w}")));
    }
    let mut gram = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    for ((row, &yi), &w) in x.iter().zip(y).zip(weights) {
        for a in 0..p {
            rhs[a] += w * row[a] * yi;
            for b in 0..p {
                gram[(a, b)] += w * row[a] * row[b];
            }
        }
    }
    let scale = gram.diagonal().amax();
    let chol = gram
        .clone()
        .cholesky()
        .filter(|c| c.l().diagonal().iter().all(|d| d * d > 1e-12 * scale))
        .ok_or_else(|| Error::Rank("weighted Gram matrix is singular".into()))?;
    let theta = chol.solve(&rhs);
    let weighted_rss = x
        .iter()
        .zip(y)
        .zip(weights)
        .map(|((row, &yi), &w)| {
            let fit: f64 = row.iter().zip(theta.iter()).map(|(a, b)| a * b).sum();
            w * (yi - fit) * (yi - fit)
        })
        .sum();
    Ok(LinFit {
        names: names.iter().map(|s| s.to_string()).collect(),
        coefficients: theta.as_slice().to_vec(),
        weighted_rss,
    })
}
