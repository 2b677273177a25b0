use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::cox::QUADRATIC_REGION;
use crate::error::{Error, Result};

/// Covariates of a case and its matched controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClogitSet {
    pub case: Vec<f64>,
    pub controls: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClogitFit {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub loglik: f64,
    pub iterations: usize,
}

impl ClogitFit {
    pub fn coef(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.coefficients[i])
    }
}

fn evaluate(sets: &[ClogitSet], alpha: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
    let p = alpha.len();
    let mut ll = 0.0;
    let mut score = DVector::zeros(p);
    let mut info = DMatrix::zeros(p, p);
    for set in sets {
        // Differences from the case keep the exponentials bounded.
        let diffs: Vec<DVector<f64>> = set
            .controls
            .iter()
            .map(|c| DVector::from_iterator(p, c.iter().zip(&set.case).map(|(a, b)| a - b)))
            .collect();
        let e: Vec<f64> = diffs.iter().map(|d| d.dot(alpha).exp()).collect();
        let s0 = 1.0 + e.iter().sum::<f64>();
        let mut s1 = DVector::zeros(p);
        let mut s2 = DMatrix::zeros(p, p);
        for (d, &ei) in diffs.iter().zip(&e) {
            s1 += d * ei;
            s2 += d * d.transpose() * ei;
        }
        let mean = &s1 / s0;
        ll -= s0.ln();
        score -= &mean;
        info += &s2 / s0 - &mean * mean.transpose();
    }
    (ll, score, info)
}

/// Conditional logistic regression over matched sets by Newton-Raphson.
/// Converges when the per-set score is below `tol`.
pub fn clogit_fit(sets: &[ClogitSet], names: &[&str], tol: f64) -> Result<ClogitFit> {
    let p = names.len();
    for s in sets {
        if s.case.len() != p || s.controls.iter().any(|c| c.len() != p) {
            return Err(Error::Argument(format!("matched set covariates must have length {p}")));
        }
    }
    let informative: Vec<ClogitSet> = sets
        .iter()
        .filter(|s| s.controls.iter().any(|c| c != &s.case))
        .cloned()
        .collect();
    if informative.is_empty() {
        return Err(Error::NotIdentifiable("no discordant matched set".into()));
    }
    let mut alpha = DVector::zeros(p);
    let (mut ll, mut score, mut info) = evaluate(&informative, &alpha);
    let max_iter = 50;
    let scale = informative.len() as f64;
    for iterations in 0..=max_iter {
        if score.amax() / scale < tol {
            return Ok(ClogitFit {
                names: names.iter().map(|s| s.to_string()).collect(),
                coefficients: alpha.as_slice().to_vec(),
                loglik: ll,
                iterations,
            });
        }
        if iterations == max_iter {
            break;
        }
        let step = info
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotIdentifiable("conditional information matrix is singular".into()))?
            .solve(&score);
        let quadratic = score.dot(&step) < QUADRATIC_REGION * (1.0 + ll.abs());
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..40 {
            let cand = &alpha + &step * t;
            let (cl, cs, ci) = evaluate(&informative, &cand);
            if cl.is_finite() && (cl >= ll || quadratic) {
                alpha = cand;
                ll = cl;
                score = cs;
                info = ci;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if alpha.amax() > 20.0 {
            return Err(Error::NotIdentifiable("conditional likelihood is monotone".into()));
        }
        if !moved {
            break;
        }
    }
    Err(Error::Convergence {
        iterations: max_iter,
        trace: vec![ll],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(case: f64, control: f64) -> ClogitSet {
        ClogitSet {
            case: vec![case],
            controls: vec![vec![control]],
        }
    }

    #[test]
    fn discordant_pairs() {
        let mut sets = vec![pair(1.0, 0.0); 6];
        sets.extend(vec![pair(0.0, 1.0); 3]);
        let fit = clogit_fit(&sets, &["x"], 1e-10).unwrap();
        assert!((fit.coefficients[0] - 2f64.ln()).abs() < 1e-9);
        sets.push(pair(1.0, 1.0));
        let again = clogit_fit(&sets, &["x"], 1e-10).unwrap();
        assert_eq!(again.coefficients, fit.coefficients);
    }

    #[test]
    fn all_concordant() {
        assert!(matches!(
            clogit_fit(&[pair(1.0, 1.0), pair(0.0, 0.0)], &["x"], 1e-10),
            Err(Error::NotIdentifiable(_))
        ));
    }
}
