//! Penalized iteratively reweighted least squares for the logit link.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One block of design columns sharing a smoothing parameter.
#[derive(Debug, Clone)]
pub struct TermBlock {
    pub name: String,
    pub basis: DMatrix<f64>,
    /// `None` for unpenalized (parametric) blocks.
    pub penalty: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IrlsOptions {
    pub max_iter: usize,
    /// Relative change in penalized deviance that ends the iteration.
    pub tol: f64,
}

impl Default for IrlsOptions {
    fn default() -> Self {
        Self {
            max_iter: 50,
            tol: 1e-8,
        }
    }
}

/// Result of a penalized logistic fit on a fixed design.
#[derive(Debug, Clone)]
pub struct LogitFit {
    /// Intercept first, then the block columns in order.
    pub coefficients: DVector<f64>,
    pub eta: Vec<f64>,
    pub deviance: f64,
    pub penalized_deviance: f64,
    /// Penalized deviance after the start and after every iteration.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub final_change: f64,
    pub edf: f64,
    /// Largest absolute component of the penalized score at the solution.
    pub score_norm: f64,
    pub warnings: Vec<String>,
}

/// Separation threshold on the linear predictor.
pub const SEPARATION_ETA: f64 = 30.0;

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn inv_logit(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// Bernoulli deviance evaluated from the linear predictor.
pub fn deviance(y: &[f64], eta: &[f64]) -> f64 {
    2.0 * y
        .iter()
        .zip(eta)
        .map(|(&yi, &e)| yi * softplus(-e) + (1.0 - yi) * softplus(e))
        .sum::<f64>()
}

/// Design matrix with a leading intercept column, and the block-diagonal
/// penalty `sum_t lambda_t P_t` over the same columns.
pub fn assemble(blocks: &[TermBlock], lambdas: &[f64], n: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if lambdas.len() != blocks.len() {
        return Err(Error::Argument(format!(
            "{} lambdas for {} term blocks",
            lambdas.len(),
            blocks.len()
        )));
    }
    let p = 1 + blocks.iter().map(|b| b.basis.ncols()).sum::<usize>();
    let mut x = DMatrix::<f64>::zeros(n, p);
    let mut s = DMatrix::<f64>::zeros(p, p);
    x.column_mut(0).fill(1.0);
    let mut col = 1;
    for (b, &lambda) in blocks.iter().zip(lambdas) {
        if b.basis.nrows() != n {
            return Err(Error::Argument(format!(
                "block `{}` has {} rows, expected {n}",
                b.name,
                b.basis.nrows()
            )));
        }
        let k = b.basis.ncols();
        x.view_mut((0, col), (n, k)).copy_from(&b.basis);
        if let Some(pen) = &b.penalty {
            if pen.nrows() != k || pen.ncols() != k {
                return Err(Error::Argument(format!(
                    "penalty of block `{}` is {}x{}, expected {k}x{k}",
                    b.name,
                    pen.nrows(),
                    pen.ncols()
                )));
            }
            if !(lambda >= 0.0 && lambda.is_finite()) {
                return Err(Error::Argument(format!(
                    "lambda for `{}` must be finite and >= 0, got {lambda}",
                    b.name
                )));
            }
            s.view_mut((col, col), (k, k)).copy_from(&(pen * lambda));
        }
        col += k;
    }
    Ok((x, s))
}

fn check_response(y: &[f64]) -> Result<()> {
    if y.is_empty() {
        return Err(Error::Argument("empty response".into()));
    }
    if let Some(bad) = y.iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::Argument(format!("response must be 0/1, found {bad}")));
    }
    Ok(())
}

/// Fit a penalized logistic regression on `blocks` plus an intercept.
pub fn fit_penalized_logit(
    y: &[f64],
    blocks: &[TermBlock],
    lambdas: &[f64],
    opts: &IrlsOptions,
) -> Result<LogitFit> {
    check_response(y)?;
    let (x, s) = assemble(blocks, lambdas, y.len())?;
    fit_design(&x, y, &s, None, opts)
}

fn weighted_crossprod(x: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let mut xw = x.clone();
    for (r, &wi) in w.iter().enumerate() {
        let sw = wi.sqrt();
        for c in 0..xw.ncols() {
            xw[(r, c)] *= sw;
        }
    }
    xw.tr_mul(&xw)
}

/// Penalized IRLS on an explicit design. `start` warm-starts the coefficients.
pub(crate) fn fit_design(
    x: &DMatrix<f64>,
    y: &[f64],
    s: &DMatrix<f64>,
    start: Option<&DVector<f64>>,
    opts: &IrlsOptions,
) -> Result<LogitFit> {
    let n = y.len();
    let p = x.ncols();
    let yv = DVector::from_column_slice(y);
    let mut beta = match start {
        Some(b) if b.len() == p => b.clone(),
        _ => {
            let mut b = DVector::zeros(p);
            let ybar = (yv.sum() / n as f64).clamp(1e-6, 1.0 - 1e-6);
            b[0] = (ybar / (1.0 - ybar)).ln();
            b
        }
    };
    let pen_dev = |b: &DVector<f64>| -> (f64, DVector<f64>, f64) {
        let eta = x * b;
        let dev = deviance(y, eta.as_slice());
        let pen = b.dot(&(s * b));
        (dev + pen, eta, dev)
    };
    let (mut pdev, mut eta, mut dev) = pen_dev(&beta);
    let mut trace = vec![pdev];
    let mut change = f64::INFINITY;
    let mut iterations = 0;
    let score_tol = 1e-8 * n as f64;
    let mut converged = false;

    while iterations < opts.max_iter {
        iterations += 1;
        let mu: Vec<f64> = eta.iter().map(|&e| inv_logit(e)).collect();
        let w: Vec<f64> = mu.iter().map(|m| (m * (1.0 - m)).max(1e-12)).collect();
        let resid = DVector::from_iterator(n, y.iter().zip(&mu).map(|(yi, mi)| yi - mi));
        let h = weighted_crossprod(x, &w) + s;
        // Newton direction for the penalized log-likelihood.
        let grad = x.tr_mul(&resid) - s * &beta;
        let chol = h.clone().cholesky().ok_or_else(|| {
            Error::Rank("penalized information matrix is not positive definite".into())
        })?;
        let step = chol.solve(&grad);

        let mut t = 1.0;
        let mut halvings = 0;
        let (cand, cand_pdev, cand_eta, cand_dev) = loop {
            let cand = &beta + &step * t;
            let (cp, ce, cd) = pen_dev(&cand);
            if cp.is_finite() && (cp <= pdev || halvings >= 40) {
                break (cand, cp, ce, cd);
            }
            t *= 0.5;
            halvings += 1;
        };
        if cand_pdev > pdev {
            // Step halving exhausted: no descent possible from here. Under a
            // very large penalty the score is dominated by rounding in `S b`,
            // so a negligible last change also counts as converged.
            converged = grad.amax() < score_tol.max(1e-6 * n as f64) || change < opts.tol;
            change = 0.0;
            break;
        }
        change = (pdev - cand_pdev).abs() / (cand_pdev.abs() + 0.1);
        beta = cand;
        pdev = cand_pdev;
        eta = cand_eta;
        dev = cand_dev;
        trace.push(pdev);
        if change < opts.tol {
            let mu: Vec<f64> = eta.iter().map(|&e| inv_logit(e)).collect();
            let resid = DVector::from_iterator(n, y.iter().zip(&mu).map(|(yi, mi)| yi - mi));
            let score = (x.tr_mul(&resid) - s * &beta).amax();
            if score < score_tol || change < opts.tol * 1e-4 {
                converged = true;
                break;
            }
        }
    }
    if !converged {
        return Err(Error::Convergence {
            iterations,
            trace,
        });
    }

    let mu: Vec<f64> = eta.iter().map(|&e| inv_logit(e)).collect();
    let w: Vec<f64> = mu.iter().map(|m| (m * (1.0 - m)).max(1e-12)).collect();
    let xtwx = weighted_crossprod(x, &w);
    let h = &xtwx + s;
    let chol = h
        .cholesky()
        .ok_or_else(|| Error::Rank("penalized information matrix is not positive definite".into()))?;
    let edf = chol.solve(&xtwx).trace();
    let resid = DVector::from_iterator(n, y.iter().zip(&mu).map(|(yi, mi)| yi - mi));
    let score_norm = (x.tr_mul(&resid) - s * &beta).amax();

    let mut warnings = Vec::new();
    let max_eta = eta.iter().fold(0.0f64, |a, e| a.max(e.abs()));
    if max_eta > SEPARATION_ETA {
        warnings.push(format!(
            "possible separation: |linear predictor| reaches {max_eta:.1}"
        ));
    }

    Ok(LogitFit {
        coefficients: beta,
        eta: eta.as_slice().to_vec(),
        deviance: dev,
        penalized_deviance: pdev,
        trace,
        iterations,
        final_change: change,
        edf,
        score_norm,
        warnings,
    })
}

/// `n * deviance / (n - edf)^2`.
pub fn gcv_score(n: usize, deviance: f64, edf: f64) -> f64 {
    let n = n as f64;
    let denom = n - edf;
    if denom <= 0.0 {
        return f64::INFINITY;
    }
    n * deviance / (denom * denom)
}
