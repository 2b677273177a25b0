//! Smoothing-parameter selection by generalized cross-validation.

use std::collections::HashMap;

use nalgebra::DVector;

use super::irls::{assemble, fit_design, gcv_score, IrlsOptions, TermBlock};
use crate::error::{Error, Result};

/// Log-spaced default grid 1e-4 .. 1e4 (9 points).
pub fn default_grid() -> Vec<f64> {
    (-4..=4).map(|e| 10f64.powi(e)).collect()
}

/// Coordinate-wise GCV search over per-block lambda grids.
///
/// Starts every penalized block at the middle of its grid and makes two
/// sweeps over the blocks, each time trying every grid value with the other
/// lambdas held fixed. Unpenalized blocks keep the first value of their grid
/// (or 0 when the grid is empty). Ties keep the earlier candidate.
pub fn select_penalty_gcv(
    y: &[f64],
    blocks: &[TermBlock],
    grids: &[Vec<f64>],
    opts: &IrlsOptions,
) -> Result<Vec<f64>> {
    if grids.len() != blocks.len() {
        return Err(Error::Argument(format!(
            "{} grids for {} term blocks",
            grids.len(),
            blocks.len()
        )));
    }
    for (b, g) in blocks.iter().zip(grids) {
        if b.penalty.is_some() && g.is_empty() {
            return Err(Error::Argument(format!("empty lambda grid for `{}`", b.name)));
        }
    }
    let mut current: Vec<f64> = blocks
        .iter()
        .zip(grids)
        .map(|(b, g)| match (&b.penalty, g.is_empty()) {
            (Some(_), _) => g[g.len() / 2],
            (None, false) => g[0],
            (None, true) => 0.0,
        })
        .collect();
    let penalized: Vec<usize> = blocks
        .iter()
        .enumerate()
        .filter(|(_, b)| b.penalty.is_some())
        .map(|(i, _)| i)
        .collect();

    let n = y.len();
    let (x, _) = assemble(blocks, &current, n)?;
    let mut cache: HashMap<Vec<u64>, f64> = HashMap::new();
    let mut warm: Option<DVector<f64>> = None;
    let mut evaluate = |lambdas: &[f64], warm: &mut Option<DVector<f64>>| -> f64 {
        let key: Vec<u64> = lambdas.iter().map(|l| l.to_bits()).collect();
        if let Some(&v) = cache.get(&key) {
            return v;
        }
        let score = assemble(blocks, lambdas, n)
            .and_then(|(_, s)| fit_design(&x, y, &s, warm.as_ref(), opts))
            .map(|fit| {
                let sc = gcv_score(n, fit.deviance, fit.edf);
                *warm = Some(fit.coefficients);
                sc
            })
            .unwrap_or(f64::INFINITY);
        cache.insert(key, score);
        score
    };

    let mut best = evaluate(&current, &mut warm);
    for _sweep in 0..2 {
        for &t in &penalized {
            for &cand in &grids[t] {
                if cand == current[t] {
                    continue;
                }
                let mut trial = current.clone();
                trial[t] = cand;
                let score = evaluate(&trial, &mut warm);
                if score < best {
                    best = score;
                    current = trial;
                }
            }
        }
    }
    if !best.is_finite() {
        return Err(Error::Convergence {
            iterations: opts.max_iter,
            trace: Vec::new(),
        });
    }
    Ok(current)
}
