use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{check_weights, WeightedRecord};
use crate::error::{Error, Result};

/// Coefficient magnitude treated as divergence.
const DIVERGENCE_BOUND: f64 = 20.0;

/// Newton decrement, relative to the log-likelihood, below which steps are
/// taken without line search.
pub(crate) const QUADRATIC_REGION: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoxOptions {
    /// Bound on the sup-norm of the score divided by the number of records.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CoxOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxFit {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub score_norm: f64,
    pub iterations: usize,
    pub loglik_path: Vec<f64>,
}

impl CoxFit {
    pub fn coef(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.coefficients[i])
    }
}

struct CoxData {
    p: usize,
    z: Vec<f64>,
    w: Vec<f64>,
    /// Subjects by exit time, latest first.
    by_exit: Vec<usize>,
    /// Subjects by entry time, latest first.
    by_entry: Vec<usize>,
    entry: Vec<f64>,
    exit: Vec<f64>,
    /// Distinct event times, latest first, with the events at each.
    event_groups: Vec<(f64, Vec<usize>)>,
}

impl CoxData {
    fn new(records: &[WeightedRecord], names: &[&str]) -> Result<Self> {
        check_weights(records)?;
        let n = records.len();
        let p = names.len();
        let mut z = vec![0.0; n * p];
        for (i, r) in records.iter().enumerate() {
            for (k, name) in names.iter().enumerate() {
                z[i * p + k] = r.covariate(name)?;
            }
        }
        // Centering leaves the estimates unchanged and keeps exp() tame.
        for k in 0..p {
            let first = z[k];
            if (0..n).all(|i| z[i * p + k] == first) {
                return Err(Error::NotIdentifiable(format!("covariate `{}` is constant", names[k])));
            }
            let m = (0..n).map(|i| z[i * p + k]).sum::<f64>() / n as f64;
            for i in 0..n {
                z[i * p + k] -= m;
            }
        }
        let exit: Vec<f64> = records.iter().map(|r| r.t_obs).collect();
        let entry: Vec<f64> = records.iter().map(|r| r.entry).collect();
        let mut by_exit: Vec<usize> = (0..n).collect();
        by_exit.sort_by(|&a, &b| exit[b].total_cmp(&exit[a]));
        let mut by_entry: Vec<usize> = (0..n).collect();
        by_entry.sort_by(|&a, &b| entry[b].total_cmp(&entry[a]));
        let mut event_groups: Vec<(f64, Vec<usize>)> = Vec::new();
        for &i in &by_exit {
            if records[i].d {
                match event_groups.last_mut() {
                    Some((t, g)) if *t == exit[i] => g.push(i),
                    _ => event_groups.push((exit[i], vec![i])),
                }
            }
        }
        if event_groups.is_empty() {
            return Err(Error::Argument("no events among the records".into()));
        }
        Ok(Self {
            p,
            z,
            w: records.iter().map(|r| r.weight).collect(),
            by_exit,
            by_entry,
            entry,
            exit,
            event_groups,
        })
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.z[i * self.p..(i + 1) * self.p]
    }

    /// Weighted Breslow partial log-likelihood, score and information.
    fn evaluate(&self, alpha: &[f64]) -> (f64, DVector<f64>, DMatrix<f64>) {
        let p = self.p;
        let n = self.w.len();
        let risk: Vec<f64> = (0..n)
            .map(|i| {
                let eta: f64 = self.row(i).iter().zip(alpha).map(|(z, a)| z * a).sum();
                self.w[i] * eta.exp()
            })
            .collect();
        // Running sums over {T_j >= t} and over {L_j > t}.
        let mut add = (0.0, DVector::<f64>::zeros(p), DMatrix::<f64>::zeros(p, p));
        let mut rem = (0.0, DVector::<f64>::zeros(p), DMatrix::<f64>::zeros(p, p));
        let accumulate = |acc: &mut (f64, DVector<f64>, DMatrix<f64>), i: usize| {
            let r = risk[i];
            let z = self.row(i);
            acc.0 += r;
            for a in 0..p {
                acc.1[a] += r * z[a];
                for b in 0..p {
                    acc.2[(a, b)] += r * z[a] * z[b];
                }
            }
        };
        let (mut ie, mut il) = (0, 0);
        let mut loglik = 0.0;
        let mut score = DVector::<f64>::zeros(p);
        let mut info = DMatrix::<f64>::zeros(p, p);
        for (t, events) in &self.event_groups {
            while ie < n && self.exit[self.by_exit[ie]] >= *t {
                accumulate(&mut add, self.by_exit[ie]);
                ie += 1;
            }
            while il < n && self.entry[self.by_entry[il]] > *t {
                accumulate(&mut rem, self.by_entry[il]);
                il += 1;
            }
            let s0 = add.0 - rem.0;
            let s1 = &add.1 - &rem.1;
            let s2 = &add.2 - &rem.2;
            let mut wd = 0.0;
            for &i in events {
                let z = self.row(i);
                let eta: f64 = z.iter().zip(alpha).map(|(z, a)| z * a).sum();
                loglik += self.w[i] * eta;
                for a in 0..p {
                    score[a] += self.w[i] * z[a];
                }
                wd += self.w[i];
            }
            let zbar = &s1 / s0;
            loglik -= wd * s0.ln();
            score -= &zbar * wd;
            info += (&s2 / s0 - &zbar * zbar.transpose()) * wd;
        }
        (loglik, score, info)
    }
}

/// Weighted partial log-likelihood and score at `alpha` (covariates centered).
pub fn weighted_partial_loglik(records: &[WeightedRecord], names: &[&str], alpha: &[f64]) -> Result<(f64, Vec<f64>)> {
    let data = CoxData::new(records, names)?;
    if alpha.len() != names.len() {
        return Err(Error::Argument(format!("{} coefficients for {} covariates", alpha.len(), names.len())));
    }
    let (l, s, _) = data.evaluate(alpha);
    Ok((l, s.as_slice().to_vec()))
}

/// Newton-Raphson fit of a weighted Cox model with Breslow ties and delayed
/// entry, starting from zero with step halving.
pub fn weighted_cox_fit(records: &[WeightedRecord], names: &[&str], opts: &CoxOptions) -> Result<CoxFit> {
    let data = CoxData::new(records, names)?;
    let n = records.len() as f64;
    let p = names.len();
    let mut alpha = vec![0.0; p];
    let (mut ll, mut score, mut info) = data.evaluate(&alpha);
    let mut path = vec![ll];
    let mut iterations = 0;
    loop {
        let norm = score.amax() / n;
        if norm < opts.tol {
            return Ok(CoxFit {
                names: names.iter().map(|s| s.to_string()).collect(),
                coefficients: alpha,
                score_norm: norm,
                iterations,
                loglik_path: path,
            });
        }
        if iterations >= opts.max_iter {
            return Err(Error::Convergence {
                iterations,
                trace: path,
            });
        }
        iterations += 1;
        let step = info
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotIdentifiable("Cox information matrix is singular".into()))?
            .solve(&score);
        // Once the predicted gain is below the rounding noise of the
        // log-likelihood, line search is meaningless: take the full step.
        let quadratic = score.dot(&step) < QUADRATIC_REGION * (1.0 + ll.abs());
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand: Vec<f64> = alpha.iter().zip(step.iter()).map(|(a, s)| a + t * s).collect();
            let (cl, cs, ci) = data.evaluate(&cand);
            if cl.is_finite() && (cl >= ll || quadratic) {
                accepted = Some((cand, cl, cs, ci));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, cl, cs, ci)) = accepted else {
            return Err(Error::Convergence {
                iterations,
                trace: path,
            });
        };
        if cand.iter().any(|a| a.abs() > DIVERGENCE_BOUND) {
            return Err(Error::NotIdentifiable(format!(
                "coefficients diverge (monotone likelihood): {cand:?}"
            )));
        }
        alpha = cand;
        ll = cl;
        score = cs;
        info = ci;
        path.push(ll);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn rec(id: usize, z: f64, t: f64, d: bool, w: f64) -> WeightedRecord {
        WeightedRecord {
            id,
            t_obs: t,
            entry: 0.0,
            d,
            covariates: BTreeMap::from([("z".to_string(), z)]),
            weight: w,
        }
    }

    #[test]
    fn three_subject_example() {
        let r = vec![rec(0, 0.0, 1.0, true, 1.0), rec(1, 1.0, 2.0, true, 1.0), rec(2, 0.0, 3.0, true, 1.0)];
        let fit = weighted_cox_fit(&r, &["z"], &CoxOptions::default()).unwrap();
        assert!((fit.coefficients[0] - 2f64.sqrt().ln()).abs() < 1e-9);
    }

    #[test]
    fn weighted_three_subject_example() {
        let r = vec![rec(0, 0.0, 1.0, true, 2.0), rec(1, 1.0, 2.0, true, 1.0), rec(2, 0.0, 3.0, false, 1.0)];
        let fit = weighted_cox_fit(&r, &["z"], &CoxOptions::default()).unwrap();
        assert!(fit.coefficients[0].abs() < 1e-9);
    }

    #[test]
    fn loglik_path_is_non_decreasing() {
        let r: Vec<_> = (0..30)
            .map(|i| rec(i, ((i * 7) % 5) as f64, 1.0 + i as f64, i % 3 != 0, 1.0 + (i % 4) as f64))
            .collect();
        let fit = weighted_cox_fit(&r, &["z"], &CoxOptions::default()).unwrap();
        for w in fit.loglik_path.windows(2) {
            assert!(w[1] >= w[0] - 1e-12 * w[0].abs());
        }
    }

    #[test]
    fn constant_covariate_and_monotone_likelihood() {
        let r = vec![rec(0, 1.0, 1.0, true, 1.0), rec(1, 1.0, 2.0, false, 1.0)];
        assert!(matches!(
            weighted_cox_fit(&r, &["z"], &CoxOptions::default()),
            Err(Error::NotIdentifiable(_))
        ));
        // The exposed subject always fails first.
        let r = vec![rec(0, 1.0, 1.0, true, 1.0), rec(1, 0.0, 2.0, false, 1.0), rec(2, 1.0, 0.5, true, 1.0)];
        assert!(matches!(
            weighted_cox_fit(&r, &["z"], &CoxOptions::default()),
            Err(Error::NotIdentifiable(_))
        ));
    }

    #[test]
    fn delayed_entry_removes_subjects_from_early_risk_sets() {
        // Subject 2 enters after the first event, so that event's risk set
        // is {0, 1}: the fit matches the two-subject problem plus one event.
        let mut r = vec![rec(0, 1.0, 1.0, true, 1.0), rec(1, 0.0, 3.0, false, 1.0), rec(2, 0.0, 2.0, true, 1.0)];
        r[2].entry = 1.5;
        let (l, _) = weighted_partial_loglik(&r, &["z"], &[0.3]).unwrap();
        // Centered z: mean 1/3.
        let z = [2.0 / 3.0, -1.0 / 3.0, -1.0 / 3.0];
        let e = |k: usize| (z[k] * 0.3f64).exp();
        let expected = (e(0) / (e(0) + e(1))).ln() + (e(2) / (e(1) + e(2))).ln();
        assert!((l - expected).abs() < 1e-12);
    }
}
