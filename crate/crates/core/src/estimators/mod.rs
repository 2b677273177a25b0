//! Weighted Cox, Kaplan-Meier and least-squares fits, conditional logistic
//! regression and the Horvitz-Thompson mean functional.

mod clogit;
mod cox;
mod functional;
mod km;
mod ols;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cohort::Cohort;
use crate::error::{Error, Result};

pub use clogit::{clogit_fit, ClogitFit, ClogitSet};
pub use cox::{weighted_cox_fit, weighted_partial_loglik, CoxFit, CoxOptions};
pub use functional::weighted_mean_functional;
pub use km::{weighted_km, write_curve_csv, SurvivalCurve};
pub use ols::{weighted_ols, LinFit};

/// One subject's contribution to a weighted fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedRecord {
    pub id: usize,
    pub t_obs: f64,
    pub entry: f64,
    pub d: bool,
    pub covariates: BTreeMap<String, f64>,
    pub weight: f64,
}

impl WeightedRecord {
    pub fn covariate(&self, name: &str) -> Result<f64> {
        self.covariates
            .get(name)
            .copied()
            .ok_or_else(|| Error::Structure(format!("record {} has no covariate `{name}`", self.id)))
    }
}

/// Records for subjects `ids` of `cohort` with the given weights (all 1 when
/// `weights` is `None`), carrying the named covariates.
pub fn records_from_cohort(
    cohort: &Cohort,
    ids: &[usize],
    weights: Option<&[f64]>,
    covariates: &[&str],
) -> Result<Vec<WeightedRecord>> {
    if let Some(w) = weights {
        if w.len() != ids.len() {
            return Err(Error::Argument(format!("{} weights for {} ids", w.len(), ids.len())));
        }
    }
    ids.iter()
        .enumerate()
        .map(|(k, &id)| {
            let s = cohort
                .subjects
                .get(id)
                .ok_or_else(|| Error::Argument(format!("id {id} not in cohort")))?;
            let mut cov = BTreeMap::new();
            for &name in covariates {
                let v = s
                    .factor(name)
                    .ok_or_else(|| Error::Structure(format!("unknown covariate `{name}`")))?;
                cov.insert(name.to_string(), v);
            }
            Ok(WeightedRecord {
                id,
                t_obs: s.t_obs,
                entry: s.entry,
                d: s.d,
                covariates: cov,
                weight: weights.map_or(1.0, |w| w[k]),
            })
        })
        .collect()
}

fn check_weights(records: &[WeightedRecord]) -> Result<()> {
    for r in records {
        if !(r.weight > 0.0 && r.weight.is_finite()) {
            return Err(Error::Argument(format!("record {} has weight {}", r.id, r.weight)));
        }
        if r.t_obs < r.entry {
            return Err(Error::Argument(format!(
                "record {} exits at {} before entry {}",
                r.id, r.t_obs, r.entry
            )));
        }
    }
    Ok(())
}

/// Serialize any fit result to pretty JSON.
pub fn to_json<T: Serialize>(fit: &T) -> Result<String> {
    serde_json::to_string_pretty(fit).map_err(|e| Error::Parse(e.to_string()))
}
