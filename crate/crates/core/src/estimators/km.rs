use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{check_weights, WeightedRecord};
use crate::error::{Error, Result};

/// Right-continuous step function of a weighted Kaplan-Meier estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCurve {
    /// Distinct event times, increasing.
    pub times: Vec<f64>,
    pub surv: Vec<f64>,
    pub at_risk_mass: Vec<f64>,
    /// Largest follow-up time in the (sub)group.
    pub domain_end: f64,
}

impl SurvivalCurve {
    /// Survival at `t`, `None` beyond `domain_end`.
    pub fn at(&self, t: f64) -> Option<f64> {
        if t > self.domain_end {
            return None;
        }
        let k = self.times.partition_point(|&s| s <= t);
        Some(if k == 0 { 1.0 } else { self.surv[k - 1] })
    }
}

/// Weighted KM estimate, optionally restricted to records whose covariate
/// `condition.0` equals `condition.1`. Tied events enter one factor with
/// their summed weight.
pub fn weighted_km(records: &[WeightedRecord], condition: Option<(&str, f64)>) -> Result<SurvivalCurve> {
    check_weights(records)?;
    let mut group: Vec<&WeightedRecord> = Vec::with_capacity(records.len());
    for r in records {
        let keep = match condition {
            Some((name, v)) => r.covariate(name)? == v,
            None => true,
        };
        if keep {
            group.push(r);
        }
    }
    if group.is_empty() {
        return Err(Error::Argument(match condition {
            Some((name, v)) => format!("no records with {name} = {v}"),
            None => "no records".into(),
        }));
    }
    // Scale by the largest weight so equal weights become exactly 1.
    let scale = group.iter().map(|r| r.weight).fold(0.0, f64::max);
    group.sort_by(|a, b| a.t_obs.total_cmp(&b.t_obs));
    let domain_end = group.last().expect("non-empty").t_obs;

    let mut times = Vec::new();
    let mut surv = Vec::new();
    let mut at_risk_mass = Vec::new();
    let mut s = 1.0;
    let mut k = 0;
    while k < group.len() {
        let t = group[k].t_obs;
        let mut end = k;
        let mut event_mass = 0.0;
        while end < group.len() && group[end].t_obs == t {
            if group[end].d {
                event_mass += group[end].weight / scale;
            }
            end += 1;
        }
        if event_mass > 0.0 {
            let risk: f64 = group
                .iter()
                .filter(|r| r.t_obs >= t && r.entry <= t)
                .map(|r| r.weight / scale)
                .sum();
            s *= (risk - event_mass) / risk;
            times.push(t);
            surv.push(s);
            at_risk_mass.push(risk * scale);
        }
        k = end;
    }
    Ok(SurvivalCurve {
        times,
        surv,
        at_risk_mass,
        domain_end,
    })
}

#[derive(Serialize)]
struct CurveRow {
    time: f64,
    surv: f64,
    at_risk_mass: f64,
}

/// Write `time,surv,at_risk_mass`.
pub fn write_curve_csv(curve: &SurvivalCurve, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    for k in 0..curve.times.len() {
        w.serialize(CurveRow {
            time: curve.times[k],
            surv: curve.surv[k],
            at_risk_mass: curve.at_risk_mass[k],
        })
        .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn rec(t: f64, d: bool, w: f64) -> WeightedRecord {
        WeightedRecord {
            id: 0,
            t_obs: t,
            entry: 0.0,
            d,
            covariates: BTreeMap::from([("g".to_string(), if t < 2.5 { 0.0 } else { 1.0 })]),
            weight: w,
        }
    }

    #[test]
    fn classic_km() {
        let c = weighted_km(&[rec(1.0, true, 1.0), rec(2.0, true, 1.0), rec(3.0, false, 1.0)], None).unwrap();
        assert_eq!(c.times, vec![1.0, 2.0]);
        assert_eq!(c.surv, vec![2.0 / 3.0, 1.0 / 3.0]);
        assert_eq!(c.at(2.5), Some(1.0 / 3.0));
        assert_eq!(c.at(0.5), Some(1.0));
        assert_eq!(c.at(3.5), None);
    }

    #[test]
    fn weighted_first_factor() {
        let c = weighted_km(&[rec(1.0, true, 2.0), rec(2.0, false, 1.0), rec(3.0, false, 1.0)], None).unwrap();
        assert_eq!(c.surv[0], 0.5);
        assert_eq!(c.at_risk_mass[0], 4.0);
    }

    #[test]
    fn equal_weights_match_unweighted_bit_exact() {
        let base: Vec<_> = (0..20).map(|i| rec(1.0 + (i * 7 % 11) as f64, i % 3 == 0, 1.0)).collect();
        let scaled: Vec<_> = base.iter().cloned().map(|mut r| { r.weight = 0.37; r }).collect();
        assert_eq!(weighted_km(&base, None).unwrap().surv, weighted_km(&scaled, None).unwrap().surv);
    }

    #[test]
    fn ties_form_one_factor() {
        let c = weighted_km(&[rec(1.0, true, 1.0), rec(1.0, true, 1.0), rec(2.0, false, 2.0)], None).unwrap();
        assert_eq!(c.times.len(), 1);
        assert_eq!(c.surv[0], 0.5);
    }

    #[test]
    fn conditioning_and_empty_group() {
        let r = [rec(1.0, true, 1.0), rec(2.0, false, 1.0), rec(3.0, true, 1.0)];
        let c = weighted_km(&r, Some(("g", 1.0))).unwrap();
        assert_eq!(c.surv, vec![0.0]);
        assert!(weighted_km(&r, Some(("g", 5.0))).is_err());
    }
}
