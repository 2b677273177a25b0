//! Replicated bias experiments: every replicate simulates a cohort, draws one
//! NCC sample, and compares weighted NCC estimates with the unweighted
//! full-cohort estimate of the same quantity.

mod export;
mod presets;
mod svg;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{generate_cohort, Cohort, ScenarioConfig};
use crate::error::{Error, Result};
use crate::estimators::{
    clogit_fit, records_from_cohort, weighted_cox_fit, weighted_km, weighted_ols, ClogitSet, CoxOptions,
};
use crate::sampler::{eligibility, sample_ncc, MatchingSpec, NccSample};
use crate::smooth::{default_grid, PenaltyChoice};
use crate::stats;
use crate::weights::{finalize_weights, inclusion_probabilities, WeightMethodSpec};

pub use export::{export_results, Format};
pub use presets::{preset, PRESETS};
pub use svg::boxplot_svg;

/// Label of the conditional-logistic comparator.
pub const CLOGIT: &str = "clogit";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimand {
    /// Log hazard ratio of `xb` in a Cox model adjusted for `xa` and M.
    LogHrXb,
    /// Survival at the end of follow-up among subjects with raw `xa` = 0.
    CondSurvXa0AtU1,
    /// Slope of `xb` on `xa` by least squares.
    ThetaXbOnXa,
}

impl Estimand {
    pub const ALL: [Estimand; 3] = [Estimand::LogHrXb, Estimand::CondSurvXa0AtU1, Estimand::ThetaXbOnXa];

    pub fn name(self) -> &'static str {
        match self {
            Estimand::LogHrXb => "log_hr_xb",
            Estimand::CondSurvXa0AtU1 => "cond_surv_xa0_at_u1",
            Estimand::ThetaXbOnXa => "theta_xb_on_xa",
        }
    }
}

impl fmt::Display for Estimand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Estimand {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Estimand::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown estimand `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightVariant {
    /// Defaults to the method's own label.
    #[serde(default)]
    pub label: Option<String>,
    pub method: WeightMethodSpec,
}

impl WeightVariant {
    pub fn new(method: WeightMethodSpec) -> Self {
        Self { label: None, method }
    }

    pub fn label(&self, matching: &MatchingSpec) -> String {
        self.label.clone().unwrap_or_else(|| self.method.label(matching))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub scenario: ScenarioConfig,
    pub matching: MatchingSpec,
    pub m: usize,
    pub pi1: f64,
    pub weight_variants: Vec<WeightVariant>,
    pub estimands: Vec<Estimand>,
    pub replicates: usize,
    pub base_seed: u64,
    /// Fixed GAM penalty; GCV over the default grid when absent.
    #[serde(default)]
    pub gam_lambda: Option<f64>,
    #[serde(default = "yes")]
    pub clogit: bool,
}

fn yes() -> bool {
    true
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.matching.validate()?;
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        if self.estimands.is_empty() {
            return Err(Error::Config("at least one estimand is required".into()));
        }
        if !(self.pi1 > 0.0 && self.pi1 <= 1.0) {
            return Err(Error::Config(format!("pi1 must lie in (0, 1], got {}", self.pi1)));
        }
        let mut labels: Vec<String> = self.weight_variants.iter().map(|v| v.label(&self.matching)).collect();
        labels.sort();
        if let Some(w) = labels.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Config(format!("duplicate weight variant label `{}`", w[0])));
        }
        if labels.iter().any(|l| l == CLOGIT) {
            return Err(Error::Config(format!("`{CLOGIT}` is reserved for the comparator")));
        }
        for v in &self.weight_variants {
            let mut m = v.method.clone();
            m.pi1 = self.pi1;
            m.validate()?;
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let spec: Self = toml::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    fn penalty(&self) -> PenaltyChoice {
        match self.gam_lambda {
            Some(l) => PenaltyChoice::Fixed(l),
            None => PenaltyChoice::Gcv(default_grid()),
        }
    }

    /// Covariates of the Cox model for the log hazard ratio of `xb`.
    pub fn cox_covariates(&self) -> Vec<&'static str> {
        let mut c = vec!["xa", "xb", "m1"];
        if self.scenario.m2_active {
            c.push("m2");
        }
        c
    }
}

/// One (estimand, method) outcome of a replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub estimand: Estimand,
    pub method: String,
    pub estimate: Option<f64>,
    pub reference: Option<f64>,
    pub diff: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantDiagnostics {
    pub method: String,
    pub weight_sum: Option<f64>,
    pub n_capped: usize,
    pub floored: usize,
    pub extrapolated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub seed: u64,
    pub n_cohort: usize,
    pub n_events: usize,
    pub n_selected: usize,
    pub eligible: usize,
    pub cells: Vec<Cell>,
    pub variants: Vec<VariantDiagnostics>,
    pub warnings: Vec<String>,
}

impl ReplicateResult {
    pub fn cell(&self, estimand: Estimand, method: &str) -> Option<&Cell> {
        self.cells.iter().find(|c| c.estimand == estimand && c.method == method)
    }
}

/// Seed of the NCC draw for a replicate, kept apart from the cohort streams.
pub fn ncc_seed(cohort_seed: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(cohort_seed);
    rng.set_stream(1 << 32);
    rng.next_u64()
}

/// One estimand on subjects `ids` of `cohort` (unweighted when `weights` is
/// `None`). The Cox model uses `cox_covariates`; the survival probability is
/// read at `min(u1, domain_end)`.
pub fn estimate(
    cohort: &Cohort,
    estimand: Estimand,
    ids: &[usize],
    weights: Option<&[f64]>,
    cox_covariates: &[&str],
    u1: f64,
) -> Result<f64> {
    let covs = ["xa", "xb", "m1", "m2", "xa_raw"];
    let records = records_from_cohort(cohort, ids, weights, &covs)?;
    match estimand {
        Estimand::LogHrXb => {
            let fit = weighted_cox_fit(&records, cox_covariates, &CoxOptions::default())?;
            Ok(fit.coef("xb").expect("xb is a covariate"))
        }
        Estimand::CondSurvXa0AtU1 => {
            let curve = weighted_km(&records, Some(("xa_raw", 0.0)))?;
            let t = u1.min(curve.domain_end);
            Ok(curve.at(t).expect("within domain"))
        }
        Estimand::ThetaXbOnXa => {
            let y: Vec<f64> = records.iter().map(|r| r.covariates["xb"]).collect();
            let x: Vec<Vec<f64>> = records.iter().map(|r| vec![1.0, r.covariates["xa"]]).collect();
            let w: Vec<f64> = records.iter().map(|r| r.weight).collect();
            let fit = weighted_ols(&y, &x, &w, &["intercept", "xa"])?;
            Ok(fit.coef("xa").expect("xa is a regressor"))
        }
    }
}

fn clogit_estimate(cohort: &Cohort, ncc: &NccSample) -> Result<f64> {
    let z = |id: usize| {
        let s = &cohort.subjects[id];
        vec![s.xa, s.xb]
    };
    let sets: Vec<ClogitSet> = ncc
        .matched_sets
        .iter()
        .filter(|set| !set.control_ids.is_empty())
        .map(|set| ClogitSet {
            case: z(set.case_id),
            controls: set.control_ids.iter().map(|&c| z(c)).collect(),
        })
        .collect();
    let fit = clogit_fit(&sets, &["xa", "xb"], 1e-9)?;
    Ok(fit.coef("xb").expect("xb is a covariate"))
}

fn cell(estimand: Estimand, method: &str, est: Result<f64>, reference: &Result<f64>) -> Cell {
    let (estimate, err_e) = match est {
        Ok(v) => (Some(v), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let (reference, err_r) = match reference {
        Ok(v) => (Some(*v), None),
        Err(e) => (None, Some(format!("reference: {e}"))),
    };
    let diff = estimate.zip(reference).map(|(e, r)| e - r);
    Cell {
        estimand,
        method: method.to_string(),
        estimate,
        reference,
        diff,
        error: err_e.or(err_r),
    }
}

/// Run one replicate. Estimator failures are recorded per cell; only
/// failures of cohort generation or sampling abort the replicate.
pub fn run_replicate(spec: &ExperimentSpec, replicate: usize) -> Result<ReplicateResult> {
    let seed = spec.base_seed.wrapping_add(replicate as u64);
    let mut scenario = spec.scenario.clone();
    scenario.seed = seed;
    let cohort = generate_cohort(&scenario, seed)?;
    let all: Vec<usize> = (0..cohort.len()).collect();
    let cox = spec.cox_covariates();
    let u1 = spec.scenario.censor_hi;
    let references: BTreeMap<Estimand, Result<f64>> = spec
        .estimands
        .iter()
        .map(|&e| (e, estimate(&cohort, e, &all, None, &cox, u1)))
        .collect();

    let ncc = sample_ncc(&cohort, &spec.matching, spec.m, spec.pi1, ncc_seed(seed))?;
    let (_, counts) = eligibility(&cohort, &ncc)?;
    let ids = ncc.selected_ids();
    let penalty = spec.penalty();

    let mut cells = Vec::new();
    let mut variants = Vec::new();
    let mut warnings = ncc.warnings.clone();
    for v in &spec.weight_variants {
        let label = v.label(&spec.matching);
        let mut method = v.method.clone();
        method.pi1 = spec.pi1;
        let weights = inclusion_probabilities(&cohort, &ncc, &method, &penalty).and_then(|p| {
            let wv = finalize_weights(&p.probs, &ncc, &method)?;
            Ok((p, wv))
        });
        match weights {
            Ok((p, wv)) => {
                warnings.extend(p.warnings.iter().map(|w| format!("{label}: {w}")));
                variants.push(VariantDiagnostics {
                    method: label.clone(),
                    weight_sum: Some(wv.diagnostics.sum),
                    n_capped: wv.diagnostics.n_capped,
                    floored: p.floored,
                    extrapolated: p.extrapolated,
                });
                for &e in &spec.estimands {
                    let est = estimate(&cohort, e, &wv.ids, Some(&wv.weights), &cox, u1);
                    cells.push(cell(e, &label, est, &references[&e]));
                }
            }
            Err(err) => {
                variants.push(VariantDiagnostics {
                    method: label.clone(),
                    weight_sum: None,
                    n_capped: 0,
                    floored: 0,
                    extrapolated: 0,
                });
                for &e in &spec.estimands {
                    cells.push(cell(e, &label, Err(Error::Structure(format!("weights: {err}"))), &references[&e]));
                }
            }
        }
    }
    if spec.clogit && spec.estimands.contains(&Estimand::LogHrXb) {
        let est = clogit_estimate(&cohort, &ncc);
        cells.push(cell(Estimand::LogHrXb, CLOGIT, est, &references[&Estimand::LogHrXb]));
    }
    Ok(ReplicateResult {
        replicate,
        seed,
        n_cohort: cohort.len(),
        n_events: cohort.n_events(),
        n_selected: ids.len(),
        eligible: counts.eligible,
        cells,
        variants,
        warnings,
    })
}

/// Outcome of a whole experiment. Replicates that could not run at all are
/// listed in `failed` with the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub results: Vec<ReplicateResult>,
    pub failed: Vec<(usize, String)>,
}

impl ExperimentOutcome {
    /// Every replicate ran and every cell produced an estimate.
    pub fn complete(&self) -> bool {
        self.failed.is_empty() && self.results.iter().all(|r| r.cells.iter().all(|c| c.diff.is_some()))
    }
}

/// Run all replicates in parallel. Results come back in replicate order.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    spec.validate()?;
    let runs: Vec<(usize, Result<ReplicateResult>)> = (0..spec.replicates)
        .into_par_iter()
        .map(|r| {
            let run = run_replicate(spec, r);
            log::info!("{}: replicate {r} done", spec.name);
            (r, run)
        })
        .collect();
    let mut results = Vec::new();
    let mut failed = Vec::new();
    for (r, run) in runs {
        match run {
            Ok(res) => results.push(res),
            Err(e) => {
                log::warn!("replicate {r} failed: {e}");
                failed.push((r, e.to_string()));
            }
        }
    }
    Ok(ExperimentOutcome { results, failed })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryCell {
    pub estimand: Estimand,
    pub method: String,
    pub n: usize,
    pub n_failed: usize,
    pub mean: f64,
    pub sd: f64,
    pub se: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub t_stat: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasSummary {
    pub cells: Vec<SummaryCell>,
}

impl BiasSummary {
    pub fn get(&self, estimand: Estimand, method: &str) -> Option<&SummaryCell> {
        self.cells.iter().find(|c| c.estimand == estimand && c.method == method)
    }
}

/// Per-(estimand, method) summaries of the differences. Failed cells are
/// counted and left out.
pub fn summarize_bias(results: &[ReplicateResult]) -> Result<BiasSummary> {
    if results.is_empty() {
        return Err(Error::Argument("no replicate results to summarize".into()));
    }
    let mut ordered: Vec<&ReplicateResult> = results.iter().collect();
    ordered.sort_by_key(|r| r.replicate);
    let mut groups: BTreeMap<(Estimand, String), (Vec<f64>, usize)> = BTreeMap::new();
    for r in ordered {
        for c in &r.cells {
            let g = groups.entry((c.estimand, c.method.clone())).or_default();
            match c.diff {
                Some(d) => g.0.push(d),
                None => g.1 += 1,
            }
        }
    }
    let cells = groups
        .into_iter()
        .map(|((estimand, method), (diffs, n_failed))| {
            let n = diffs.len();
            let sd = stats::sd(&diffs);
            let (t_stat, p_value) = stats::t_test_zero(&diffs);
            SummaryCell {
                estimand,
                method,
                n,
                n_failed,
                mean: stats::mean(&diffs),
                sd,
                se: sd / (n as f64).sqrt(),
                q1: stats::quantile(&diffs, 0.25),
                median: stats::quantile(&diffs, 0.5),
                q3: stats::quantile(&diffs, 0.75),
                t_stat,
                p_value,
            }
        })
        .collect();
    Ok(BiasSummary { cells })
}
