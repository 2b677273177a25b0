//! Inclusion probabilities and inverse-probability weights for NCC samples.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::Cohort;
use crate::error::{Error, Result};
use crate::sampler::{Matcher, MatchingSpec, NccSample};
use crate::smooth::{fit_gam, Frame, IrlsOptions, PenaltyChoice, PenalizedLogitModel, SmoothTermSpec};

/// Lower bound applied to fitted GAM probabilities before inversion.
pub const PROBABILITY_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightFamily {
    Km,
    Gam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightMethodSpec {
    pub family: WeightFamily,
    /// Factors conditioned on beyond (D, T). Empty means "without M".
    pub covariate_set: Vec<String>,
    #[serde(default)]
    pub include_interactions: bool,
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default = "one")]
    pub pi1: f64,
}

fn one() -> f64 {
    1.0
}

impl WeightMethodSpec {
    pub fn km(covariates: &[&str]) -> Self {
        Self {
            family: WeightFamily::Km,
            covariate_set: covariates.iter().map(|s| s.to_string()).collect(),
            include_interactions: false,
            threshold: None,
            pi1: 1.0,
        }
    }

    pub fn gam(covariates: &[&str]) -> Self {
        Self {
            family: WeightFamily::Gam,
            ..Self::km(covariates)
        }
    }

    pub fn with_interactions(mut self) -> Self {
        self.include_interactions = true;
        self
    }

    pub fn with_threshold(mut self, cap: f64) -> Self {
        self.threshold = Some(cap);
        self
    }

    pub fn with_pi1(mut self, pi1: f64) -> Self {
        self.pi1 = pi1;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.threshold {
            if !(t > 1.0 && t.is_finite()) {
                return Err(Error::Config(format!("threshold must be finite and > 1, got {t}")));
            }
        }
        if !(self.pi1 > 0.0 && self.pi1 <= 1.0) {
            return Err(Error::Config(format!("pi1 must lie in (0, 1], got {}", self.pi1)));
        }
        if self.include_interactions && self.family == WeightFamily::Km {
            return Err(Error::Config("interactions apply to GAM weights only".into()));
        }
        Ok(())
    }

    /// Short label such as `km`, `gam_interm`, `km_wo_m` or `gam_cap100`.
    pub fn label(&self, matching: &MatchingSpec) -> String {
        let mut s = match self.family {
            WeightFamily::Km => "km".to_string(),
            WeightFamily::Gam => "gam".to_string(),
        };
        if self.include_interactions {
            s.push_str("_interm");
        }
        let mut full = matching.factors();
        full.sort();
        let mut own = self.covariate_set.clone();
        own.sort();
        if own.is_empty() {
            s.push_str("_wo_m");
        } else if own != full {
            s.push('_');
            s.push_str(&own.join("_"));
        }
        if let Some(t) = self.threshold {
            s.push_str(&format!("_cap{t}"));
        }
        s
    }
}

/// Per-subject inclusion probabilities for the whole cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct InclusionProbabilities {
    pub probs: Vec<f64>,
    /// Predictions raised to [`PROBABILITY_FLOOR`].
    pub floored: usize,
    /// Subjects predicted outside the support of a fitted smooth.
    pub extrapolated: usize,
    pub models: Vec<PenalizedLogitModel>,
    pub warnings: Vec<String>,
}

fn check_sample(cohort: &Cohort, ncc: &NccSample, spec: &WeightMethodSpec) -> Result<()> {
    spec.validate()?;
    if ncc.s.len() != cohort.len() {
        return Err(Error::Structure(format!(
            "sample covers {} subjects but the cohort has {}",
            ncc.s.len(),
            cohort.len()
        )));
    }
    if spec.pi1 != ncc.pi1 {
        return Err(Error::Argument(format!(
            "weight spec uses pi1 = {} but the sample was drawn with pi1 = {}",
            spec.pi1, ncc.pi1
        )));
    }
    Ok(())
}

/// Matching spec implied by the covariate set of a KM/HT variant.
fn km_matching(ncc: &NccSample, spec: &WeightMethodSpec) -> Result<MatchingSpec> {
    let factors = ncc.matching.factors();
    if let Some(extra) = spec.covariate_set.iter().find(|f| !factors.contains(f)) {
        return Err(Error::Config(format!(
            "KM weights can only condition on matching factors; `{extra}` is not one"
        )));
    }
    Ok(ncc.matching.restricted_to(&spec.covariate_set))
}

/// `prod_i (1 - m / (n_i - 1))` over selected cases whose control pool
/// contains `j`, for every subject `j`.
fn complement_products(cohort: &Cohort, ncc: &NccSample, matching: &MatchingSpec, warnings: &mut Vec<String>) -> Result<Vec<f64>> {
    let matcher = Matcher::new(cohort, matching)?;
    let pools: Vec<Vec<u32>> = ncc
        .matched_sets
        .par_iter()
        .map(|set| matcher.pool(set.case_id))
        .collect();
    let mut prod = vec![1.0; cohort.len()];
    for (set, pool) in ncc.matched_sets.iter().zip(&pools) {
        if pool.is_empty() {
            warnings.push(format!("case {}: effective risk set holds only the case", set.case_id));
            continue;
        }
        let q = (ncc.m as f64 / pool.len() as f64).min(1.0);
        for &j in pool {
            prod[j as usize] *= 1.0 - q;
        }
    }
    Ok(prod)
}

fn ht_kernel(cohort: &Cohort, ncc: &NccSample, spec: &WeightMethodSpec) -> Result<InclusionProbabilities> {
    check_sample(cohort, ncc, spec)?;
    let matching = km_matching(ncc, spec)?;
    let mut warnings = Vec::new();
    let prod = complement_products(cohort, ncc, &matching, &mut warnings)?;
    let pi1 = spec.pi1;
    let probs = cohort
        .subjects
        .iter()
        .zip(&prod)
        .map(|(s, &p)| if s.d { pi1 + (1.0 - pi1) * (1.0 - p) } else { 1.0 - p })
        .collect();
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(InclusionProbabilities {
        probs,
        floored: 0,
        extrapolated: 0,
        models: Vec::new(),
        warnings,
    })
}

/// KM inclusion probabilities for a typical (pi1 = 1) sample: 1 for events,
/// `1 - prod(1 - m / (n_i - 1))` for nonevents. An empty covariate set uses
/// plain risk sets.
pub fn km_inclusion_probabilities(cohort: &Cohort, ncc: &NccSample, spec: &WeightMethodSpec) -> Result<InclusionProbabilities> {
    if spec.family != WeightFamily::Km {
        return Err(Error::Argument("KM probabilities need a km-family spec".into()));
    }
    if spec.pi1 != 1.0 {
        return Err(Error::Argument(format!(
            "KM probabilities assume pi1 = 1, got {}; use HT probabilities",
            spec.pi1
        )));
    }
    ht_kernel(cohort, ncc, spec)
}

/// HT inclusion probabilities: events get `pi1 + (1 - pi1) * (1 - prod)`,
/// nonevents `1 - prod`, the product running over selected cases.
pub fn ht_inclusion_probabilities(cohort: &Cohort, ncc: &NccSample, spec: &WeightMethodSpec) -> Result<InclusionProbabilities> {
    if spec.family != WeightFamily::Km {
        return Err(Error::Argument("HT probabilities need a km-family spec".into()));
    }
    ht_kernel(cohort, ncc, spec)
}

/// Default GAM terms: smooths of entry and follow-up time, categorical terms
/// for exactly matched and binary factors, smooths for the rest. With
/// interactions, each continuous factor gets one smooth per level of every
/// categorical factor instead of a single smooth.
pub fn default_gam_terms(cohort: &Cohort, matching: &MatchingSpec, spec: &WeightMethodSpec) -> Result<Vec<SmoothTermSpec>> {
    let mut terms = vec![SmoothTermSpec::smooth("entry"), SmoothTermSpec::smooth("t_obs")];
    let mut categorical = Vec::new();
    let mut continuous = Vec::new();
    for f in &spec.covariate_set {
        let col = cohort.column(f)?;
        let mut distinct = col.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        if matching.exact.contains(f) || distinct.len() <= 2 {
            categorical.push(f.clone());
        } else {
            continuous.push(f.clone());
        }
    }
    for c in &categorical {
        terms.push(SmoothTermSpec::categorical(c));
    }
    for c in &continuous {
        if spec.include_interactions && !categorical.is_empty() {
            for g in &categorical {
                terms.push(SmoothTermSpec::smooth(c).by(g));
            }
        } else {
            terms.push(SmoothTermSpec::smooth(c));
        }
    }
    Ok(terms)
}

fn frame_for(cohort: &Cohort, rows: &[usize], terms: &[SmoothTermSpec]) -> Result<Frame> {
    let mut frame = Frame::new();
    let mut names: Vec<&str> = Vec::new();
    for t in terms {
        names.push(&t.variable);
        if let Some(b) = &t.by_variable {
            names.push(b);
        }
    }
    for name in names {
        let col = cohort.column(name)?;
        frame.push(name, rows.iter().map(|&r| col[r]).collect());
    }
    Ok(frame)
}

/// GAM inclusion probabilities. Typical design: cases get 1 and nonevents
/// the fitted selection probability from a model fitted on all nonevents.
/// Untypical design: separate models for events and nonevents, each subject
/// predicted by its own stratum's model.
pub fn gam_inclusion_probabilities(
    cohort: &Cohort,
    ncc: &NccSample,
    spec: &WeightMethodSpec,
    terms: &[SmoothTermSpec],
    penalty: &PenaltyChoice,
) -> Result<InclusionProbabilities> {
    if spec.family != WeightFamily::Gam {
        return Err(Error::Argument("GAM probabilities need a gam-family spec".into()));
    }
    check_sample(cohort, ncc, spec)?;
    let mut probs = vec![1.0; cohort.len()];
    let mut out = InclusionProbabilities {
        probs: Vec::new(),
        floored: 0,
        extrapolated: 0,
        models: Vec::new(),
        warnings: Vec::new(),
    };
    let strata: Vec<bool> = if spec.pi1 < 1.0 { vec![true, false] } else { vec![false] };
    for event_stratum in strata {
        let rows: Vec<usize> = cohort
            .subjects
            .iter()
            .filter(|s| s.d == event_stratum)
            .map(|s| s.id)
            .collect();
        if rows.is_empty() {
            continue;
        }
        let frame = frame_for(cohort, &rows, terms)?;
        let y: Vec<f64> = rows.iter().map(|&r| f64::from(u8::from(ncc.s[r]))).collect();
        let model = fit_gam(&frame, &y, terms, penalty, &IrlsOptions::default())?;
        let outside = model.outside_support(&frame)?;
        out.extrapolated += outside.iter().filter(|&&o| o).count();
        for (&r, &p) in rows.iter().zip(&model.fitted) {
            probs[r] = if p < PROBABILITY_FLOOR {
                out.floored += 1;
                PROBABILITY_FLOOR
            } else {
                p
            };
        }
        out.warnings.extend(model.warnings.iter().cloned());
        out.models.push(model);
    }
    if out.floored > 0 {
        out.warnings.push(format!("{} fitted probabilities raised to {PROBABILITY_FLOOR}", out.floored));
    }
    for w in &out.warnings {
        log::warn!("{w}");
    }
    out.probs = probs;
    Ok(out)
}

/// Inclusion probabilities for any variant, using default GAM terms.
pub fn inclusion_probabilities(
    cohort: &Cohort,
    ncc: &NccSample,
    spec: &WeightMethodSpec,
    penalty: &PenaltyChoice,
) -> Result<InclusionProbabilities> {
    match spec.family {
        WeightFamily::Km if spec.pi1 == 1.0 => km_inclusion_probabilities(cohort, ncc, spec),
        WeightFamily::Km => ht_inclusion_probabilities(cohort, ncc, spec),
        WeightFamily::Gam => {
            let terms = default_gam_terms(cohort, &ncc.matching, spec)?;
            gam_inclusion_probabilities(cohort, ncc, spec, &terms, penalty)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightDiagnostics {
    pub sum: f64,
    pub n_capped: usize,
    pub min: f64,
    pub max: f64,
}

/// Weights for the selected subjects of one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub ids: Vec<usize>,
    pub probs: Vec<f64>,
    pub weights: Vec<f64>,
    pub capped: Vec<bool>,
    pub method: WeightMethodSpec,
    pub label: String,
    pub diagnostics: WeightDiagnostics,
}

/// `w = 1/p` for selected subjects, capped at the threshold when set.
pub fn finalize_weights(probs: &[f64], ncc: &NccSample, spec: &WeightMethodSpec) -> Result<WeightVector> {
    spec.validate()?;
    if probs.len() != ncc.s.len() {
        return Err(Error::Structure(format!(
            "{} probabilities for a sample over {} subjects",
            probs.len(),
            ncc.s.len()
        )));
    }
    let ids = ncc.selected_ids();
    let mut p_sel = Vec::with_capacity(ids.len());
    let mut weights = Vec::with_capacity(ids.len());
    let mut capped = Vec::with_capacity(ids.len());
    for &j in &ids {
        let p = probs[j];
        if p.is_nan() || p <= 0.0 {
            return Err(Error::Invariant(format!(
                "selected subject {j} has inclusion probability {p}"
            )));
        }
        let raw = 1.0 / p;
        let (w, c) = match spec.threshold {
            Some(t) if raw > t => (t, true),
            _ => (raw, false),
        };
        p_sel.push(p);
        weights.push(w);
        capped.push(c);
    }
    let diagnostics = WeightDiagnostics {
        sum: weights.iter().sum(),
        n_capped: capped.iter().filter(|&&c| c).count(),
        min: weights.iter().copied().fold(f64::INFINITY, f64::min),
        max: weights.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    };
    Ok(WeightVector {
        ids,
        probs: p_sel,
        weights,
        capped,
        label: spec.label(&ncc.matching),
        method: spec.clone(),
        diagnostics,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct WeightRow {
    id: usize,
    prob: f64,
    weight: f64,
    method: String,
    capped: u8,
}

/// Write `id,prob,weight,method,capped`.
pub fn write_weights_csv(wv: &WeightVector, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    for k in 0..wv.ids.len() {
        w.serialize(WeightRow {
            id: wv.ids[k],
            prob: wv.probs[k],
            weight: wv.weights[k],
            method: wv.label.clone(),
            capped: u8::from(wv.capped[k]),
        })
        .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Read `(id, weight)` pairs from a weights CSV.
pub fn read_weights_csv(path: &Path) -> Result<Vec<(usize, f64)>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    r.deserialize::<WeightRow>()
        .map(|row| row.map(|w| (w.id, w.weight)).map_err(|e| Error::csv(path, e)))
        .collect()
}
