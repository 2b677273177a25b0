//! Risk sets, matching and nested case-control sampling.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, FACTOR_NAMES};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchingMode {
    CaliperExact,
    NearestNeighbor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Caliper {
    pub factor: String,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchingSpec {
    pub mode: MatchingMode,
    #[serde(default)]
    pub caliper: Vec<Caliper>,
    #[serde(default)]
    pub exact: Vec<String>,
    #[serde(default)]
    pub nn_factor: Option<String>,
}

impl MatchingSpec {
    pub fn caliper(factor: &str, tolerance: f64) -> Self {
        Self {
            mode: MatchingMode::CaliperExact,
            caliper: vec![Caliper {
                factor: factor.to_string(),
                tolerance,
            }],
            exact: Vec::new(),
            nn_factor: None,
        }
    }

    pub fn nearest_neighbor(factor: &str) -> Self {
        Self {
            mode: MatchingMode::NearestNeighbor,
            caliper: Vec::new(),
            exact: Vec::new(),
            nn_factor: Some(factor.to_string()),
        }
    }

    pub fn with_exact(mut self, factor: &str) -> Self {
        self.exact.push(factor.to_string());
        self
    }

    /// Plain risk sets, no matching constraint. Only valid for weight
    /// bookkeeping ("w/o M" variants), never for sampling.
    pub fn unmatched() -> Self {
        Self {
            mode: MatchingMode::CaliperExact,
            caliper: Vec::new(),
            exact: Vec::new(),
            nn_factor: None,
        }
    }

    /// All factor names the spec matches on.
    pub fn factors(&self) -> Vec<String> {
        match self.mode {
            MatchingMode::CaliperExact => self
                .caliper
                .iter()
                .map(|c| c.factor.clone())
                .chain(self.exact.iter().cloned())
                .collect(),
            MatchingMode::NearestNeighbor => self.nn_factor.iter().cloned().collect(),
        }
    }

    pub fn is_unmatched(&self) -> bool {
        self.mode == MatchingMode::CaliperExact && self.caliper.is_empty() && self.exact.is_empty()
    }

    /// The same spec keeping only factors in `keep`.
    pub fn restricted_to(&self, keep: &[String]) -> Self {
        match self.mode {
            MatchingMode::CaliperExact => Self {
                mode: MatchingMode::CaliperExact,
                caliper: self
                    .caliper
                    .iter()
                    .filter(|c| keep.contains(&c.factor))
                    .cloned()
                    .collect(),
                exact: self
                    .exact
                    .iter()
                    .filter(|f| keep.contains(f))
                    .cloned()
                    .collect(),
                nn_factor: None,
            },
            MatchingMode::NearestNeighbor => match &self.nn_factor {
                Some(f) if keep.contains(f) => self.clone(),
                _ => Self::unmatched(),
            },
        }
    }

    /// Check the spec is usable for sampling.
    pub fn validate(&self) -> Result<()> {
        let known = |f: &str| -> Result<()> {
            if FACTOR_NAMES.contains(&f) {
                Ok(())
            } else {
                Err(Error::Config(format!("unknown matching factor `{f}`")))
            }
        };
        match self.mode {
            MatchingMode::CaliperExact => {
                if self.caliper.is_empty() && self.exact.is_empty() {
                    return Err(Error::Config(
                        "caliper/exact matching needs at least one factor".into(),
                    ));
                }
                if self.nn_factor.is_some() {
                    return Err(Error::Config(
                        "nn_factor is only allowed in nearest_neighbor mode".into(),
                    ));
                }
                for c in &self.caliper {
                    known(&c.factor)?;
                    if !(c.tolerance > 0.0 && c.tolerance.is_finite()) {
                        return Err(Error::Config(format!(
                            "caliper tolerance for `{}` must be > 0, got {}",
                            c.factor, c.tolerance
                        )));
                    }
                }
                for f in &self.exact {
                    known(f)?;
                }
            }
            MatchingMode::NearestNeighbor => {
                let Some(f) = &self.nn_factor else {
                    return Err(Error::Config(
                        "nearest_neighbor mode requires nn_factor".into(),
                    ));
                };
                known(f)?;
                if !self.caliper.is_empty() || !self.exact.is_empty() {
                    return Err(Error::Config(
                        "nearest_neighbor mode takes exactly one factor (nn_factor)".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Column-oriented view of the matching structure of a cohort.
pub(crate) struct Matcher<'a> {
    cohort: &'a Cohort,
    mode: MatchingMode,
    calipers: Vec<(Vec<f64>, f64)>,
    exact: Vec<Vec<f64>>,
    nn: Option<Vec<f64>>,
}

impl<'a> Matcher<'a> {
    pub(crate) fn new(cohort: &'a Cohort, spec: &MatchingSpec) -> Result<Self> {
        let calipers = spec
            .caliper
            .iter()
            .map(|c| Ok((cohort.column(&c.factor)?, c.tolerance)))
            .collect::<Result<Vec<_>>>()?;
        let exact = spec
            .exact
            .iter()
            .map(|f| cohort.column(f))
            .collect::<Result<Vec<_>>>()?;
        let nn = match (spec.mode, &spec.nn_factor) {
            (MatchingMode::NearestNeighbor, Some(f)) => Some(cohort.column(f)?),
            (MatchingMode::NearestNeighbor, None) => {
                return Err(Error::Config("nearest_neighbor mode requires nn_factor".into()))
            }
            _ => None,
        };
        Ok(Self {
            cohort,
            mode: spec.mode,
            calipers,
            exact,
            nn,
        })
    }

    #[inline]
    fn at_risk(&self, j: usize, t: f64) -> bool {
        let s = &self.cohort.subjects[j];
        s.entry <= t && t <= s.t_obs
    }

    #[inline]
    fn close(&self, i: usize, j: usize) -> bool {
        self.calipers
            .iter()
            .all(|(col, eps)| (col[j] - col[i]).abs() <= *eps)
            && self.exact.iter().all(|col| col[j] == col[i])
    }

    /// Candidate controls for case `i`: the effective risk set minus the case.
    pub(crate) fn pool(&self, i: usize) -> Vec<u32> {
        let t = self.cohort.subjects[i].t_obs;
        let n = self.cohort.len();
        match self.mode {
            MatchingMode::CaliperExact => (0..n)
                .filter(|&j| j != i && self.at_risk(j, t) && self.close(i, j))
                .map(|j| j as u32)
                .collect(),
            MatchingMode::NearestNeighbor => {
                let col = self.nn.as_ref().expect("nn column");
                let mut best: Option<(f64, usize)> = None;
                for j in 0..n {
                    if j == i || !self.at_risk(j, t) {
                        continue;
                    }
                    let dist = (col[j] - col[i]).abs();
                    // Strict comparison keeps the lowest id on ties.
                    if best.is_none_or(|(b, _)| dist < b) {
                        best = Some((dist, j));
                    }
                }
                best.map(|(_, j)| vec![j as u32]).unwrap_or_default()
            }
        }
    }
}

fn check_case(cohort: &Cohort, case_id: usize) -> Result<()> {
    match cohort.subjects.get(case_id) {
        None => Err(Error::Argument(format!(
            "case id {case_id} out of range for cohort of size {}",
            cohort.len()
        ))),
        Some(s) if !s.d => Err(Error::Argument(format!(
            "subject {case_id} is not an event and cannot index a risk set"
        ))),
        Some(_) => Ok(()),
    }
}

/// `{j : entry_j <= T_i <= T_j}` for event `case_id`.
pub fn risk_set(cohort: &Cohort, case_id: usize) -> Result<Vec<usize>> {
    check_case(cohort, case_id)?;
    let t = cohort.subjects[case_id].t_obs;
    Ok(cohort
        .subjects
        .iter()
        .filter(|s| s.entry <= t && t <= s.t_obs)
        .map(|s| s.id)
        .collect())
}

/// Effective risk set of `case_id`. Contains the case itself in
/// caliper/exact mode; in nearest-neighbour mode it is the single closest
/// other member of the risk set (lowest id on ties).
pub fn effective_risk_set(cohort: &Cohort, case_id: usize, spec: &MatchingSpec) -> Result<Vec<usize>> {
    check_case(cohort, case_id)?;
    let matcher = Matcher::new(cohort, spec)?;
    let pool = matcher.pool(case_id);
    match spec.mode {
        MatchingMode::CaliperExact => {
            let mut set: Vec<usize> = pool.into_iter().map(|j| j as usize).collect();
            let pos = set.partition_point(|&j| j < case_id);
            set.insert(pos, case_id);
            Ok(set)
        }
        MatchingMode::NearestNeighbor => {
            if pool.is_empty() {
                return Err(Error::Structure(format!(
                    "risk set of case {case_id} has no other member to match"
                )));
            }
            Ok(pool.into_iter().map(|j| j as usize).collect())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedSet {
    pub case_id: usize,
    pub control_ids: Vec<usize>,
}

/// Size bookkeeping for a selected case's effective risk set. `n_i` counts
/// the case, so `n_i - 1` is the size of the control pool in every mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectiveRiskSet {
    pub case_id: usize,
    pub n_i: usize,
}

/// A nested case-control sample drawn from a cohort.
///
/// `s1[j]` marks subjects selected as cases. Membership of effective risk
/// sets is recomputed from `matching` when needed rather than stored, which
/// keeps memory linear in the cohort size.
#[derive(Debug, Clone, PartialEq)]
pub struct NccSample {
    pub s: Vec<bool>,
    pub s1: Vec<bool>,
    pub matched_sets: Vec<MatchedSet>,
    pub effective_risk_sets: Vec<EffectiveRiskSet>,
    pub matching: MatchingSpec,
    pub m: usize,
    pub pi1: f64,
    pub seed: u64,
    pub warnings: Vec<String>,
}

impl NccSample {
    pub fn n_selected(&self) -> usize {
        self.s.iter().filter(|&&s| s).count()
    }

    pub fn selected_ids(&self) -> Vec<usize> {
        self.s
            .iter()
            .enumerate()
            .filter(|(_, &s)| s)
            .map(|(j, _)| j)
            .collect()
    }

    /// Member ids of the effective risk set of the `k`-th matched set,
    /// including the case in caliper/exact mode.
    pub fn effective_risk_set_ids(&self, cohort: &Cohort, k: usize) -> Result<Vec<usize>> {
        let case = self.matched_sets[k].case_id;
        effective_risk_set(cohort, case, &self.matching)
    }
}

fn check_sampling_args(spec: &MatchingSpec, m: usize, pi1: f64) -> Result<()> {
    spec.validate()?;
    if m == 0 {
        return Err(Error::Argument("m must be at least 1".into()));
    }
    if !(pi1 > 0.0 && pi1 <= 1.0) {
        return Err(Error::Argument(format!("pi1 must lie in (0, 1], got {pi1}")));
    }
    if spec.mode == MatchingMode::NearestNeighbor && m != 1 {
        return Err(Error::Argument(format!(
            "nearest-neighbour matching is defined for m = 1 only, got m = {m}"
        )));
    }
    Ok(())
}

/// Draw a nested case-control sample.
///
/// Events become cases independently with probability `pi1`; each case gets
/// `m` controls drawn without replacement from its effective risk set minus
/// itself. Every case uses its own random substream so that the draws of one
/// case do not depend on which other cases were selected.
pub fn sample_ncc(
    cohort: &Cohort,
    spec: &MatchingSpec,
    m: usize,
    pi1: f64,
    seed: u64,
) -> Result<NccSample> {
    check_sampling_args(spec, m, pi1)?;
    cohort.check_ids()?;
    let n = cohort.len();

    let mut case_rng = ChaCha8Rng::seed_from_u64(seed);
    case_rng.set_stream(0);
    let cases: Vec<usize> = cohort
        .subjects
        .iter()
        .filter(|s| s.d)
        .filter_map(|s| {
            let u: f64 = case_rng.random();
            (u < pi1).then_some(s.id)
        })
        .collect();

    let matcher = Matcher::new(cohort, spec)?;
    let pools: Vec<Vec<u32>> = cases.par_iter().map(|&i| matcher.pool(i)).collect();

    let mut s = vec![false; n];
    let mut s1 = vec![false; n];
    let mut matched_sets = Vec::with_capacity(cases.len());
    let mut effective_risk_sets = Vec::with_capacity(cases.len());
    let mut warnings = Vec::new();
    for (&case, pool) in cases.iter().zip(&pools) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1 + case as u64);
        let mut controls: Vec<usize> = if pool.len() <= m {
            if pool.len() < m {
                warnings.push(format!(
                    "case {case}: only {} of {m} controls available",
                    pool.len()
                ));
            }
            pool.iter().map(|&j| j as usize).collect()
        } else {
            rand::seq::index::sample(&mut rng, pool.len(), m)
                .into_iter()
                .map(|k| pool[k] as usize)
                .collect()
        };
        controls.sort_unstable();
        s[case] = true;
        s1[case] = true;
        for &c in &controls {
            s[c] = true;
        }
        effective_risk_sets.push(EffectiveRiskSet {
            case_id: case,
            n_i: pool.len() + 1,
        });
        matched_sets.push(MatchedSet {
            case_id: case,
            control_ids: controls,
        });
    }
    for w in &warnings {
        log::warn!("{w}");
    }

    Ok(NccSample {
        s,
        s1,
        matched_sets,
        effective_risk_sets,
        matching: spec.clone(),
        m,
        pi1,
        seed,
        warnings,
    })
}

/// Eligibility counts: (eligible, ineligible).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EligibilityCounts {
    pub eligible: usize,
    pub ineligible: usize,
}

/// Subjects with a positive chance of entering the sample: events (cases are
/// drawn with positive probability) and nonevents that belong to at least one
/// selected case's effective risk set.
pub fn eligibility(cohort: &Cohort, ncc: &NccSample) -> Result<(Vec<bool>, EligibilityCounts)> {
    if ncc.s.len() != cohort.len() {
        return Err(Error::Structure(format!(
            "sample covers {} subjects but the cohort has {}",
            ncc.s.len(),
            cohort.len()
        )));
    }
    let mut mask: Vec<bool> = cohort.subjects.iter().map(|s| s.d && ncc.pi1 > 0.0).collect();
    let matcher = Matcher::new(cohort, &ncc.matching)?;
    let pools: Vec<Vec<u32>> = ncc
        .matched_sets
        .par_iter()
        .map(|set| matcher.pool(set.case_id))
        .collect();
    for pool in pools {
        for j in pool {
            mask[j as usize] = true;
        }
    }
    let eligible = mask.iter().filter(|&&e| e).count();
    Ok((
        mask,
        EligibilityCounts {
            eligible,
            ineligible: cohort.len() - eligible,
        },
    ))
}

#[derive(Debug, Serialize, Deserialize)]
struct SelectionRow {
    id: usize,
    s: u8,
    s1: u8,
}

#[derive(Debug, Serialize, Deserialize)]
struct MatchedRow {
    case_id: usize,
    control_id: usize,
    set_index: usize,
}

/// Write `selection.csv` and `matched_sets.csv` into `dir`.
pub fn write_ncc_csv(ncc: &NccSample, dir: &Path) -> Result<()> {
    let sel = dir.join("selection.csv");
    let mut w = csv::Writer::from_path(&sel).map_err(|e| Error::csv(&sel, e))?;
    for (id, (&s, &s1)) in ncc.s.iter().zip(&ncc.s1).enumerate() {
        w.serialize(SelectionRow {
            id,
            s: u8::from(s),
            s1: u8::from(s1),
        })
        .map_err(|e| Error::csv(&sel, e))?;
    }
    w.flush().map_err(|e| Error::io(&sel, e))?;

    let sets = dir.join("matched_sets.csv");
    let mut w = csv::Writer::from_path(&sets).map_err(|e| Error::csv(&sets, e))?;
    if ncc.matched_sets.iter().all(|set| set.control_ids.is_empty()) {
        w.write_record(["case_id", "control_id", "set_index"])
            .map_err(|e| Error::csv(&sets, e))?;
    }
    for (k, set) in ncc.matched_sets.iter().enumerate() {
        for &c in &set.control_ids {
            w.serialize(MatchedRow {
                case_id: set.case_id,
                control_id: c,
                set_index: k,
            })
            .map_err(|e| Error::csv(&sets, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(&sets, e))
}

/// Rebuild a sample from its CSV export. Effective-risk-set sizes are
/// recomputed from `spec`; the seed is not recoverable and is set to 0.
pub fn read_ncc_csv(
    cohort: &Cohort,
    selection: &Path,
    matched_sets: &Path,
    spec: &MatchingSpec,
    m: usize,
    pi1: f64,
) -> Result<NccSample> {
    check_sampling_args(spec, m, pi1)?;
    let n = cohort.len();
    let mut s = vec![false; n];
    let mut s1 = vec![false; n];
    let mut r = csv::Reader::from_path(selection).map_err(|e| Error::csv(selection, e))?;
    for row in r.deserialize::<SelectionRow>() {
        let row = row.map_err(|e| Error::csv(selection, e))?;
        if row.id >= n {
            return Err(Error::Structure(format!(
                "{}: id {} outside cohort of size {n}",
                selection.display(),
                row.id
            )));
        }
        s[row.id] = row.s == 1;
        s1[row.id] = row.s1 == 1;
        if s1[row.id] && !(s[row.id] && cohort.subjects[row.id].d) {
            return Err(Error::Structure(format!(
                "{}: subject {} is marked as a case but is not a selected event",
                selection.display(),
                row.id
            )));
        }
    }
    let mut controls: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut r = csv::Reader::from_path(matched_sets).map_err(|e| Error::csv(matched_sets, e))?;
    for row in r.deserialize::<MatchedRow>() {
        let row = row.map_err(|e| Error::csv(matched_sets, e))?;
        if row.case_id >= n || row.control_id >= n || !s1[row.case_id] || !s[row.control_id] {
            return Err(Error::Structure(format!(
                "{}: matched pair ({}, {}) is inconsistent with the selection file",
                matched_sets.display(),
                row.case_id,
                row.control_id
            )));
        }
        controls.entry(row.case_id).or_default().push(row.control_id);
    }
    let matcher = Matcher::new(cohort, spec)?;
    let cases: Vec<usize> = (0..n).filter(|&j| s1[j]).collect();
    let mut matched = Vec::with_capacity(cases.len());
    let mut ers = Vec::with_capacity(cases.len());
    for case in cases {
        let mut ctrl = controls.remove(&case).unwrap_or_default();
        ctrl.sort_unstable();
        let pool = matcher.pool(case);
        ers.push(EffectiveRiskSet {
            case_id: case,
            n_i: pool.len() + 1,
        });
        matched.push(MatchedSet {
            case_id: case,
            control_ids: ctrl,
        });
    }
    Ok(NccSample {
        s,
        s1,
        matched_sets: matched,
        effective_risk_sets: ers,
        matching: spec.clone(),
        m,
        pi1,
        seed: 0,
        warnings: Vec::new(),
    })
}
