//! Synthetic cohorts under a Weibull proportional-hazards model.
//!
//! Each subject carries two matching factors (`m1`, a centered and scaled
//! uniform, and `m2`, a centered and scaled fair coin), a SNP-like exposure
//! `xa` with three levels whose allele frequency may depend on the matching
//! factors, and a Gaussian exposure `xb` whose mean is `xa * (beta + gamma*m1)`.
//! Event times follow a proportional-hazards model on top of a Weibull
//! baseline and are right-censored by a uniform censoring time.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand::distr::Open01;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Random-number substreams, one per variable block.
mod stream {
    pub const M1: u64 = 0;
    pub const M2: u64 = 1;
    pub const XA: u64 = 2;
    pub const XB: u64 = 3;
    pub const Y: u64 = 4;
    pub const C: u64 = 5;
}

const SQRT_12: f64 = 3.464_101_615_137_754_6;

/// Parameters of the data-generating mechanism.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n: usize,
    /// Shift of the minor allele frequency in the low-`m1` region.
    pub rho_mxa: f64,
    /// Slope of `m1` on the `xa -> xb` effect.
    pub gamma_mxb: f64,
    /// Target fraction of the variance of `xb` explained by `xa` and `m1`.
    pub r2_xb: f64,
    pub alpha_a: f64,
    pub alpha_b: f64,
    pub alpha_m1: f64,
    pub alpha_m2: f64,
    pub alpha_m1m2: f64,
    pub alpha_mxa: f64,
    pub weibull_shape: f64,
    pub weibull_scale: f64,
    pub censor_lo: f64,
    pub censor_hi: f64,
    /// Whether `m2` shapes the allele frequency (bivariate matching scenarios).
    pub m2_active: bool,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n: 10_000,
            rho_mxa: 0.0,
            gamma_mxb: 0.0,
            r2_xb: 0.1,
            alpha_a: 0.0,
            alpha_b: 0.0,
            alpha_m1: 0.0,
            alpha_m2: 0.0,
            alpha_m1m2: 0.0,
            alpha_mxa: 0.0,
            weibull_shape: 3.0,
            weibull_scale: 70.0,
            censor_lo: 20.0,
            censor_hi: 50.0,
            m2_active: false,
            seed: 1,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("rho_mxa", self.rho_mxa),
            ("gamma_mxb", self.gamma_mxb),
            ("alpha_a", self.alpha_a),
            ("alpha_b", self.alpha_b),
            ("alpha_m1", self.alpha_m1),
            ("alpha_m2", self.alpha_m2),
            ("alpha_m1m2", self.alpha_m1m2),
            ("alpha_mxa", self.alpha_mxa),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite, got {v}")));
            }
        }
        if !(self.weibull_shape > 0.0 && self.weibull_shape.is_finite()) {
            return Err(Error::Config(format!(
                "weibull_shape must be > 0, got {}",
                self.weibull_shape
            )));
        }
        if !(self.weibull_scale > 0.0 && self.weibull_scale.is_finite()) {
            return Err(Error::Config(format!(
                "weibull_scale must be > 0, got {}",
                self.weibull_scale
            )));
        }
        if !(self.censor_lo >= 0.0 && self.censor_lo < self.censor_hi && self.censor_hi.is_finite())
        {
            return Err(Error::Config(format!(
                "censoring window must satisfy 0 <= censor_lo < censor_hi, got [{}, {}]",
                self.censor_lo, self.censor_hi
            )));
        }
        let maf_max = 0.25 + self.rho_mxa.max(0.0);
        let maf_min = 0.25 + self.rho_mxa.min(0.0);
        if !(0.0..=1.0).contains(&maf_max) || !(0.0..=1.0).contains(&maf_min) {
            return Err(Error::Config(format!(
                "rho_mxa = {} puts the allele frequency outside [0, 1]",
                self.rho_mxa
            )));
        }
        if !(self.r2_xb > 0.0 && self.r2_xb < 1.0) {
            // sigma^2 = var * (1 - r2) / r2 is zero or infinite at the ends.
            return Err(Error::Config(format!(
                "r2_xb must lie strictly inside (0, 1) to calibrate the noise variance, got {}",
                self.r2_xb
            )));
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// One cohort member.
#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub id: usize,
    pub m1: f64,
    /// Centered and scaled binary factor: -1 for raw level 0, +1 for raw level 1.
    pub m2: f64,
    /// Raw SNP level in {0, 1, 2}.
    pub xa_raw: u8,
    pub xa: f64,
    pub xb: f64,
    pub entry: f64,
    pub t_obs: f64,
    pub d: bool,
    /// Latent event time; only known for simulated cohorts.
    pub y_latent: Option<f64>,
}

impl Subject {
    pub fn m2_raw(&self) -> u8 {
        u8::from(self.m2 > 0.0)
    }

    /// Look up a named factor. Recognised names: `m1`, `m2`, `xa`, `xa_raw`,
    /// `xb`, `entry`, `t_obs`, `d`.
    pub fn factor(&self, name: &str) -> Option<f64> {
        Some(match name {
            "m1" => self.m1,
            "m2" => self.m2,
            "xa" => self.xa,
            "xa_raw" => f64::from(self.xa_raw),
            "xb" => self.xb,
            "entry" => self.entry,
            "t_obs" => self.t_obs,
            "d" => f64::from(u8::from(self.d)),
            _ => return None,
        })
    }
}

/// Names accepted by [`Subject::factor`].
pub const FACTOR_NAMES: [&str; 8] = ["m1", "m2", "xa", "xa_raw", "xb", "entry", "t_obs", "d"];

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub subjects: Vec<Subject>,
    /// Generating configuration; absent for cohorts read from disk.
    pub config: Option<ScenarioConfig>,
}

impl Cohort {
    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn n_events(&self) -> usize {
        self.subjects.iter().filter(|s| s.d).count()
    }

    /// Column of a named factor, or a structural error for unknown names.
    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        if !FACTOR_NAMES.contains(&name) {
            return Err(Error::Structure(format!("unknown factor `{name}`")));
        }
        Ok(self
            .subjects
            .iter()
            .map(|s| s.factor(name).expect("known factor"))
            .collect())
    }

    pub fn check_ids(&self) -> Result<()> {
        for (i, s) in self.subjects.iter().enumerate() {
            if s.id != i {
                return Err(Error::Structure(format!(
                    "subject at position {i} has id {}; ids must be 0..n-1 in order",
                    s.id
                )));
            }
        }
        Ok(())
    }
}

/// Log relative hazard of `subject` under `config`.
pub fn linear_predictor(subject: &Subject, config: &ScenarioConfig) -> f64 {
    let m12 = subject.m1 * subject.m2;
    config.alpha_a * subject.xa
        + config.alpha_b * subject.xb
        + config.alpha_m1 * subject.m1
        + config.alpha_m2 * subject.m2
        + config.alpha_m1m2 * m12
        + config.alpha_mxa * m12 * subject.xa
}

/// Inverse-transform draw of an event time with cumulative hazard
/// `(t / scale)^shape * exp(eta)`.
pub fn sample_event_time(eta: f64, config: &ScenarioConfig, u: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::Argument(format!("uniform draw must lie in (0, 1), got {u}")));
    }
    let h = -u.ln() * (-eta).exp();
    Ok(config.weibull_scale * h.powf(1.0 / config.weibull_shape))
}

/// Observed time and event indicator. Ties count as events.
pub fn apply_censoring(y: f64, c: f64) -> (f64, bool) {
    if y <= c {
        (y, true)
    } else {
        (c, false)
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance (n - 1 denominator); zero for fewer than two values.
fn sample_var(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let mu = mean(xs);
    xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (xs.len() - 1) as f64
}

fn sample_cov(xs: &[f64], ys: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let mx = mean(xs);
    let my = mean(ys);
    xs.iter()
        .zip(ys)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum::<f64>()
        / (xs.len() - 1) as f64
}

fn standardize(xs: &mut [f64]) {
    if xs.is_empty() {
        return;
    }
    let mu = mean(xs);
    let sd = sample_var(xs).sqrt();
    for x in xs.iter_mut() {
        *x -= mu;
        if sd > 0.0 {
            *x /= sd;
        }
    }
}

/// Solve `beta` so that `beta * a + gamma * b` has unit sample variance.
/// When no real root exists the variance-minimising `beta` is returned.
fn calibrate_beta(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let va = sample_var(a);
    if va <= 0.0 {
        return 0.0;
    }
    let cab = sample_cov(a, b);
    let vb = sample_var(b);
    let half_b = gamma * cab;
    let disc = half_b * half_b - va * (gamma * gamma * vb - 1.0);
    (-half_b + disc.max(0.0).sqrt()) / va
}

/// Generate a cohort. Output is a pure function of `(config, seed)`; the
/// `seed` field of `config` is ignored in favour of the explicit argument.
pub fn generate_cohort(config: &ScenarioConfig, seed: u64) -> Result<Cohort> {
    config.validate()?;
    let n = config.n;
    let mut snapshot = config.clone();
    snapshot.seed = seed;
    if n == 0 {
        return Ok(Cohort {
            subjects: Vec::new(),
            config: Some(snapshot),
        });
    }

    let mut rng = stream_rng(seed, stream::M1);
    let m1: Vec<f64> = (0..n)
        .map(|_| (rng.random::<f64>() - 0.5) * SQRT_12)
        .collect();
    let mut rng = stream_rng(seed, stream::M2);
    let m2_raw: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<bool>())).collect();

    let mut rng = stream_rng(seed, stream::XA);
    let xa_raw: Vec<u8> = (0..n)
        .map(|i| {
            let shifted = if config.m2_active {
                m1[i] <= 0.0 && m2_raw[i] == 0
            } else {
                m1[i] <= -1.0
            };
            let maf = 0.25 + if shifted { config.rho_mxa } else { 0.0 };
            let p2 = maf * maf;
            let p1 = 2.0 * maf * (1.0 - maf);
            let u: f64 = rng.random();
            if u < p2 {
                2
            } else if u < p2 + p1 {
                1
            } else {
                0
            }
        })
        .collect();

    let a: Vec<f64> = xa_raw.iter().map(|&x| f64::from(x)).collect();
    let b: Vec<f64> = a.iter().zip(&m1).map(|(x, m)| x * m).collect();
    let beta = calibrate_beta(&a, &b, config.gamma_mxb);
    let systematic: Vec<f64> = a
        .iter()
        .zip(&b)
        .map(|(x, xm)| beta * x + config.gamma_mxb * xm)
        .collect();
    let var_sys = sample_var(&systematic);
    let var_sys = if var_sys > 0.0 { var_sys } else { 1.0 };
    let sigma2 = var_sys * (1.0 - config.r2_xb) / config.r2_xb;
    if !(sigma2.is_finite() && sigma2 > 0.0) {
        return Err(Error::Config(format!(
            "calibrated noise variance is not finite and positive ({sigma2})"
        )));
    }
    let sigma = sigma2.sqrt();
    let mut rng = stream_rng(seed, stream::XB);
    let mut xb: Vec<f64> = systematic
        .iter()
        .map(|s| {
            let z: f64 = rng.sample(StandardNormal);
            s + sigma * z
        })
        .collect();
    let mut xa = a;
    standardize(&mut xa);
    standardize(&mut xb);

    let mut subjects: Vec<Subject> = (0..n)
        .map(|i| Subject {
            id: i,
            m1: m1[i],
            m2: 2.0 * f64::from(m2_raw[i]) - 1.0,
            xa_raw: xa_raw[i],
            xa: xa[i],
            xb: xb[i],
            entry: 0.0,
            t_obs: 0.0,
            d: false,
            y_latent: None,
        })
        .collect();

    let mut rng_y = stream_rng(seed, stream::Y);
    let mut rng_c = stream_rng(seed, stream::C);
    let width = config.censor_hi - config.censor_lo;
    for s in subjects.iter_mut() {
        let eta = linear_predictor(s, config);
        let u: f64 = rng_y.sample(Open01);
        let y = sample_event_time(eta, config, u)?;
        let c = config.censor_lo + width * rng_c.random::<f64>();
        let (t, d) = apply_censoring(y, c);
        s.t_obs = t;
        s.d = d;
        s.y_latent = Some(y);
    }

    Ok(Cohort {
        subjects,
        config: Some(snapshot),
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct CohortRow {
    id: usize,
    m1: f64,
    m2: f64,
    xa_raw: u8,
    xa: f64,
    xb: f64,
    entry: f64,
    t_obs: f64,
    d: u8,
}

/// Write the cohort as CSV (`id,m1,m2,xa_raw,xa,xb,entry,t_obs,d`).
pub fn write_cohort_csv(cohort: &Cohort, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    for s in &cohort.subjects {
        w.serialize(CohortRow {
            id: s.id,
            m1: s.m1,
            m2: s.m2,
            xa_raw: s.xa_raw,
            xa: s.xa,
            xb: s.xb,
            entry: s.entry,
            t_obs: s.t_obs,
            d: u8::from(s.d),
        })
        .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_cohort_csv(path: &Path) -> Result<Cohort> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut subjects = Vec::new();
    for row in r.deserialize::<CohortRow>() {
        let row = row.map_err(|e| Error::csv(path, e))?;
        if row.d > 1 || row.xa_raw > 2 {
            return Err(Error::Parse(format!(
                "{}: subject {} has out-of-range d or xa_raw",
                path.display(),
                row.id
            )));
        }
        if row.t_obs < row.entry {
            return Err(Error::Parse(format!(
                "{}: subject {} exits before entry",
                path.display(),
                row.id
            )));
        }
        subjects.push(Subject {
            id: row.id,
            m1: row.m1,
            m2: row.m2,
            xa_raw: row.xa_raw,
            xa: row.xa,
            xb: row.xb,
            entry: row.entry,
            t_obs: row.t_obs,
            d: row.d == 1,
            y_latent: None,
        });
    }
    let cohort = Cohort {
        subjects,
        config: None,
    };
    cohort.check_ids()?;
    Ok(cohort)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    fn subject() -> Subject {
        Subject {
            id: 0,
            m1: 0.0,
            m2: 0.0,
            xa_raw: 0,
            xa: 0.0,
            xb: 0.0,
            entry: 0.0,
            t_obs: 1.0,
            d: false,
            y_latent: None,
        }
    }

    #[test]
    fn linear_predictor_examples() {
        let mut cfg = ScenarioConfig {
            alpha_a: LN_2,
            alpha_b: LN_2,
            alpha_m1: LN_2,
            ..Default::default()
        };
        assert_eq!(linear_predictor(&subject(), &cfg), 0.0);

        let s = Subject {
            xa: 1.0,
            ..subject()
        };
        assert!((linear_predictor(&s, &cfg) - LN_2).abs() < 1e-12);

        cfg = ScenarioConfig {
            alpha_mxa: LN_2,
            ..Default::default()
        };
        let s = Subject {
            m1: 1.0,
            m2: 1.0,
            xa: 1.0,
            ..subject()
        };
        assert!((linear_predictor(&s, &cfg) - LN_2).abs() < 1e-12);
    }

    #[test]
    fn event_time_inversion() {
        let cfg = ScenarioConfig::default();
        let y = sample_event_time(0.0, &cfg, (-1.0f64).exp()).unwrap();
        assert!((y - 70.0).abs() < 1e-10);
        let y = sample_event_time(LN_2, &cfg, (-2.0f64).exp()).unwrap();
        assert!((y - 70.0).abs() < 1e-10);
        assert!(sample_event_time(0.0, &cfg, 0.0).is_err());
        assert!(sample_event_time(0.0, &cfg, 1.0).is_err());
    }

    #[test]
    fn censoring_rule() {
        assert_eq!(apply_censoring(10.0, 30.0), (10.0, true));
        assert_eq!(apply_censoring(60.0, 30.0), (30.0, false));
        assert_eq!(apply_censoring(30.0, 30.0), (30.0, true));
    }

    #[test]
    fn empty_cohort() {
        let cfg = ScenarioConfig {
            n: 0,
            ..Default::default()
        };
        assert!(generate_cohort(&cfg, 3).unwrap().is_empty());
    }

    #[test]
    fn degenerate_r2_is_a_config_error() {
        for r2 in [0.0, 1.0, 1.5] {
            let cfg = ScenarioConfig {
                n: 100,
                r2_xb: r2,
                ..Default::default()
            };
            assert!(matches!(generate_cohort(&cfg, 1), Err(Error::Config(_))));
        }
    }

    #[test]
    fn invalid_configs() {
        let bad = [
            ScenarioConfig {
                censor_lo: 50.0,
                censor_hi: 20.0,
                ..Default::default()
            },
            ScenarioConfig {
                weibull_shape: 0.0,
                ..Default::default()
            },
            ScenarioConfig {
                weibull_scale: -1.0,
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn subject_invariants_hold() {
        let cfg = ScenarioConfig {
            n: 2_000,
            alpha_a: LN_2,
            alpha_b: LN_2,
            alpha_m1: LN_2,
            rho_mxa: 0.2,
            ..Default::default()
        };
        let cohort = generate_cohort(&cfg, 11).unwrap();
        cohort.check_ids().unwrap();
        for s in &cohort.subjects {
            assert!(s.t_obs >= s.entry);
            assert!(s.m2 == 1.0 || s.m2 == -1.0);
            assert!(s.xa_raw <= 2);
            if s.d {
                assert_eq!(Some(s.t_obs), s.y_latent);
            } else {
                assert!(s.t_obs < s.y_latent.unwrap());
            }
            assert!(s.t_obs >= cfg.censor_lo || s.d);
        }
    }

    #[test]
    fn beta_calibration_hits_unit_variance() {
        let a = [0.0, 1.0, 2.0, 1.0, 0.0, 0.0];
        let b = [0.0, 0.3, -1.2, 0.5, 0.0, 0.0];
        let beta = calibrate_beta(&a, &b, 0.4);
        let s: Vec<f64> = a.iter().zip(&b).map(|(x, y)| beta * x + 0.4 * y).collect();
        assert!((sample_var(&s) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn toml_roundtrip() {
        let cfg = ScenarioConfig::from_toml_str("n = 500\nrho_mxa = 0.2\nm2_active = true\n").unwrap();
        assert_eq!(cfg.n, 500);
        assert!(cfg.m2_active);
        assert_eq!(cfg.weibull_scale, 70.0);
        assert!(ScenarioConfig::from_toml_str("bogus = 1").is_err());
    }
}
