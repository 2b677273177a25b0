mod common;

use common::{ks_distance, weibull_cdf};
use ncc_ipw::cohort::{generate_cohort, sample_event_time, ScenarioConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64
}

fn ln2() -> f64 {
    2f64.ln()
}

/// Event fraction from a straight-line simulation of the univariate
/// scenario with `gamma = 0`, using its own random source.
fn oracle_event_fraction(n: usize, rho: f64, alpha: f64, seed: u64) -> f64 {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut m1 = Vec::with_capacity(n);
    let mut xa = Vec::with_capacity(n);
    for _ in 0..n {
        let m = (rng.random::<f64>() - 0.5) * 12f64.sqrt();
        let maf = if m <= -1.0 { 0.25 + rho } else { 0.25 };
        let alleles = u8::from(rng.random::<f64>() < maf) + u8::from(rng.random::<f64>() < maf);
        m1.push(m);
        xa.push(f64::from(alleles));
    }
    let (ma, sa) = (mean(&xa), var(&xa).sqrt());
    let xa: Vec<f64> = xa.iter().map(|v| (v - ma) / sa).collect();
    // With gamma = 0 the standardized xb is sqrt(r2) xa + sqrt(1 - r2) z.
    let xb: Vec<f64> = xa
        .iter()
        .map(|&a| 0.1f64.sqrt() * a + 0.9f64.sqrt() * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut events = 0;
    for i in 0..n {
        let eta = alpha * (xa[i] + xb[i] + m1[i]);
        let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
        let y = 70.0 * (-u.ln() * (-eta).exp()).powf(1.0 / 3.0);
        let c = 20.0 + 30.0 * rng.random::<f64>();
        if y <= c {
            events += 1;
        }
    }
    events as f64 / n as f64
}

#[test]
fn cohort_matches_straight_line_oracle() {
    let config = ScenarioConfig {
        n: 100_000,
        rho_mxa: 0.2,
        alpha_a: ln2(),
        alpha_b: ln2(),
        alpha_m1: ln2(),
        ..ScenarioConfig::default()
    };
    let cohort = generate_cohort(&config, 42).unwrap();
    let m1 = cohort.column("m1").unwrap();
    assert!(mean(&m1).abs() < 0.02);
    assert!((var(&m1) - 1.0).abs() < 0.02);
    let frac = cohort.n_events() as f64 / cohort.len() as f64;
    let oracle = oracle_event_fraction(100_000, 0.2, ln2(), 7);
    // Two independent binomial proportions: SE of the difference is below 0.0021.
    assert!((frac - oracle).abs() < 0.01, "generator {frac} vs oracle {oracle}");
}

#[test]
fn baseline_latent_times_are_weibull() {
    let config = ScenarioConfig {
        n: 100_000,
        ..ScenarioConfig::default()
    };
    let cohort = generate_cohort(&config, 3).unwrap();
    let y: Vec<f64> = cohort.subjects.iter().map(|s| s.y_latent.unwrap()).collect();
    let d = ks_distance(y, weibull_cdf);
    assert!(d < 0.01, "KS distance {d}");
}

#[test]
fn inverse_transform_draws_are_weibull() {
    let config = ScenarioConfig::default();
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let draws: Vec<f64> = (0..100_000)
        .map(|_| sample_event_time(0.0, &config, rng.random_range(1e-300..1.0)).unwrap())
        .collect();
    let d = ks_distance(draws, weibull_cdf);
    assert!(d < 0.01, "KS distance {d}");
}

#[test]
fn larger_eta_shortens_event_times() {
    let config = ScenarioConfig::default();
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let mut base = Vec::new();
    let mut raised = Vec::new();
    for _ in 0..10_000 {
        let u = rng.random_range(1e-300..1.0);
        base.push(sample_event_time(0.0, &config, u).unwrap());
        raised.push(sample_event_time(ln2(), &config, u).unwrap());
    }
    base.sort_by(f64::total_cmp);
    raised.sort_by(f64::total_cmp);
    assert!(raised[5_000] < base[5_000]);
}

#[test]
fn allele_frequency_without_shift() {
    let cohort = generate_cohort(&ScenarioConfig { n: 50_000, ..ScenarioConfig::default() }, 5).unwrap();
    let alleles: f64 = cohort.subjects.iter().map(|s| f64::from(s.xa_raw)).sum();
    let maf = alleles / (2.0 * cohort.len() as f64);
    assert!((maf - 0.25).abs() < 0.01, "maf {maf}");
}

#[test]
fn explained_variance_is_calibrated() {
    let config = ScenarioConfig {
        n: 50_000,
        rho_mxa: 0.2,
        gamma_mxb: 0.5,
        ..ScenarioConfig::default()
    };
    let cohort = generate_cohort(&config, 6).unwrap();
    // R^2 of xb on (1, xa_raw, xa_raw * m1) by normal equations.
    let rows: Vec<[f64; 3]> = cohort
        .subjects
        .iter()
        .map(|s| [1.0, f64::from(s.xa_raw), f64::from(s.xa_raw) * s.m1])
        .collect();
    let y = cohort.column("xb").unwrap();
    let mut xtx = nalgebra::Matrix3::<f64>::zeros();
    let mut xty = nalgebra::Vector3::<f64>::zeros();
    for (r, &yi) in rows.iter().zip(&y) {
        let v = nalgebra::Vector3::from(*r);
        xtx += v * v.transpose();
        xty += v * yi;
    }
    let b = xtx.cholesky().unwrap().solve(&xty);
    let fitted: Vec<f64> = rows.iter().map(|r| nalgebra::Vector3::from(*r).dot(&b)).collect();
    let r2 = var(&fitted) / var(&y);
    assert!((r2 - 0.1).abs() < 0.02, "r2 {r2}");
}

#[test]
fn cohorts_are_deterministic_per_seed() {
    let config = ScenarioConfig { n: 2_000, rho_mxa: 0.2, alpha_a: ln2(), ..ScenarioConfig::default() };
    let a = generate_cohort(&config, 11).unwrap();
    let b = generate_cohort(&config, 11).unwrap();
    let c = generate_cohort(&config, 12).unwrap();
    assert_eq!(a.subjects, b.subjects);
    assert_ne!(a.subjects, c.subjects);
}

#[test]
fn outcome_parameters_leave_covariate_streams_untouched() {
    let base = ScenarioConfig { n: 1_000, ..ScenarioConfig::default() };
    let shifted = ScenarioConfig { alpha_b: 1.0, censor_hi: 60.0, ..base.clone() };
    let a = generate_cohort(&base, 4).unwrap();
    let b = generate_cohort(&shifted, 4).unwrap();
    for (s, t) in a.subjects.iter().zip(&b.subjects) {
        assert_eq!((s.m1, s.m2, s.xa_raw, s.xb), (t.m1, t.m2, t.xa_raw, t.xb));
    }
}
