use std::collections::BTreeSet;

use ncc_ipw::cohort::{generate_cohort, Cohort, ScenarioConfig};
use ncc_ipw::sampler::{effective_risk_set, eligibility, risk_set, sample_ncc, MatchingSpec};
use ncc_ipw::weights::{finalize_weights, ht_inclusion_probabilities, km_inclusion_probabilities, WeightMethodSpec};
use proptest::prelude::*;

fn eps() -> f64 {
    3f64.sqrt() / 5.0
}

fn cohort(n: usize, seed: u64) -> Cohort {
    let config = ScenarioConfig {
        n,
        rho_mxa: 0.2,
        alpha_a: 2f64.ln(),
        alpha_b: 2f64.ln(),
        alpha_m1: 2f64.ln(),
        ..ScenarioConfig::default()
    };
    generate_cohort(&config, seed).unwrap()
}

#[test]
fn caliper_keeps_a_fifth_of_the_risk_set() {
    let c = cohort(5_000, 1);
    let spec = MatchingSpec::caliper("m1", eps());
    let cases: Vec<usize> = c.subjects.iter().filter(|s| s.d).map(|s| s.id).collect();
    let fractions: Vec<f64> = cases
        .iter()
        .map(|&i| {
            let eff = effective_risk_set(&c, i, &spec).unwrap().len() as f64;
            eff / risk_set(&c, i).unwrap().len() as f64
        })
        .collect();
    let mean = fractions.iter().sum::<f64>() / fractions.len() as f64;
    assert!((mean - 0.20).abs() < 0.02, "mean fraction {mean}");
}

#[test]
fn controls_come_from_their_effective_risk_set() {
    let c = cohort(1_500, 2);
    let spec = MatchingSpec::caliper("m1", eps());
    let ncc = sample_ncc(&c, &spec, 2, 1.0, 9).unwrap();
    for (set, ers) in ncc.matched_sets.iter().zip(&ncc.effective_risk_sets) {
        let eff = effective_risk_set(&c, set.case_id, &spec).unwrap();
        assert_eq!(ers.case_id, set.case_id);
        assert_eq!(ers.n_i, eff.len());
        for ctrl in &set.control_ids {
            assert!(eff.contains(ctrl));
        }
    }
}

#[test]
fn nn_eligible_subjects_are_exactly_the_selected_ones() {
    let c = cohort(10_000, 3);
    let spec = MatchingSpec::nearest_neighbor("m1");
    let ncc = sample_ncc(&c, &spec, 1, 1.0, 5).unwrap();
    let probs = km_inclusion_probabilities(&c, &ncc, &WeightMethodSpec::km(&["m1"])).unwrap().probs;
    let positive: Vec<bool> = probs.iter().map(|&p| p > 0.0).collect();
    assert_eq!(positive, ncc.s);

    let controls: BTreeSet<usize> = ncc
        .matched_sets
        .iter()
        .flat_map(|s| s.control_ids.iter().copied())
        .filter(|&j| !c.subjects[j].d)
        .collect();
    let (_, counts) = eligibility(&c, &ncc).unwrap();
    assert_eq!(counts.eligible, c.n_events() + controls.len());
}

#[test]
fn sampling_is_deterministic_per_seed() {
    let c = cohort(1_000, 4);
    let spec = MatchingSpec::caliper("m1", eps());
    let a = sample_ncc(&c, &spec, 1, 1.0, 21).unwrap();
    let b = sample_ncc(&c, &spec, 1, 1.0, 21).unwrap();
    let other = sample_ncc(&c, &spec, 1, 1.0, 22).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.matched_sets, other.matched_sets);
}

#[test]
fn control_selection_frequency_is_m_over_pool_size() {
    let c = cohort(20, 5);
    let spec = MatchingSpec::caliper("m1", 1.0);
    let m = 2;
    let reps = 10_000;
    let first = sample_ncc(&c, &spec, m, 1.0, 0).unwrap();
    let mut hits: Vec<Vec<usize>> = first
        .matched_sets
        .iter()
        .map(|s| vec![0; effective_risk_set(&c, s.case_id, &spec).unwrap().len()])
        .collect();
    let pools: Vec<Vec<usize>> = first
        .matched_sets
        .iter()
        .map(|s| {
            effective_risk_set(&c, s.case_id, &spec)
                .unwrap()
                .into_iter()
                .filter(|&j| j != s.case_id)
                .collect()
        })
        .collect();
    for seed in 0..reps {
        let ncc = sample_ncc(&c, &spec, m, 1.0, seed).unwrap();
        for (k, set) in ncc.matched_sets.iter().enumerate() {
            for ctrl in &set.control_ids {
                let pos = pools[k].iter().position(|j| j == ctrl).unwrap();
                hits[k][pos] += 1;
            }
        }
    }
    let mut tested = 0;
    for (k, pool) in pools.iter().enumerate() {
        if pool.len() <= m {
            continue;
        }
        tested += pool.len();
        let p = m as f64 / pool.len() as f64;
        let se = (p * (1.0 - p) / reps as f64).sqrt();
        for &h in &hits[k][..pool.len()] {
            let freq = h as f64 / reps as f64;
            assert!((freq - p).abs() < 3.0 * se, "set {k}: {freq} vs {p}");
        }
    }
    assert!(tested >= 10, "only {tested} controls checked");
}

#[test]
fn adding_a_case_never_lowers_inclusion_probabilities() {
    let c = cohort(2_000, 6);
    let spec = MatchingSpec::caliper("m1", eps());
    let ncc = sample_ncc(&c, &spec, 1, 1.0, 3).unwrap();
    let km = WeightMethodSpec::km(&["m1"]);
    let full = km_inclusion_probabilities(&c, &ncc, &km).unwrap().probs;
    let mut fewer = ncc.clone();
    for k in (0..fewer.matched_sets.len()).rev().step_by(3) {
        fewer.matched_sets.remove(k);
        fewer.effective_risk_sets.remove(k);
    }
    let reduced = km_inclusion_probabilities(&c, &fewer, &km).unwrap().probs;
    for (a, b) in full.iter().zip(&reduced) {
        assert!(a >= b);
    }
}

#[test]
fn nn_km_weights_sum_to_the_eligible_count() {
    let c = cohort(4_000, 8);
    let ncc = sample_ncc(&c, &MatchingSpec::nearest_neighbor("m1"), 1, 1.0, 8).unwrap();
    let (_, counts) = eligibility(&c, &ncc).unwrap();
    let km = WeightMethodSpec::km(&["m1"]);
    let p = km_inclusion_probabilities(&c, &ncc, &km).unwrap();
    let w = finalize_weights(&p.probs, &ncc, &km).unwrap();
    assert_eq!(w.diagnostics.sum, counts.eligible as f64);
    assert!((counts.eligible as f64) < 0.6 * c.len() as f64);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ht_reduces_to_km_when_every_event_is_a_case(
        seed in 0u64..10_000,
        n in 80usize..400,
        eps in 0.05f64..1.5,
        m in 1usize..4,
        exact in any::<bool>(),
    ) {
        let config = ScenarioConfig { n, alpha_a: 0.5, m2_active: exact, ..ScenarioConfig::default() };
        let c = generate_cohort(&config, seed).unwrap();
        let mut spec = MatchingSpec::caliper("m1", eps);
        let mut factors = vec!["m1"];
        if exact {
            spec = spec.with_exact("m2");
            factors.push("m2");
        }
        let ncc = sample_ncc(&c, &spec, m, 1.0, seed ^ 0x5a5a).unwrap();
        let km = WeightMethodSpec::km(&factors);
        let a = km_inclusion_probabilities(&c, &ncc, &km).unwrap().probs;
        let b = ht_inclusion_probabilities(&c, &ncc, &km).unwrap().probs;
        prop_assert_eq!(a, b);
    }

    #[test]
    fn threshold_changes_only_weights_above_the_cap(seed in 0u64..10_000, cap in 1.0f64..30.0) {
        let c = cohort(600, seed);
        let ncc = sample_ncc(&c, &MatchingSpec::caliper("m1", eps()), 1, 1.0, seed).unwrap();
        let km = WeightMethodSpec::km(&["m1"]);
        let p = km_inclusion_probabilities(&c, &ncc, &km).unwrap();
        let raw = finalize_weights(&p.probs, &ncc, &km).unwrap();
        let capped = finalize_weights(&p.probs, &ncc, &km.clone().with_threshold(cap)).unwrap();
        for (k, (&r, &w)) in raw.weights.iter().zip(&capped.weights).enumerate() {
            if r > cap {
                prop_assert_eq!(w, cap);
                prop_assert!(capped.capped[k]);
            } else {
                prop_assert_eq!(w.to_bits(), r.to_bits());
                prop_assert!(!capped.capped[k]);
            }
        }
    }
}
