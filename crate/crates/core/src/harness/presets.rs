use super::{Estimand, ExperimentSpec, WeightVariant};
use crate::cohort::ScenarioConfig;
use crate::error::{Error, Result};
use crate::sampler::MatchingSpec;
use crate::weights::WeightMethodSpec;

pub const PRESETS: [&str; 6] = ["fig3_nn", "fig3_caliper", "fig4_interactions", "fig5_W", "fig5_V", "fig5_Z"];

const DESK_N: usize = 10_000;
const DESK_REPLICATES: usize = 50;
const BASE_SEED: u64 = 1000;

fn caliper_m1() -> MatchingSpec {
    MatchingSpec::caliper("m1", 3f64.sqrt() / 5.0)
}

fn base_scenario(rho: f64, alpha_m1: f64) -> ScenarioConfig {
    ScenarioConfig {
        n: DESK_N,
        rho_mxa: rho,
        gamma_mxb: 0.0,
        alpha_a: 2f64.ln(),
        alpha_b: 2f64.ln(),
        alpha_m1,
        ..ScenarioConfig::default()
    }
}

fn spec(name: &str, scenario: ScenarioConfig, matching: MatchingSpec, variants: Vec<WeightMethodSpec>) -> ExperimentSpec {
    ExperimentSpec {
        name: name.to_string(),
        scenario,
        matching,
        m: 1,
        pi1: 1.0,
        weight_variants: variants.into_iter().map(WeightVariant::new).collect(),
        estimands: Estimand::ALL.to_vec(),
        replicates: DESK_REPLICATES,
        base_seed: BASE_SEED,
        gam_lambda: None,
        clogit: true,
    }
}

/// Named scenario at desk scale (n = 10,000, 50 replicates).
pub fn preset(name: &str) -> Result<ExperimentSpec> {
    let ln2 = 2f64.ln();
    let m1_variants = || vec![WeightMethodSpec::km(&["m1"]), WeightMethodSpec::gam(&["m1"])];
    let ignore_variants = || {
        vec![
            WeightMethodSpec::km(&["m1"]),
            WeightMethodSpec::gam(&["m1"]),
            WeightMethodSpec::km(&[]),
            WeightMethodSpec::gam(&[]),
        ]
    };
    Ok(match name {
        "fig3_nn" => spec(name, base_scenario(0.2, ln2), MatchingSpec::nearest_neighbor("m1"), m1_variants()),
        "fig3_caliper" => spec(name, base_scenario(0.2, ln2), caliper_m1(), m1_variants()),
        "fig4_interactions" => spec(
            name,
            ScenarioConfig {
                alpha_m1m2: ln2,
                m2_active: true,
                ..base_scenario(0.2, 0.0)
            },
            caliper_m1().with_exact("m2"),
            vec![
                WeightMethodSpec::km(&["m1", "m2"]),
                WeightMethodSpec::gam(&["m1", "m2"]),
                WeightMethodSpec::gam(&["m1", "m2"]).with_interactions(),
            ],
        ),
        "fig5_W" => spec(name, base_scenario(0.2, ln2), caliper_m1(), ignore_variants()),
        "fig5_V" => spec(name, base_scenario(0.0, ln2), caliper_m1(), ignore_variants()),
        "fig5_Z" => spec(name, base_scenario(0.0, 0.0), caliper_m1(), ignore_variants()),
        other => {
            return Err(Error::Config(format!(
                "unknown preset `{other}`; expected one of {}",
                PRESETS.join(", ")
            )))
        }
    })
}
