use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use ncc_ipw::cohort::{generate_cohort, read_cohort_csv, write_cohort_csv, ScenarioConfig};
use ncc_ipw::harness::{
    estimate, export_results, preset, run_experiment, summarize_bias, Estimand, ExperimentSpec, Format, PRESETS,
};
use ncc_ipw::sampler::{eligibility, read_ncc_csv, sample_ncc, write_ncc_csv, MatchingSpec};
use ncc_ipw::smooth::{default_grid, PenaltyChoice};
use ncc_ipw::weights::{
    finalize_weights, inclusion_probabilities, read_weights_csv, write_weights_csv, WeightMethodSpec,
};

const OUT_DIR_ENV: &str = "NCC_OUT_DIR";
/// Exit status when some replicates or cells failed; usage errors exit with 2.
const INCOMPLETE: u8 = 3;

#[derive(Parser)]
#[command(name = "ncc-ipw", version, about = "Nested case-control sampling and inverse-probability weighting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a replicated bias experiment and export tables and plots.
    Simulate(SimulateArgs),
    /// Simulate one cohort and write it as CSV.
    Generate(GenerateArgs),
    /// Draw an NCC sample from a cohort CSV.
    Sample(SampleArgs),
    /// Compute inclusion probabilities and weights for an NCC sample.
    Weights(WeightsArgs),
    /// Estimate one quantity from a cohort and a weights file.
    Fit(FitArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Named preset.
    #[arg(long, required_unless_present = "config", conflicts_with = "config")]
    preset: Option<String>,
    /// Experiment specification as TOML.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Cohort size.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    replicates: Option<usize>,
    /// Base seed; replicate r uses seed + r.
    #[arg(long)]
    seed: Option<u64>,
    /// Full scale: n = 100,000 and 100 replicates unless given explicitly.
    #[arg(long)]
    full_scale: bool,
    #[arg(long, env = OUT_DIR_ENV, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "csv,json,svg")]
    formats: Vec<String>,
}

#[derive(Args)]
struct GenerateArgs {
    /// Take the scenario from a preset.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Scenario as TOML.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct MatchingArgs {
    /// Caliper on a factor, as `factor=tolerance`. Repeatable.
    #[arg(long, value_name = "FACTOR=EPS")]
    caliper: Vec<String>,
    /// Exact matching on a factor. Repeatable.
    #[arg(long, value_name = "FACTOR")]
    exact: Vec<String>,
    /// Nearest-neighbour matching on a factor.
    #[arg(long, value_name = "FACTOR", conflicts_with_all = ["caliper", "exact"])]
    nn: Option<String>,
    /// Controls per case.
    #[arg(long, default_value_t = 1)]
    m: usize,
    /// Fraction of events used as cases.
    #[arg(long, default_value_t = 1.0)]
    pi1: f64,
}

impl MatchingArgs {
    fn spec(&self) -> Result<MatchingSpec> {
        let mut spec = match &self.nn {
            Some(f) => MatchingSpec::nearest_neighbor(f),
            None => MatchingSpec::unmatched(),
        };
        for c in &self.caliper {
            let (factor, eps) = c
                .split_once('=')
                .ok_or_else(|| anyhow!("--caliper expects FACTOR=EPS, got `{c}`"))?;
            let eps: f64 = eps.parse().with_context(|| format!("bad caliper tolerance in `{c}`"))?;
            let one = MatchingSpec::caliper(factor, eps);
            spec.caliper.extend(one.caliper);
        }
        for f in &self.exact {
            spec = spec.with_exact(f);
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    cohort: PathBuf,
    #[command(flatten)]
    matching: MatchingArgs,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Directory receiving `selection.csv` and `matched_sets.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Km,
    Gam,
}

#[derive(Args)]
struct WeightsArgs {
    #[arg(long)]
    cohort: PathBuf,
    /// `selection.csv` of the sample; `matched_sets.csv` is read from the same directory.
    #[arg(long)]
    ncc: PathBuf,
    #[command(flatten)]
    matching: MatchingArgs,
    #[arg(long, value_enum)]
    weights: Family,
    /// Matching factors the weight model conditions on (default: all).
    #[arg(long, value_delimiter = ',')]
    covariates: Option<Vec<String>>,
    /// Smooths by categorical matching factors (GAM only).
    #[arg(long)]
    interactions: bool,
    /// Cap on individual weights.
    #[arg(long)]
    threshold: Option<f64>,
    /// Fixed GAM penalty instead of GCV.
    #[arg(long)]
    gam_lambda: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    cohort: PathBuf,
    #[arg(long)]
    estimand: Estimand,
    /// Weights CSV as written by `weights`; omit for an unweighted full-cohort fit.
    #[arg(long)]
    weights_file: Option<PathBuf>,
    /// Cox covariates for `log_hr_xb`.
    #[arg(long, value_delimiter = ',', default_value = "xa,xb,m1")]
    cox_covariates: Vec<String>,
    /// Time at which the survival probability is read (default: end of censoring window).
    #[arg(long)]
    u1: Option<f64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Generate(a) => generate(a).map(|()| true),
        Command::Sample(a) => sample(a).map(|()| true),
        Command::Weights(a) => weights(a).map(|()| true),
        Command::Fit(a) => fit(a).map(|()| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(INCOMPLETE),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load_preset(name: &str) -> Result<ExperimentSpec> {
    preset(name).with_context(|| format!("available presets: {}", PRESETS.join(", ")))
}

fn simulate(a: SimulateArgs) -> Result<bool> {
    let mut spec = match (&a.preset, &a.config) {
        (Some(p), _) => load_preset(p)?,
        (None, Some(path)) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            ExperimentSpec::from_toml_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        (None, None) => bail!("either --preset or --config is required"),
    };
    if a.full_scale {
        spec.scenario.n = 100_000;
        spec.replicates = 100;
    }
    if let Some(n) = a.n {
        spec.scenario.n = n;
    }
    if let Some(r) = a.replicates {
        spec.replicates = r;
    }
    if let Some(s) = a.seed {
        spec.base_seed = s;
    }
    let formats = a
        .formats
        .iter()
        .map(|f| f.parse::<Format>())
        .collect::<ncc_ipw::Result<Vec<_>>>()?;
    spec.validate()?;

    let outcome = run_experiment(&spec)?;
    for (r, reason) in &outcome.failed {
        eprintln!("replicate {r} failed: {reason}");
    }
    if outcome.results.is_empty() {
        bail!("no replicate completed");
    }
    let summary = summarize_bias(&outcome.results)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let spec_path = a.out.join("experiment.toml");
    fs::write(&spec_path, spec.to_toml_string()?).with_context(|| format!("writing {}", spec_path.display()))?;
    let written = export_results(&outcome.results, &summary, &a.out, &formats)?;

    println!("{:<22} {:<12} {:>4} {:>10} {:>10} {:>8} {:>8}", "estimand", "method", "n", "mean", "sd", "t", "p");
    for c in &summary.cells {
        println!(
            "{:<22} {:<12} {:>4} {:>10.5} {:>10.5} {:>8.2} {:>8.4}",
            c.estimand.name(),
            c.method,
            c.n,
            c.mean,
            c.sd,
            c.t_stat,
            c.p_value
        );
    }
    for p in written.iter().chain([&spec_path]) {
        println!("wrote {}", p.display());
    }
    let complete = outcome.complete();
    if !complete {
        eprintln!("some replicates or cells did not complete");
    }
    Ok(complete)
}

fn scenario_from(preset_name: Option<&str>, config: Option<&Path>) -> Result<ScenarioConfig> {
    Ok(match (preset_name, config) {
        (Some(p), _) => load_preset(p)?.scenario,
        (None, Some(path)) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            ScenarioConfig::from_toml_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        (None, None) => ScenarioConfig::default(),
    })
}

fn generate(a: GenerateArgs) -> Result<()> {
    let mut scenario = scenario_from(a.preset.as_deref(), a.config.as_deref())?;
    if let Some(n) = a.n {
        scenario.n = n;
    }
    let cohort = generate_cohort(&scenario, a.seed)?;
    write_cohort_csv(&cohort, &a.out)?;
    println!(
        "wrote {} ({} subjects, {} events)",
        a.out.display(),
        cohort.len(),
        cohort.n_events()
    );
    Ok(())
}

fn sample(a: SampleArgs) -> Result<()> {
    let cohort = read_cohort_csv(&a.cohort)?;
    let spec = a.matching.spec()?;
    let ncc = sample_ncc(&cohort, &spec, a.matching.m, a.matching.pi1, a.seed)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_ncc_csv(&ncc, &a.out)?;
    let (_, counts) = eligibility(&cohort, &ncc)?;
    println!(
        "{} cases, {} selected, {} eligible of {}",
        ncc.matched_sets.len(),
        ncc.n_selected(),
        counts.eligible,
        cohort.len()
    );
    Ok(())
}

fn weights(a: WeightsArgs) -> Result<()> {
    let cohort = read_cohort_csv(&a.cohort)?;
    let matching = a.matching.spec()?;
    let dir = a.ncc.parent().unwrap_or(Path::new("."));
    let sets = dir.join("matched_sets.csv");
    let ncc = read_ncc_csv(&cohort, &a.ncc, &sets, &matching, a.matching.m, a.matching.pi1)?;

    let covariates: Vec<String> = a.covariates.unwrap_or_else(|| matching.factors());
    let covs: Vec<&str> = covariates.iter().map(String::as_str).collect();
    let mut method = match a.weights {
        Family::Km => WeightMethodSpec::km(&covs),
        Family::Gam => WeightMethodSpec::gam(&covs),
    }
    .with_pi1(a.matching.pi1);
    if a.interactions {
        method = method.with_interactions();
    }
    if let Some(t) = a.threshold {
        method = method.with_threshold(t);
    }
    let penalty = match a.gam_lambda {
        Some(l) => PenaltyChoice::Fixed(l),
        None => PenaltyChoice::Gcv(default_grid()),
    };
    let probs = inclusion_probabilities(&cohort, &ncc, &method, &penalty)?;
    let wv = finalize_weights(&probs.probs, &ncc, &method)?;
    write_weights_csv(&wv, &a.out)?;
    println!(
        "{}: {} weights, sum {:.3}, range [{:.4}, {:.4}], {} capped, {} floored",
        wv.label,
        wv.ids.len(),
        wv.diagnostics.sum,
        wv.diagnostics.min,
        wv.diagnostics.max,
        wv.diagnostics.n_capped,
        probs.floored
    );
    println!("wrote {}", a.out.display());
    Ok(())
}

fn fit(a: FitArgs) -> Result<()> {
    let cohort = read_cohort_csv(&a.cohort)?;
    let (ids, w): (Vec<usize>, Option<Vec<f64>>) = match &a.weights_file {
        Some(path) => {
            let pairs = read_weights_csv(path)?;
            let (ids, w) = pairs.into_iter().unzip();
            (ids, Some(w))
        }
        None => ((0..cohort.len()).collect(), None),
    };
    let u1 = a
        .u1
        .or_else(|| cohort.config.as_ref().map(|c| c.censor_hi))
        .unwrap_or(ScenarioConfig::default().censor_hi);
    let cox: Vec<&str> = a.cox_covariates.iter().map(String::as_str).collect();
    let value = estimate(&cohort, a.estimand, &ids, w.as_deref(), &cox, u1)?;
    let out = json!({
        "estimand": a.estimand.name(),
        "estimate": value,
        "n_records": ids.len(),
        "weighted": w.is_some(),
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}
