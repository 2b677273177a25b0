use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ncc-ipw"))
        .args(args)
        .current_dir(cwd)
        .env_remove("NCC_OUT_DIR")
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn pipeline_from_cohort_to_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&run(&["generate", "--preset", "fig3_caliper", "--n", "1500", "--seed", "3", "--out", "cohort.csv"], d));
    assert!(d.join("cohort.csv").exists());

    ok(&run(&["sample", "--cohort", "cohort.csv", "--caliper", "m1=0.3464", "--seed", "4", "--out", "ncc"], d));
    assert!(d.join("ncc/selection.csv").exists());
    assert!(d.join("ncc/matched_sets.csv").exists());

    let matching = ["--caliper", "m1=0.3464"];
    let mut km = vec!["weights", "--cohort", "cohort.csv", "--ncc", "ncc/selection.csv", "--weights", "km", "--out", "km.csv"];
    km.extend(matching);
    ok(&run(&km, d));
    let mut gam = vec!["weights", "--cohort", "cohort.csv", "--ncc", "ncc/selection.csv", "--weights", "gam", "--gam-lambda", "1", "--out", "gam.csv"];
    gam.extend(matching);
    ok(&run(&gam, d));

    for file in ["km.csv", "gam.csv"] {
        let stdout = ok(&run(&["fit", "--cohort", "cohort.csv", "--estimand", "log_hr_xb", "--weights-file", file], d));
        let v: serde_json::Value = serde_json::from_str(&stdout).unwrap();
        assert_eq!(v["estimand"], "log_hr_xb");
        assert!(v["estimate"].as_f64().unwrap().is_finite());
        assert_eq!(v["weighted"], true);
    }
    let full = ok(&run(&["fit", "--cohort", "cohort.csv", "--estimand", "cond_surv_xa0_at_u1"], d));
    let v: serde_json::Value = serde_json::from_str(&full).unwrap();
    assert_eq!(v["n_records"], 1500);
}

#[test]
fn simulate_writes_requested_formats_to_the_env_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_ncc-ipw"))
        .args(["simulate", "--preset", "fig3_caliper", "--n", "1200", "--replicates", "2", "--formats", "csv"])
        .current_dir(dir.path())
        .env("NCC_OUT_DIR", "results")
        .output()
        .unwrap();
    let stdout = ok(&out);
    assert!(stdout.contains("km"));
    let res = dir.path().join("results");
    assert!(res.join("replicates.csv").exists());
    assert!(res.join("summary.csv").exists());
    assert!(res.join("experiment.toml").exists());
    assert!(!res.join("summary.json").exists());
}

#[test]
fn bad_arguments_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = run(&["simulate", "--preset", "no_such_preset", "--n", "100"], dir.path());
    assert!(!unknown.status.success());
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("error"));

    let missing = run(&["fit", "--cohort", "absent.csv", "--estimand", "log_hr_xb"], dir.path());
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("absent.csv"));
}
