use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_eivpred"));
    c.env_remove("EIVPRED_THREADS");
    c
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().expect("spawn eivpred")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

const LINEAR_SPEC: &str = r#"{
    "regression": { "family": "linear-mv", "intercept": [0.5], "z_coef": [[-0.7]], "xi_coef": [[1.3]] },
    "xi_mean": [0.4],
    "xi_cov": 1.0,
    "z_dist": { "kind": "uniform", "mean": [1.0], "half_width": [1.0] },
    "errors": { "sigma_e": 0.3, "sigma_eps": 0.2, "sigma_delta": 0.6, "sigma_eps_delta": 0.1 }
}"#;

#[test]
fn simulate_writes_dataset_and_sidecar_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "sim.json", &format!(r#"{{ "spec": {LINEAR_SPEC}, "n": 150, "seed": 3 }}"#));
    let out = run(&["simulate", "--config", "sim.json", "--out", "a.csv"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("a.csv")).unwrap();
    assert_eq!(csv.lines().count(), 151);
    let sidecar: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("a.json")).unwrap()).unwrap();
    assert_eq!(sidecar["n"], 150);
    assert_eq!(sidecar["schema_version"], 1);

    run(&["simulate", "--config", "sim.json", "--out", "b.csv"], dir.path());
    assert_eq!(csv, std::fs::read_to_string(dir.path().join("b.csv")).unwrap());
    run(&["simulate", "--config", "sim.json", "--out", "c.csv", "--seed", "4"], dir.path());
    assert_ne!(csv, std::fs::read_to_string(dir.path().join("c.csv")).unwrap());
}

#[test]
fn invalid_spec_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let bad = LINEAR_SPEC.replace(r#""xi_cov": 1.0"#, r#""xi_cov": -1.0"#);
    write(dir.path(), "bad.json", &format!(r#"{{ "spec": {bad}, "n": 10 }}"#));
    let out = run(&["simulate", "--config", "bad.json", "--out", "x.csv"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("invalid model specification") && stderr.contains("  - "), "{stderr}");
}

#[test]
fn unknown_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "extra.json", &format!(r#"{{ "spec": {LINEAR_SPEC}, "n": 10, "sed": 1 }}"#));
    let out = run(&["simulate", "--config", "extra.json", "--out", "x.csv"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown field `sed`"));

    let nested = LINEAR_SPEC.replace(r#""sigma_e": 0.3"#, r#""sigma_ee": 0.3"#);
    write(dir.path(), "nested.json", &format!(r#"{{ "spec": {nested} }}"#));
    assert_eq!(run(&["transform", "--config", "nested.json"], dir.path()).status.code(), Some(2));
}

#[test]
fn missing_dataset_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "fp.json", r#"{ "data": "nope.csv", "fit_family": { "family": "linear" }, "points": [] }"#);
    assert_eq!(run(&["fit-predict", "--config", "fp.json"], dir.path()).status.code(), Some(3));
}

fn transform_json(dir: &Path, spec: &str) -> Value {
    write(dir, "t.json", &format!(r#"{{ "spec": {spec} }}"#));
    let out = run(&["transform", "--config", "t.json"], dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn transform_reports_family_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let exact = r#"{
        "regression": { "family": "linear-mv", "intercept": [0.5], "z_coef": [], "xi_coef": [[1.3]] },
        "xi_mean": [0.4], "xi_cov": 1.0, "errors": { "sigma_delta": 0.0 }
    }"#;
    let v = transform_json(dir.path(), exact);
    assert_eq!(v["params"]["x_coef"][0][0].as_f64(), Some(1.3));
    assert_eq!(v["params"]["intercept"][0].as_f64(), Some(0.5));

    let quad = r#"{
        "regression": { "family": "quadratic", "beta0": 0.5, "beta1": 1.0, "beta2": 0.8 },
        "xi_mean": [0.5], "xi_cov": 1.0, "errors": { "sigma_e": 0.5, "sigma_delta": 3.0 }
    }"#;
    let v = transform_json(dir.path(), quad);
    assert_eq!(v["params"]["beta2_x"].as_f64(), Some(0.8 * 0.25 * 0.25));

    let abs = r#"{
        "regression": { "family": "absolute-value", "beta": 1.0, "shift": 1.0 },
        "xi_mean": [0.0], "xi_cov": 1.0, "errors": { "sigma_delta": 1.0 }
    }"#;
    let v = transform_json(dir.path(), abs);
    for key in ["beta_x", "k_x", "b_x"] {
        assert!(v["params"][key].is_f64(), "{key} missing");
    }
}

#[test]
fn fit_predict_matches_golden_report() {
    let dir = fixtures();
    let out = run(&["fit-predict", "--config", "golden_fit_predict.json"], &dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let expected = std::fs::read_to_string(dir.join("expected_fit_predict.json")).unwrap();
    assert_eq!(String::from_utf8(out.stdout).unwrap(), expected);
}

#[test]
fn fit_predict_noiseless_data_and_normality_flag() {
    let dir = tempfile::tempdir().unwrap();
    let exact = r#"{
        "regression": { "family": "linear-mv", "intercept": [0.5], "z_coef": [], "xi_coef": [[1.3]] },
        "xi_mean": [0.4], "xi_cov": 1.0, "errors": { "sigma_delta": 0.0 }
    }"#;
    write(dir.path(), "sim.json", &format!(r#"{{ "spec": {exact}, "n": 50, "out": "d.csv" }}"#));
    assert!(run(&["simulate", "--config", "sim.json"], dir.path()).status.success());
    write(
        dir.path(),
        "fp.json",
        r#"{ "data": "d.csv", "points": [{ "x0": [1.0] }], "alphas": [0.05], "regions": ["chisquare-d"] }"#,
    );
    let out = run(&["fit-predict", "--config", "fp.json"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["fit"]["residual_moment"][0][0].as_f64().unwrap() < 1e-20);
    assert!((v["predictions"][0]["individual"][0].as_f64().unwrap() - 1.8).abs() < 1e-12);
    // The residual moment is rounding noise, so the interval is numerically
    // zero width: half-width = sqrt(threshold) / shape.
    let region = &v["predictions"][0]["regions"][0];
    let half_width = region["threshold"].as_f64().unwrap().sqrt() / region["shape"][0][0].as_f64().unwrap();
    assert!(half_width < 1e-12, "{half_width}");

    // A uniform z is not purely normal, so the chi-square region is flagged.
    write(dir.path(), "sim2.json", &format!(r#"{{ "spec": {LINEAR_SPEC}, "n": 300, "out": "u.csv" }}"#));
    assert!(run(&["simulate", "--config", "sim2.json"], dir.path()).status.success());
    write(
        dir.path(),
        "fp2.json",
        r#"{ "data": "u.csv", "points": [{ "z0": [1.0], "x0": [0.0] }], "alphas": [0.05], "regions": ["chisquare-d"] }"#,
    );
    let out = run(&["fit-predict", "--config", "fp2.json"], dir.path());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let region = &v["predictions"][0]["regions"][0];
    assert_eq!(region["purely_normal_asserted"], false);
    assert!(region["warnings"].to_string().contains("purely-normal assumption not asserted"));
}

fn experiment_config(extra: &str) -> String {
    format!(
        r#"{{
        "experiment": "coverage",
        "spec": {LINEAR_SPEC},
        "n_grid": [500],
        "replications": 50,
        "alphas": [0.05, 0.5]{extra}
    }}"#
    )
}

#[test]
fn experiment_smoke_grid_and_checks() {
    let dir = tempfile::tempdir().unwrap();
    let pass = r#", "checks": [{ "statistic": "coverage", "alpha": 0.05, "region": "chebyshev-e", "min": 0.8 }]"#;
    let fail = r#", "checks": [{ "statistic": "coverage", "alpha": 0.5, "region": "chebyshev-e", "max": 0.01 }]"#;
    write(dir.path(), "pass.json", &experiment_config(pass));
    write(dir.path(), "fail.json", &experiment_config(fail));

    let start = Instant::now();
    let out = run(&["experiment", "--config", "pass.json", "--out", "r", "--check"], dir.path());
    assert!(start.elapsed().as_secs() < 60);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
    assert!(csv.starts_with("n,alpha,region,statistic,value\n"));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(report["schema_version"], 1);

    let out = run(&["experiment", "--config", "fail.json", "--out", "f", "--check"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("FAIL"));

    write(dir.path(), "none.json", &experiment_config(""));
    assert_eq!(run(&["experiment", "--config", "none.json", "--check"], dir.path()).status.code(), Some(2));
}

#[test]
fn experiment_seed_override_and_threads_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "e.json", &experiment_config(""));
    let a = run(&["experiment", "--config", "e.json", "--seed", "9", "--threads", "1"], dir.path());
    let b = bin()
        .args(["experiment", "--config", "e.json", "--seed", "9"])
        .env("EIVPRED_THREADS", "3")
        .current_dir(dir.path())
        .output()
        .unwrap();
    let c = run(&["experiment", "--config", "e.json", "--seed", "10"], dir.path());
    assert!(a.status.success() && b.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, c.stdout);
    let v: Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(v["master_seed"], 9);
}
