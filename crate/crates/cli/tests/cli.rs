//! End-to-end behaviour of the `hestonopt` binary.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const CANONICAL: &str = r#"{"model": {"mu": 0.2, "k": 1.0, "theta": 0.16, "sigma": 0.4, "rho": 0.5},
    "utility": {"type": "exponential", "c": 2.0}}"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hestonopt"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn setup(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("config.json"), config).unwrap();
    dir
}

fn json(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

fn evaluate_args(point: [&str; 5]) -> Vec<&str> {
    let [w, x, v, t, horizon] = point;
    vec!["evaluate", "--config", "config.json", "--w", w, "--x", x, "--v", v, "--t", t, "--horizon", horizon]
}

#[test]
fn evaluate_reports_the_full_solution() {
    let dir = setup(CANONICAL);
    let out = run(dir.path(), &evaluate_args(["0.3", "1.5", "0.1", "0.2", "1.0"]));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let doc = json(&out.stdout);
    let r = &doc["result"];
    // mpmath reference values for this point
    assert!(rel(r["f"].as_f64().unwrap(), 0.826_786_726_432_427_7) < 1e-13);
    assert!(rel(r["bellman"].as_f64().unwrap(), 0.787_062_912_586_796_7) < 1e-13);
    assert!(rel(r["control"].as_f64().unwrap(), 0.803_534_818_245_884) < 1e-13);
    for key in ["fv_over_f", "myopic_term", "hedging_term", "psi"] {
        assert!(r[key].is_f64(), "{key}");
    }
    for key in ["delta", "big_c", "lambda", "eta", "hedge_drift", "kummer_a", "kummer_b"] {
        assert!(doc["constants"][key].is_f64(), "{key}");
    }
}

#[test]
fn evaluate_at_the_horizon_is_the_terminal_utility() {
    let dir = setup(CANONICAL);
    let out = run(dir.path(), &evaluate_args(["0.7", "1.0", "0.1", "2.0", "2.0"]));
    assert!(out.status.success());
    let r = json(&out.stdout)["result"].clone();
    assert_eq!(r["f"], 1.0);
    assert_eq!(r["hedging_term"], 0.0);
    assert!(r["psi"].is_null());
    let terminal = 1.0 - (-2.0f64 * 0.7).exp() / 2.0;
    assert!(rel(r["bellman"].as_f64().unwrap(), terminal) < 1e-15);
}

#[test]
fn evaluate_is_byte_identical_across_runs() {
    let dir = setup(CANONICAL);
    let args = evaluate_args(["1.0", "1.0", "0.16", "0.0", "1.0"]);
    assert_eq!(run(dir.path(), &args).stdout, run(dir.path(), &args).stdout);
}

#[test]
fn feller_violation_exits_with_validation_code() {
    let dir = setup(&CANONICAL.replace("\"sigma\": 0.4", "\"sigma\": 0.9").replace("\"rho\": 0.5", "\"rho\": 1.5"));
    let out = run(dir.path(), &evaluate_args(["1.0", "1.0", "0.16", "0.0", "1.0"]));
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("Feller condition"), "{err}");
    // every violation is listed, not just the first
    assert!(err.contains("rho"), "{err}");
}

#[test]
fn invalid_point_and_unknown_fields_are_rejected() {
    let dir = setup(CANONICAL);
    let out = run(dir.path(), &evaluate_args(["1.0", "1.0", "-0.1", "0.0", "1.0"]));
    assert_eq!(out.status.code(), Some(2));

    let dir = setup(&CANONICAL.replace("\"rho\"", "\"volvol\": 1, \"rho\""));
    let out = run(dir.path(), &evaluate_args(["1.0", "1.0", "0.1", "0.0", "1.0"]));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("volvol"));
}

#[test]
fn evaluate_to_file_writes_a_manifest() {
    let dir = setup(CANONICAL);
    let mut args = evaluate_args(["1.0", "1.0", "0.16", "0.0", "1.0"]);
    args.extend(["--out", "point.json"]);
    assert!(run(dir.path(), &args).status.success());
    let manifest = json(&std::fs::read(dir.path().join("point.json.manifest.json")).unwrap());
    assert_eq!(manifest["invocation"]["command"], "evaluate");
    assert_eq!(manifest["inputs"][0]["path"], "config.json");
    assert_eq!(manifest["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["resolved_config"]["model"]["theta"], 0.16);
    assert!(manifest["created_utc"].is_string());
}

fn read_surface(path: &Path) -> (String, Vec<Vec<f64>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().to_owned();
    let rows = lines.map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    (header, rows)
}

#[test]
fn surface_rows_match_reference_values() {
    let dir = setup(CANONICAL);
    let out = run(
        dir.path(),
        &["surface", "--config", "config.json", "--out", "s.csv", "--v-min", "0.05", "--v-max", "0.4", "--n-v", "16", "--tau-max", "1", "--n-tau", "16"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = read_surface(&dir.path().join("s.csv"));
    assert_eq!(header, "v,tau,f,fv_over_f,control_myopic,control_hedging,control_total");
    assert_eq!(rows.len(), 16 * 17);
    // mpmath values at grid corners (v_min, τ = 4/16) and (v_max, τ_max)
    for (v, tau, f, ratio) in [
        (0.05, 0.25, 0.910_151_213_501_186_7, 1.897_359_703_920_194_8),
        (0.4, 1.0, 0.931_841_228_039_905_2, 0.185_105_799_730_017_84),
    ] {
        let row = rows.iter().find(|r| rel(r[0], v) < 1e-14 && r[1] == tau).unwrap();
        assert!(rel(row[2], f) < 1e-13 && rel(row[3], ratio) < 1e-12, "{row:?}");
    }
    for row in &rows {
        assert_eq!(row[6], row[4] + row[5]);
        if row[1] == 0.0 {
            assert_eq!((row[2], row[5]), (1.0, 0.0));
        }
    }
    let manifest = json(&std::fs::read(dir.path().join("s.csv.manifest.json")).unwrap());
    assert_eq!(manifest["resolved_config"]["grid"]["n_v"], 16);
    assert_eq!(manifest["resolved_config"]["grid"]["stretching"], "geometric");
}

#[test]
fn zero_correlation_surface_has_no_hedging_demand() {
    let dir = setup(&CANONICAL.replace("\"rho\": 0.5", "\"rho\": 0.0"));
    assert!(run(dir.path(), &["surface", "--config", "config.json", "--out", "s.csv", "--n-v", "32", "--n-tau", "32"]).status.success());
    let (_, rows) = read_surface(&dir.path().join("s.csv"));
    assert!(rows.iter().all(|r| r[5] == 0.0));
}

#[test]
fn invalid_grid_flags_are_rejected() {
    let dir = setup(CANONICAL);
    let out = run(dir.path(), &["surface", "--config", "config.json", "--out", "s.csv", "--n-v", "4", "--v-min", "-1"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("n_v") && err.contains("v_min"), "{err}");
}

#[test]
fn default_pde_verification_passes_with_a_stable_report() {
    let dir = setup(CANONICAL);
    let args = ["verify", "--config", "config.json", "--which", "pde", "--report", "r.json"];
    let out = run(dir.path(), &args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let first = std::fs::read(dir.path().join("r.json")).unwrap();
    let report = json(&first);
    assert_eq!(report["passed"], true);
    let checks = report["checks"].as_array().unwrap();
    assert_eq!(checks.len(), 6);
    for c in checks {
        let keys: Vec<&str> = c.as_object().unwrap().keys().map(|k| k.as_str()).collect();
        assert_eq!(keys, ["name", "observed", "passed", "tolerance"]);
    }
    assert!(run(dir.path(), &args).status.success());
    assert_eq!(std::fs::read(dir.path().join("r.json")).unwrap(), first);
}

#[test]
fn failed_checks_exit_with_one() {
    // A coarse grid cannot reach the 5e-4 oracle tolerance.
    let dir = setup(CANONICAL);
    let out = run(dir.path(), &["verify", "--config", "config.json", "--which", "pde", "--report", "r.json", "--n-v", "64", "--n-tau", "64"]);
    assert_eq!(out.status.code(), Some(1));
    let report = json(&std::fs::read(dir.path().join("r.json")).unwrap());
    assert_eq!(report["passed"], false);
}

#[test]
fn grids_too_small_for_the_convergence_study_are_rejected() {
    let dir = setup(CANONICAL);
    let out = run(dir.path(), &["verify", "--config", "config.json", "--which", "pde", "--report", "r.json", "--n-v", "32"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("at least 64"));
}

#[test]
fn monte_carlo_config_is_validated() {
    let dir = setup(CANONICAL);
    let out = run(dir.path(), &["verify", "--config", "config.json", "--which", "mc", "--report", "r.json", "--seed", "1", "--n-paths", "10"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_paths"));

    let out = run(dir.path(), &["verify", "--config", "config.json", "--which", "mc", "--report", "r.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
}

#[test]
fn monte_carlo_verification_runs_and_reruns() {
    let dir = setup(CANONICAL);
    let out = run(
        dir.path(),
        &["verify", "--config", "config.json", "--which", "mc", "--report", "r.json", "--seed", "3", "--n-paths", "4000"],
    );
    assert!(matches!(out.status.code(), Some(0 | 1)), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&std::fs::read(dir.path().join("r.json")).unwrap());
    let names: Vec<&str> = report["checks"].as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap()).collect();
    assert_eq!(names.len(), 7);
    assert!(names.iter().filter(|n| n.starts_with("mc.bond.")).count() == 3);
    let manifest = json(&std::fs::read(dir.path().join("r.json.manifest.json")).unwrap());
    assert_eq!(manifest["resolved_config"]["mc"]["seed"], 3);
    assert_eq!(manifest["resolved_config"]["mc"]["n_steps"], 256);

    std::fs::create_dir(dir.path().join("again")).unwrap();
    let rerun = run(dir.path(), &["--threads", "2", "rerun", "--manifest", "r.json.manifest.json", "--output-dir", "again"]);
    let summary = json(&rerun.stdout);
    assert_eq!(summary["reproduced"], true);
    assert_eq!(std::fs::read(dir.path().join("again/r.json")).unwrap(), std::fs::read(dir.path().join("r.json")).unwrap());
}

#[test]
fn rerun_detects_a_changed_output() {
    let dir = setup(CANONICAL);
    assert!(run(dir.path(), &["surface", "--config", "config.json", "--out", "s.csv", "--n-v", "16", "--n-tau", "16"]).status.success());
    let path = dir.path().join("s.csv.manifest.json");
    let mut manifest = json(&std::fs::read(&path).unwrap());
    manifest["outputs"][0]["sha256"] = Value::String("0".repeat(64));
    std::fs::write(&path, serde_json::to_string(&manifest).unwrap()).unwrap();
    let out = run(dir.path(), &["rerun", "--manifest", "s.csv.manifest.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(json(&out.stdout)["reproduced"], false);
}
