use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn models() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../models")
}

fn model(name: &str) -> String {
    models().join(name).display().to_string()
}

fn imqft(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_imqft"))
        .args(args)
        .env("SOURCE_DATE_EPOCH", "1700000000")
        .env_remove("IMQFT_THREADS")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&imqft(&["--help"])), 0);
    assert_eq!(code(&imqft(&["--version"])), 0);
    assert_eq!(code(&imqft(&["decay", "--help"])), 0);
}

#[test]
fn usage_errors_exit_three() {
    assert_eq!(code(&imqft(&[])), 3);
    assert_eq!(code(&imqft(&["frobnicate"])), 3);
    assert_eq!(code(&imqft(&["decay", &model("decay.json"), "--m", "three", "--mu", "1"])), 3);
    assert_eq!(code(&imqft(&["validate", "/nonexistent/model.json"])), 3);
    assert_eq!(code(&imqft(&["simulate", &model("headline.json"), "--orders", "2,x"])), 3);
    assert_eq!(code(&imqft(&["hssc", &model("headline.json"), "--n", "3", "--m", "2"])), 3);
}

#[test]
fn invalid_models_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("syntax.json", "{ not json"),
        ("mass.json", r#"{"d": 2, "N": 1, "masses": [{"m": -1.0}], "levy": {"z": 1.0, "atoms": [{"w": 1.0, "s": [1.0]}]}}"#),
        ("dims.json", r#"{"d": 2, "N": 1, "masses": [{"m": 1.0}], "levy": {"z": 1.0, "atoms": [{"w": 1.0, "s": [1.0, 2.0]}]}}"#),
    ];
    for (name, text) in cases {
        let path = dir.path().join(name);
        std::fs::write(&path, text).unwrap();
        let out = imqft(&["validate", path.to_str().unwrap()]);
        assert_eq!(code(&out), 1, "{name}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn numeric_failures_exit_two() {
    let out = imqft(&["schwinger", &model("headline.json"), "--points", "0,0;0,0", "--stdout"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("coincident"));
}

#[test]
fn infeasible_decay_is_reported_not_failed() {
    let out = imqft(&["decay", &model("decay.json"), "--m", "1", "--mu", "1", "--stdout"]);
    assert_eq!(code(&out), 0);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["feasible"], Value::Bool(false));
    assert!(report["amplitude"].is_null());

    let out = imqft(&["decay", &model("decay.json"), "--m", "3", "--mu", "1", "--stdout"]);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["feasible"], Value::Bool(true));
    assert_eq!(report["nonzero"], Value::Bool(true));
}

#[test]
fn files_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = imqft(&["cumulants", &model("headline.json"), "--max-order", "3", "--seed", "5", "--threads", "2", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("cumulants.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "order,indices,lower,raised");
    assert_eq!(csv.lines().count(), 4);
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("cumulants.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "cumulants");
    // deterministic commands record no seed
    assert!(manifest["seed"].is_null());
    assert_eq!(manifest["timestamp"], 1700000000u64);
    assert_eq!(manifest["outputs"], serde_json::json!(["cumulants.csv"]));
    assert!(manifest.get("threads").is_none());
    assert!(manifest["parameters"].get("threads").is_none());
}

#[test]
fn stdout_mode_writes_no_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_imqft"))
        .args(["validate", &model("headline.json"), "--stdout"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v.is_object());
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn simulate_columns_and_z_scores() {
    let out = imqft(&["simulate", &model("headline.json"), "--lattice", "16", "--samples", "4000", "--orders", "2", "--stdout"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "order,probe,sites,mc_mean,mc_stderr,analytic_value,z_score");
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 6);
    for r in rows {
        let z: f64 = r[6].parse().unwrap();
        assert!(z.abs() < 5.0, "{r:?}");
    }
}

#[test]
fn wightman_reports_shell_checks() {
    let dir = tempfile::tempdir().unwrap();
    let out = imqft(&["wightman", &model("headline.json"), "--order", "3", "--samples", "200", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let list: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("wightman.json")).unwrap()).unwrap();
    assert_eq!(list["terms"].as_array().unwrap().len(), 3);
    assert_eq!(list["spectral_scan"]["violations"], 0);
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("wightman.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 0);
    let fl = std::fs::read_to_string(dir.path().join("wightman_fourier_laplace.csv")).unwrap();
    assert_eq!(fl.lines().count(), 11);
}

#[test]
fn scatter_process_file() {
    let out = imqft(&["scatter", &model("decay.json"), &model("process.json"), "--stdout"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["conserved"], Value::Bool(true));
}
