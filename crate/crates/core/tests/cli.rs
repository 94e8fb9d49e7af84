use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn npksd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_npksd")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, json: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, json).unwrap();
    path.to_str().unwrap().to_owned()
}

const RUN: &str = r#"{
  "method": "npksd",
  "model": {"kind": "gvd", "dim": 3},
  "test": {"n": 60, "N": 300, "B": 6, "b": 40, "seed": 4}
}"#;

const SWEEP: &str = r#"{
  "id": "gvd-small",
  "model": {"kind": "gvd", "dim": 3},
  "methods": ["npksd", "npksd_mean", "ksd", "mmdagg"],
  "test": {"n": 40, "N": 200, "B": 6, "b": 30, "seed": 9},
  "aggregate": {"quantile_permutations": 60, "level_permutations": 60},
  "sweep": {"axis": "perturbation", "values": [0.0, 0.2, 0.4]},
  "trials": 3
}"#;

#[test]
fn test_subcommand_prints_report_and_writes_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.json", RUN);
    let out = dir.path().join("out");
    let res = npksd(&["test", "--config", &cfg, "--out", out.to_str().unwrap(), "--threads", "2"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let printed: Value = serde_json::from_slice(&res.stdout).unwrap();
    let saved: Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(printed, saved);
    assert_eq!(printed["variant"], "npksd");
    assert_eq!(printed["null_draws"].as_array().unwrap().len(), 40);
    assert!(printed["reject"].is_boolean());
}

#[test]
fn seed_flag_overrides_config_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.json", RUN);
    let out = dir.path().to_str().unwrap();
    let res = npksd(&["test", "--config", &cfg, "--out", out, "--seed", "77"]);
    assert!(res.status.success());
    let report: Value = serde_json::from_slice(&res.stdout).unwrap();
    assert_eq!(report["seed"], 77);
}

#[test]
fn npksd_g_method_selects_gaussian_fit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.json", &RUN.replace("\"npksd\"", "\"npksd_g\""));
    let res = npksd(&["test", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let report: Value = serde_json::from_slice(&res.stdout).unwrap();
    assert_eq!(report["config"]["fit"], "gaussian_conditional");
}

#[test]
fn missing_config_fails_and_names_the_path() {
    let res = npksd(&["test", "--config", "/nonexistent/where.json"]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("/nonexistent/where.json"));
}

#[test]
fn unknown_method_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.json", &RUN.replace("\"npksd\"", "\"bogus\""));
    let res = npksd(&["test", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert!(!res.status.success());
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("bogus") && err.contains("line"), "{err}");
}

#[test]
fn sweep_writes_sorted_csv_and_replayable_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "sweep.json", SWEEP);
    let out = dir.path().join("a");
    let res = npksd(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let csv = fs::read_to_string(out.join("gvd-small.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "axis,method,rate_mean,rate_sd,trials,rounds");
    assert_eq!(lines.len(), 13);
    let keys: Vec<(String, f64)> = lines[1..]
        .iter()
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let rate: f64 = f[2].parse().unwrap();
            let sd: f64 = f[3].parse().unwrap();
            assert!((0.0..=1.0).contains(&rate) && sd >= 0.0);
            (f[1].to_owned(), f[0].parse().unwrap())
        })
        .collect();
    let mut sorted = keys.clone();
    sorted.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    assert_eq!(keys, sorted);

    // re-running from the manifest reproduces the table byte for byte
    let manifest = out.join("gvd-small.manifest.json");
    let replay = dir.path().join("b");
    let res = npksd(&["sweep", "--config", manifest.to_str().unwrap(), "--out", replay.to_str().unwrap(), "--threads", "1"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(csv, fs::read_to_string(replay.join("gvd-small.csv")).unwrap());
}

#[test]
fn fit_score_dumps_coefficients() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "fit.json",
        r#"{"model": {"kind": "gvd", "dim": 2}, "N": 5000, "seed": 3, "basis": {"degree": 1}}"#,
    );
    let res = npksd(&["fit-score", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let model: Value = serde_json::from_slice(&res.stdout).unwrap();
    let coefs = model["coefficients"].as_array().unwrap();
    assert_eq!(coefs.len(), 2);
    let slope = coefs[0][1].as_f64().unwrap();
    assert!((slope + 1.0).abs() < 0.1, "slope {slope}");
    assert!(dir.path().join("score_model.json").exists());
}

#[test]
fn probe_convergence_writes_grid_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "probe.json",
        r#"{"model": {"kind": "mog", "dim": 3}, "probe": {"n": 30, "N": [200, 400], "B": [3, 12], "repetitions": 3, "seed": 2}}"#,
    );
    let res = npksd(&["probe-convergence", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let csv = fs::read_to_string(dir.path().join("probe.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "generator_size,resample_size,mean_gap,sd_gap,repetitions");
    assert_eq!(lines.len(), 5);
}
