//! End-to-end command tests, run in-process and through the built binary.

use std::path::{Path, PathBuf};
use std::process::Command as Process;

use clap::Parser;
use serde_json::Value;
use switchtrack::document::BUNDLED_LQ_TWO_MODE;

use super::*;

fn cli(args: &[&str]) -> Cli {
    Cli::try_parse_from(std::iter::once("switchtrack").chain(args.iter().copied())).unwrap()
}

fn run_in(dir: &Path, args: &[&str]) -> CliResult<()> {
    let mut full = vec!["--out-dir", dir.to_str().unwrap()];
    full.extend_from_slice(args);
    run(&cli(&full))
}

fn lq_doc(edit: impl FnOnce(&mut Value)) -> Value {
    let mut v: Value = serde_json::from_str(BUNDLED_LQ_TWO_MODE).unwrap();
    edit(&mut v);
    v
}

fn write_doc(dir: &Path, name: &str, doc: &Value) -> String {
    let path = dir.join(name);
    fs::write(&path, doc.to_string()).unwrap();
    path.to_str().unwrap().to_string()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn first_line(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

fn data_rows(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(String::from)
        .collect()
}

/// The binary sits next to the test executable's `deps/` directory.
fn binary() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    let dir = exe.parent().unwrap().parent().unwrap();
    let bin = dir.join(format!("switchtrack{}", std::env::consts::EXE_SUFFIX));
    assert!(bin.exists(), "binary not built at {}", bin.display());
    bin
}

#[test]
fn train_writes_weights_history_and_report() {
    let dir = tempfile::tempdir().unwrap();
    run_in(dir.path(), &["train", "builtin:lq_two_mode"]).unwrap();
    let l = Loaded::from_source("builtin:lq_two_mode", None).unwrap();
    let header = format!("# {}", l.header());
    for f in ["weight-history.csv", "step-change.csv"] {
        assert_eq!(first_line(&dir.path().join(f)), header, "{}", f);
    }
    let report = read_json(&dir.path().join("train-report.json"));
    assert_eq!(report["nprime"], 400);
    assert_eq!(report["steps"].as_array().unwrap().len(), 400);
    assert_eq!(report["seed"], 7);
    assert_eq!(report["config_hash"], l.hash.as_str());
    assert!(report.get("history").is_none());
    let weights = read_json(&dir.path().join("weights.json"));
    assert_eq!(weights["seed"], 7);
    assert_eq!(weights["config_hash"], l.hash.as_str());
    assert_eq!(weights["Nprime"], 400);
    assert_eq!(data_rows(&dir.path().join("step-change.csv")).len(), 399);
}

#[test]
fn too_few_samples_is_underdetermined() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_doc(dir.path(), "small.json", &lq_doc(|v| v["train"]["eta"] = 5.into()));
    let err = run_in(dir.path(), &["train", &config]).unwrap_err();
    assert_eq!(err.exit_code(), 1);
    assert!(err.to_string().contains("fit underdetermined"), "{}", err);
}

#[test]
fn invalid_document_names_the_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_doc(dir.path(), "bad.json", &lq_doc(|v| v["Rbar"] = serde_json::json!([[-1.0]])));
    let err = run_in(dir.path(), &["train", &config]).unwrap_err();
    assert_eq!(err.exit_code(), 1);
    assert!(err.to_string().contains("Rbar"), "{}", err);
    let err = run_in(dir.path(), &["train", "/no/such/config.json"]).unwrap_err();
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn zero_policy_rollout_from_the_reference() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("traj.csv");
    run_in(
        dir.path(),
        &["rollout", "builtin:lq_two_mode", "--tsw", "0.5", "--x0", "0,0", "--policy", "zero", "-o", out.to_str().unwrap()],
    )
    .unwrap();
    let rows = data_rows(&out);
    assert_eq!(rows.len(), 401);
    let stage: f64 = rows[0].rsplit(',').next().unwrap().parse().unwrap();
    assert_eq!(stage, 0.0);
    let summary = read_json(&dir.path().join("traj.summary.json"));
    assert_eq!(summary["total_cost"], 0.0);
    assert_eq!(summary["rms_error"].as_array().unwrap().len(), 2);
    assert_eq!(summary["policy"], "zero");
    assert_eq!(summary["state_rows"], 401);
}

#[test]
fn trained_rollout_and_all_sweeps() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    run_in(d, &["train", "builtin:lq_two_mode"]).unwrap();
    let w = d.join("weights.json");
    let w = w.to_str().unwrap();

    run_in(d, &["rollout", "builtin:lq_two_mode", "-w", w, "--tsw", "0.5", "--x0", "0.5,-0.5"]).unwrap();
    let trained = read_json(&d.join("trajectory.summary.json"));
    run_in(d, &["rollout", "builtin:lq_two_mode", "--tsw", "0.5", "--x0", "0.5,-0.5", "--policy", "zero", "-o", d.join("zero.csv").to_str().unwrap()]).unwrap();
    let zero = read_json(&d.join("zero.summary.json"));
    assert!(trained["total_cost"].as_f64().unwrap() < zero["total_cost"].as_f64().unwrap());

    run_in(d, &["sweep", "builtin:lq_two_mode", "-w", w, "--method", "3", "--grid", "10"]).unwrap();
    let rows = data_rows(&d.join("value-curve-method3.csv"));
    assert_eq!(rows.len(), 10);
    assert_eq!(rows.iter().filter(|r| r.ends_with(",1")).count(), 1);
    let m3 = read_json(&d.join("sweep-method3.json"));
    let t3 = m3["tsw"][0].as_f64().unwrap();
    assert!((0.4..=0.6).contains(&t3));

    run_in(d, &["sweep", "builtin:lq_two_mode", "-w", w, "--method", "1"]).unwrap();
    let m1 = read_json(&d.join("sweep-method1.json"));
    assert!(m1["evaluations"].as_u64().unwrap() > 0);
    assert!(d.join("value-curve-method1.csv").exists());

    run_in(d, &["sweep", "builtin:lq_two_mode", "-w", w, "--method", "2", "--grid", "10"]).unwrap();
    let m2 = read_json(&d.join("sweep-method2.json"));
    assert!(m2["curl_defect"].as_f64().unwrap().is_finite());
    assert!(m2["caveat"].as_str().unwrap().contains("integration constant"));
    assert!(first_line(&d.join("method2-polynomial.csv")).starts_with("# seed=7 config_hash="));
    assert_eq!(data_rows(&d.join("value-curve-method2.csv")).len(), 10);
}

#[test]
fn incompatible_weights_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    run_in(d, &["train", "builtin:lq_two_mode"]).unwrap();
    let finer = write_doc(d, "finer.json", &lq_doc(|v| v["dthat"] = 0.0025.into()));
    let err = run_in(
        d,
        &["rollout", &finer, "-w", d.join("weights.json").to_str().unwrap(), "--tsw", "0.5"],
    )
    .unwrap_err();
    assert_eq!(err.exit_code(), 1);
    assert!(err.to_string().contains("incompatible weights"), "{}", err);
    assert!(err.to_string().contains("hash"), "{}", err);
}

#[test]
fn method2_needs_one_switch() {
    let dir = tempfile::tempdir().unwrap();
    let three = write_doc(
        dir.path(),
        "three.json",
        &lq_doc(|v| {
            v["sequence"] = serde_json::json!([1, 2, 1]);
            v["omega"]["switch_lo"] = 0.2.into();
            v["omega"]["switch_hi"] = 0.8.into();
        }),
    );
    let err = run_in(dir.path(), &["sweep", &three, "-w", "unused.json", "--method", "2"]).unwrap_err();
    assert!(err.to_string().contains("unsupported"), "{}", err);
}

#[test]
fn oracle_check_outcomes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    run_in(d, &["oracle-check", "builtin:lq_two_mode", "--points", "20"]).unwrap();
    let report = read_json(&d.join("oracle-report.json"));
    assert_eq!(report["pass"], true);
    assert_eq!(report["per_step"].as_array().unwrap().len(), 400);

    let err = run_in(d, &["oracle-check", "builtin:vdp"]).unwrap_err();
    assert!(err.to_string().contains("oracle requires linear modes"), "{}", err);

    let lazy = write_doc(d, "lazy.json", &lq_doc(|v| v["train"]["max_inner"] = 1.into()));
    let err = run_in(d, &["oracle-check", &lazy, "--points", "20"]).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().starts_with("FAIL: worst relative costate error"), "{}", err);

    let zero = write_doc(
        d,
        "zero.json",
        &lq_doc(|v| {
            v["S"] = serde_json::json!([[0.0, 0.0], [0.0, 0.0]]);
            v["Qbar"] = serde_json::json!([[0.0, 0.0], [0.0, 0.0]]);
        }),
    );
    run_in(d, &["oracle-check", &zero, "--points", "10"]).unwrap();
    assert_eq!(read_json(&d.join("oracle-report.json"))["worst_relative_error"], 0.0);
}

#[test]
fn seed_flag_changes_header_and_weights() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    run_in(d, &["--seed", "9", "train", "builtin:lq_two_mode", "-o", d.join("a.json").to_str().unwrap()]).unwrap();
    assert!(first_line(&d.join("weight-history.csv")).starts_with("# seed=9 "));
    assert_eq!(read_json(&d.join("a.json"))["seed"], 9);
}

#[test]
fn binary_version_exit_codes_and_env_out_dir() {
    let out = Process::new(binary()).arg("--version").output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("config schema 1"));

    let dir = tempfile::tempdir().unwrap();
    let bad = write_doc(dir.path(), "bad.json", &lq_doc(|v| v["sequence"] = serde_json::json!([1, 5])));
    let out = Process::new(binary()).args(["train", &bad]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sequence entry 5"));

    let out = Process::new(binary())
        .args(["rollout", "builtin:lq_two_mode", "--tsw", "0.5", "--policy", "zero"])
        .env(OUT_DIR_ENV, dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("trajectory.csv").exists());
    assert!(dir.path().join("trajectory.summary.json").exists());
}
