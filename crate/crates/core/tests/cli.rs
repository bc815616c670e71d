//! End-to-end tests of the `ellrs` binary: exit codes, output shapes and round trips.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ellrs::cli::{read_trajectory_csv, CSV_HEADER};
use ellrs::{ModelParams, TorusParams, C64};

const FIXTURE: &str = r#"{
    "tau": [0.0, 1.0], "eta": [0.23, 0.0],
    "lambda0": [[0.11, 0.0], [0.43, 0.0], [-0.37, 0.0]],
    "mu0": [[0.06, 0.0], [0.38, 0.0], [-0.42, 0.0]],
    "c": [0.1, 0.0], "steps": 10
}"#;

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn ellrs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ellrs")).args(args).output().unwrap()
}

fn run(cmd: &str, config: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--config", config.to_str().unwrap()];
    args.extend_from_slice(extra);
    ellrs(&args)
}

fn fixture_params() -> ModelParams {
    ModelParams::new(3, C64::new(0.23, 0.0), TorusParams::new(C64::new(0.0, 1.0)).unwrap()).unwrap()
}

#[test]
fn verify_default_passes() {
    let out = ellrs(&["verify"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let reports: Vec<serde_json::Value> = serde_json::from_slice(&out.stdout).unwrap();
    assert!(reports.len() >= 10);
    assert!(reports.iter().all(|r| r["passed"] == true));
}

#[test]
fn verify_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.json", r#"{"tau": [0.3, -1.0]}"#);
    let out = run("verify", &bad, &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("tau"));
    let small = write(dir.path(), "small.json", r#"{"suite": {"draws": 5}}"#);
    assert_eq!(run("verify", &small, &["--tol", "1e-15"]).status.code(), Some(1));
    let csv = run("verify", &small, &["--format", "csv"]);
    assert_eq!(csv.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&csv.stdout).starts_with("identity_name,draws,max_residual,tol,passed"));
    let malformed = write(dir.path(), "malformed.json", "{\"tau\": [0.0, 1.0],\n \"eta\": 3}");
    let out = run("verify", &malformed, &[]);
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr).to_string();
    assert!(msg.contains("eta") && msg.contains("line 2"), "{msg}");
}

#[test]
fn backlund_fixture_and_failures() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "fixture.json", FIXTURE);
    let out = run("backlund", &cfg, &[]);
    assert_eq!(out.status.code(), Some(0));
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    for key in ["lax", "eigen", "kernel", "ks"] {
        assert!(doc["residuals"][key].as_f64().unwrap() < 1e-8, "{key}");
    }
    for key in ["mu", "t_tilde", "C"] {
        assert_eq!(doc[key].as_array().unwrap().len(), 3);
    }

    let unsolvable = write(
        dir.path(),
        "unsolvable.json",
        r#"{ "tau": [0.0, 1.0], "eta": [0.23, 0.0],
             "lambda0": [[0.11, 0.0], [0.43, 0.0], [-0.37, 0.0]],
             "t0": [[1e300, 0.0], [1e-300, 0.0], [1.0, 0.0]], "c": [0.1, 0.0],
             "solver": {"max_iter": 5} }"#,
    );
    assert_eq!(run("backlund", &unsolvable, &[]).status.code(), Some(3));

    let single = write(
        dir.path(),
        "single.json",
        r#"{ "tau": [0.0, 1.0], "eta": [0.23, 0.0], "lambda0": [[0.11, 0.0]],
             "t0": [[1.3, 0.2]], "c": [0.1, 0.0] }"#,
    );
    let out = run("backlund", &single, &[]);
    assert_eq!(out.status.code(), Some(0));
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["mu"].as_array().unwrap().len(), 1);
}

#[test]
fn evolve_outputs_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "fixture.json", FIXTURE);
    let out_path = dir.path().join("traj.csv");
    let out = run("evolve", &cfg, &["--out", out_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&out_path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), CSV_HEADER.join(","));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 10 * 3 + 3);
    for row in &rows {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), 9);
        // 17 significant digits
        assert_eq!(fields[2].split('e').next().unwrap().trim_start_matches('-').len(), 18);
        assert!(fields[8].parse::<f64>().unwrap() < 1e-8);
    }
    let stored = read_trajectory_csv(&text, fixture_params()).unwrap();
    let recomputed = stored.trajectory.residuals().unwrap();
    for (a, b) in recomputed.iter().flatten().zip(stored.residuals.iter().flatten()) {
        assert!((a - b).abs() < 1e-12);
    }

    let out = run("evolve", &cfg, &["--steps", "0"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 1 + 3);

    let json = run("evolve", &cfg, &["--steps", "2", "--format", "json"]);
    let doc: serde_json::Value = serde_json::from_slice(&json.stdout).unwrap();
    assert_eq!(doc["points"].as_array().unwrap().len(), 3);
}

#[test]
fn evolve_aborts_with_trailer() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "abort.json",
        r#"{ "tau": [0.0, 1.0], "eta": [0.23, 0.0],
             "lambda0": [[0.11, 0.0], [0.43, 0.0], [-0.37, 0.0]],
             "mu0": [[0.06, 0.0], [0.38, 0.0], [-0.42, 0.0]],
             "c": [[0.1, 0.0], [0.1, 0.0], [0.1, 0.0], [700.0, 0.0]],
             "steps": 6, "solver": {"max_iter": 8} }"#,
    );
    let out = run("evolve", &cfg, &[]);
    assert_eq!(out.status.code(), Some(3));
    let text = String::from_utf8(out.stdout).unwrap();
    let last = text.lines().last().unwrap();
    assert!(last.starts_with("# aborted at step a=4"), "{last}");
    // states 0..=3 were computed
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 1 + 4 * 3);
    let stored = read_trajectory_csv(&text, fixture_params()).unwrap();
    assert_eq!(stored.trajectory.points().len(), 4);
    assert!(stored.trailer.is_some());
}

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_eq!(ellrs(&["verify", "--bogus"]).status.code(), Some(2));
    assert_eq!(ellrs(&["--help"]).status.code(), Some(0));
}
