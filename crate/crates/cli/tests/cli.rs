use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hilbert-mfg"))
}

fn run(args: &[&str]) -> (i32, String) {
    let out = bin().args(args).output().unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn toy(dir: &Path) -> PathBuf {
    let (code, err) = run(&["toy", "--out", dir.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    dir.join("model.json")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn header_lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().take(2).map(String::from).collect()
}

#[test]
fn toy_preset_is_certified() {
    let dir = tempfile::tempdir().unwrap();
    let model = toy(dir.path());
    let out = dir.path().join("cert");
    let (code, err) = run(&["certify", "--model", model.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let cert = json(&out.join("certificate.json"));
    assert_eq!(cert["certificate"]["satisfied"], Value::Bool(true));
    assert!(cert["certificate"]["toy_lhs"].as_f64().unwrap() < 1.0);
}

#[test]
fn solve_reaches_tolerance_and_pins_headers() {
    let dir = tempfile::tempdir().unwrap();
    let model = toy(dir.path());
    let out = dir.path().join("solve");
    let (code, err) =
        run(&["solve", "--model", model.to_str().unwrap(), "--out", out.to_str().unwrap(), "--tol", "1e-8"]);
    assert_eq!(code, 0, "{err}");
    let summary = json(&out.join("summary.json"));
    assert!(summary["residual"].as_f64().unwrap() <= 1e-8);
    assert_eq!(summary["certificate"]["satisfied"], Value::Bool(true));
    assert_eq!(header_lines(&out.join("riccati_norms.csv")), ["# hilbert-mfg riccati_norms v1", "k,t,pi_norm,pi_trace"]);
    assert_eq!(header_lines(&out.join("offset.csv")), ["# hilbert-mfg offset v1", "k,t,q0,q1,q2,q3"]);
    assert_eq!(header_lines(&out.join("mean_field.csv")), ["# hilbert-mfg mean_field v1", "k,t,x0,x1,x2,x3"]);
    let rows = fs::read_to_string(out.join("mean_field.csv")).unwrap().lines().count();
    assert_eq!(rows, 2 + 51);
}

#[test]
fn simulate_and_study_headers() {
    let dir = tempfile::tempdir().unwrap();
    let model = toy(dir.path());
    let m = model.to_str().unwrap();
    let out = dir.path().join("sim");
    let o = out.to_str().unwrap();
    assert_eq!(run(&["simulate", "--model", m, "--out", o, "--agents", "3", "--seed", "7"]).0, 0);
    assert_eq!(
        header_lines(&out.join("trajectory.csv")),
        ["# hilbert-mfg trajectory v1", "k,t,agent,x0,x1,x2,x3,u0,u1,u2,u3"]
    );
    assert_eq!(
        header_lines(&out.join("average.csv")),
        ["# hilbert-mfg average v1", "k,t,avg0,avg1,avg2,avg3,xbar0,xbar1,xbar2,xbar3"]
    );
    let cost = json(&out.join("cost.json"));
    assert_eq!(cost["agents"].as_array().unwrap().len(), 3);

    let study = ["--model", m, "--out", o, "--paths", "8", "--ladder", "2,4,8"];
    assert_eq!(run(&[&["convergence"], &study[..]].concat()).0, 0);
    assert_eq!(header_lines(&out.join("convergence_per_n.csv")), ["# hilbert-mfg convergence_per_n v1", "n,mse,mse_se"]);
    assert_eq!(run(&[&["epsnash"], &study[..]].concat()).0, 0);
    assert_eq!(
        header_lines(&out.join("epsnash_per_n.csv")),
        [
            "# hilbert-mfg epsnash_per_n v1",
            "n,mse,mse_se,gap,gap_se,zero_gap,zero_se,scaled_0.5_gap,scaled_0.5_se,realized_mean_gap,realized_mean_se"
        ]
    );
    let report = json(&out.join("epsnash.json"));
    assert_eq!(report["ladder"], serde_json::json!([2, 4, 8]));
}

/// Heavy costs break the sufficient condition, yet Picard iteration still
/// converges.
#[test]
fn failing_certificate_does_not_block_solve() {
    let dir = tempfile::tempdir().unwrap();
    let model = toy(dir.path());
    let mut doc = json(&model);
    let heavy = serde_json::json!([[2.0, 0.0, 0.0, 0.0], [0.0, 2.0, 0.0, 0.0], [0.0, 0.0, 2.0, 0.0], [0.0, 0.0, 0.0, 2.0]]);
    doc["cost"]["M"] = heavy.clone();
    doc["cost"]["G"] = heavy;
    let path = dir.path().join("heavy.json");
    fs::write(&path, serde_json::to_string(&doc).unwrap()).unwrap();
    let out = dir.path().join("heavy");
    let (code, err) = run(&["solve", "--model", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let summary = json(&out.join("summary.json"));
    assert_eq!(summary["certificate"]["satisfied"], Value::Bool(false));
    assert!(summary["residual"].as_f64().unwrap() <= 1e-8);
}

#[test]
fn outputs_are_byte_identical_across_runs_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    let model = toy(dir.path());
    let m = model.to_str().unwrap();
    let run_in = |name: &str, threads: &str| {
        let out = dir.path().join(name);
        let o = out.to_str().unwrap();
        let study = ["epsnash", "--model", m, "--out", o, "--paths", "16", "--ladder", "2,4,8", "--threads", threads];
        assert_eq!(run(&study).0, 0);
        assert_eq!(run(&["solve", "--model", m, "--out", o, "--threads", threads]).0, 0);
        (fs::read(out.join("epsnash.json")).unwrap(), fs::read(out.join("summary.json")).unwrap())
    };
    let a = run_in("a", "1");
    assert_eq!(a, run_in("b", "1"));
    assert_eq!(a, run_in("c", "4"));
    let out = bin()
        .args(["solve", "--model", m, "--out", dir.path().join("d").to_str().unwrap()])
        .env("HILBERT_MFG_THREADS", "3")
        .status()
        .unwrap();
    assert!(out.success());
    assert_eq!(fs::read(dir.path().join("d/summary.json")).unwrap(), a.1);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let model = toy(dir.path());
    let mut doc = json(&model);
    doc["cost"]["M"][0][1] = serde_json::json!(1.0);
    let bad = dir.path().join("bad.json");
    fs::write(&bad, serde_json::to_string(&doc).unwrap()).unwrap();
    let out = dir.path().join("out");
    let o = out.to_str().unwrap();
    let (code, err) = run(&["solve", "--model", bad.to_str().unwrap(), "--out", o]);
    assert_eq!(code, 3);
    assert!(err.contains("M symmetric PSD"), "{err}");

    fs::write(&bad, "{ \"truncation\": ").unwrap();
    assert_eq!(run(&["certify", "--model", bad.to_str().unwrap(), "--out", o]).0, 3);

    let (code, err) = run(&["solve", "--model", model.to_str().unwrap(), "--out", o, "--max-iter", "1", "--tol", "1e-14"]);
    assert_eq!(code, 2, "{err}");

    assert_eq!(run(&["solve", "--model", "/nonexistent.json", "--out", o]).0, 1);
}

#[test]
fn power_law_tail_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let model = toy(dir.path());
    let mut doc = json(&model);
    doc["noise"].as_object_mut().unwrap().remove("eigenvalues");
    doc["noise"]["spectrum"] = serde_json::json!({"scale": 1.0, "exponent": 2.0});
    let path = dir.path().join("tail.json");
    fs::write(&path, serde_json::to_string(&doc).unwrap()).unwrap();
    let (code, err) = run(&["certify", "--model", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    assert!(err.contains("discards covariance trace mass 6.449"), "{err}");
}
