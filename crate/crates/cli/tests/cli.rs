use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn sgshift(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgshift"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn error_json(out: &Output) -> Value {
    serde_json::from_slice(out.stderr.trim_ascii()).expect("stderr is one JSON object")
}

fn simulate(dir: &Path, extra: &[&str]) {
    let mut args = vec!["simulate", "--out", p(dir), "--n-source", "400", "--n-target", "400", "--p", "8"];
    if !extra.contains(&"--a") {
        args.extend(["--a", "2"]);
    }
    args.extend_from_slice(extra);
    let out = sgshift(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn simulate_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    simulate(&a, &["--seed", "11"]);
    simulate(&b, &["--seed", "11"]);
    for f in ["source.csv", "target.csv", "data.csv", "offsets.txt", "truth.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let c = tmp.path().join("c");
    simulate(&c, &["--seed", "12"]);
    assert_ne!(fs::read(a.join("data.csv")).unwrap(), fs::read(c.join("data.csv")).unwrap());
}

#[test]
fn zero_shift_has_empty_truth() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path(), &["--a", "0"]);
    let truth: Value = serde_json::from_slice(&fs::read(tmp.path().join("truth.json")).unwrap()).unwrap();
    assert_eq!(truth["shifted_indices"], serde_json::json!([]));
}

#[test]
fn fit_writes_path_and_scores() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path(), &[]);
    let out_dir = tmp.path().join("fit");
    let data = tmp.path().join("data.csv");
    let offsets = tmp.path().join("offsets.txt");
    let out = sgshift(&["fit", "--data", p(&data), "--offsets", p(&offsets), "--lambda-points", "20", "--out", p(&out_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let scores: Value = serde_json::from_slice(&fs::read(out_dir.join("scores.json")).unwrap()).unwrap();
    assert_eq!(scores["features"].as_array().unwrap().len(), 8);
    let path = fs::read_to_string(out_dir.join("path.csv")).unwrap();
    assert!(path.starts_with("lambda,basis_index,feature_name,delta,omega\n"));
    assert_eq!(path.lines().count(), 1 + 20 * 8);
}

#[test]
fn invalid_family_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = sgshift(&["fit", "--family", "poisson", "--data", "missing.csv", "--out", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
    let err = error_json(&out);
    assert_eq!(err["error"], "InvalidConfig");
    assert_eq!(err["exit_code"], 1);
    assert!(fs::read_dir(tmp.path()).unwrap().next().is_none(), "nothing written");
}

#[test]
fn unknown_flag_is_a_config_error() {
    let out = sgshift(&["fit", "--colour", "red"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_json(&out)["class"], "config");
}

#[test]
fn missing_source_without_offsets_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path(), &[]);
    let text = fs::read_to_string(tmp.path().join("data.csv")).unwrap();
    let target_only: String = text.lines().filter(|l| !l.ends_with(",S")).map(|l| format!("{l}\n")).collect();
    let data = tmp.path().join("target_only.csv");
    fs::write(&data, target_only).unwrap();
    let out = sgshift(&["fit", "--data", p(&data), "--out", p(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = error_json(&out);
    assert_eq!(err["error"], "EmptyDomain");
    assert_eq!(err["class"], "data");
}

#[test]
fn knockoff_methods_require_q() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, "method = sgshift-k\nq =\n").unwrap();
    let out = sgshift(&["select", "--config", p(&cfg), "--data", "x.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(error_json(&out)["message"].as_str().unwrap().contains("requires q"));
    // the flag wins over the file
    let out = sgshift(&["select", "--config", p(&cfg), "--q", "0.1", "--data", p(&tmp.path().join("missing.csv"))]);
    assert_eq!(error_json(&out)["error"], "Io");
}

#[test]
fn single_replicate_selection() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path(), &[]);
    let data = tmp.path().join("data.csv");
    let offsets = tmp.path().join("offsets.txt");
    let out_dir = tmp.path().join("sel");
    let out = sgshift(&[
        "select", "--data", p(&data), "--offsets", p(&offsets), "--method", "sgshift-k", "--B", "1",
        "--lambda-points", "20", "--out", p(&out_dir),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let sel: Value = serde_json::from_slice(&fs::read(out_dir.join("selection.json")).unwrap()).unwrap();
    assert_eq!(sel["B"], 1);
    assert_eq!(sel["tau_per_replicate"].as_array().unwrap().len(), 1);
    for v in sel["Pi_hat"].as_array().unwrap() {
        let v = v.as_f64().unwrap();
        assert!(v == 0.0 || v == 1.0);
    }
}

#[test]
fn select_rejects_path_methods() {
    let out = sgshift(&["select", "--method", "sgshift", "--data", "x.csv"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn evaluate_without_truth_reports_loss_only() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path(), &[]);
    let data = tmp.path().join("data.csv");
    let out_dir = tmp.path().join("eval");
    let out = sgshift(&["evaluate", "--data", p(&data), "--lambda-points", "20", "--out", p(&out_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m: Value = serde_json::from_slice(&fs::read(out_dir.join("metrics.json")).unwrap()).unwrap();
    assert!(m.get("detection").is_none());
    assert!(m["summary"].get("auc").is_none());
    let curve = fs::read_to_string(out_dir.join("loss_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 21);
}

#[test]
fn aggregate_matches_replicate_files() {
    let tmp = tempfile::tempdir().unwrap();
    let out = sgshift(&[
        "evaluate", "--n-source", "300", "--n-target", "300", "--p", "6", "--a", "2", "--lambda-points", "15",
        "--replicates", "4", "--out", p(tmp.path()),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let agg: Value = serde_json::from_slice(&fs::read(tmp.path().join("aggregate.json")).unwrap()).unwrap();
    let runs: Vec<Value> = (0..4)
        .map(|r| {
            let f = tmp.path().join(format!("replicate_{r:03}/metrics.json"));
            serde_json::from_slice(&fs::read(f).unwrap()).unwrap()
        })
        .collect();
    let aucs: Vec<f64> = runs.iter().map(|m| m["summary"]["auc"].as_f64().unwrap()).collect();
    let mean = aucs.iter().sum::<f64>() / 4.0;
    let sd = (aucs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 3.0).sqrt();
    assert!((agg["metrics"]["auc"]["mean"].as_f64().unwrap() - mean).abs() < 1e-12);
    assert!((agg["metrics"]["auc"]["stderr"].as_f64().unwrap() - sd / 2.0).abs() < 1e-12);
    assert_eq!(agg["replicates"], 4);
}

#[test]
fn bench_reports_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let out = sgshift(&["bench", "--scale", "0.01", "--seed", "5", "--out", p(dir)]);
        assert!(matches!(out.status.code(), Some(0 | 3)), "{}", String::from_utf8_lossy(&out.stderr));
        let stdout = String::from_utf8(out.stdout).unwrap();
        assert_eq!(stdout.lines().filter(|l| l.contains("criterion")).count(), 9);
    }
    let ra = fs::read(a.join("bench_report.json")).unwrap();
    assert_eq!(ra, fs::read(b.join("bench_report.json")).unwrap());
    let report: Value = serde_json::from_slice(&ra).unwrap();
    assert!(report.get("elapsed").is_none() && !String::from_utf8_lossy(&ra).contains("seconds"));
}
