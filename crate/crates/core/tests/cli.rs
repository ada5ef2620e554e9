//! End-to-end runs of the command-line binary.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn tightlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tightlab"))
        .args(args)
        .env("TIGHTLAB_WORKERS", "1")
        .output()
        .unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn counterexample_passes_and_reports_other_weights() {
    let dir = tempfile::tempdir().unwrap();
    let out = tightlab(&["reproduce-counterexample", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let report = read_json(&dir.path().join("counterexample.json"));
    assert_eq!(report["passed"], true);
    assert_eq!(report["fractional_vertex"], serde_json::json!([0.5, 0.5, 0.5]));

    let out = tightlab(&["reproduce-counterexample", "--w", "0.5"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("REPORTED"));
}

#[test]
fn generate_train_diagnose_certify_bound() {
    let dir = tempfile::tempdir().unwrap();
    let d = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let gen = tightlab(&[
        "gen-data", "--out", &d("data"), "--labels", "5", "--train", "20", "--test", "10",
        "--features", "4", "--seed", "7", "--label-noise", "0.1",
    ]);
    assert_eq!(gen.status.code(), Some(0), "{}", stderr(&gen));
    let data = d("data/dataset.json");
    let labels = std::fs::read_to_string(dir.path().join("data/labels.csv")).unwrap();
    assert_eq!(labels.lines().next(), Some("instance,split,y0,y1,y2,y3,y4"));
    assert_eq!(labels.lines().count(), 31);

    let train = tightlab(&["train", "--data", &data, "--passes", "5", "--lambda", "0.1", "--out", &d("train")]);
    assert_eq!(train.status.code(), Some(0), "{}", stderr(&train));
    let jsonl = std::fs::read_to_string(dir.path().join("train/metrics.jsonl")).unwrap();
    assert_eq!(jsonl.lines().count(), 5);
    let csv = std::fs::read_to_string(dir.path().join("train/metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
    let cfg = read_json(&dir.path().join("train/run_config.json"));
    assert_eq!(cfg["train"]["passes"], 5);
    for line in jsonl.lines() {
        let rec: Value = serde_json::from_str(line).unwrap();
        let (r, g, e) = (
            rec["relaxed_hinge"].as_f64().unwrap(),
            rec["integrality_gap"].as_f64().unwrap(),
            rec["exact_hinge"].as_f64().unwrap(),
        );
        assert!((r - g - e).abs() < 1e-9);
    }

    let weights = d("train/weights.json");
    let diag = tightlab(&["diagnose", "--data", &data, "--weights", &weights, "--gamma", "0.1,1", "--out", &d("diag")]);
    assert_eq!(diag.status.code(), Some(0), "{}", stderr(&diag));
    let report = read_json(&dir.path().join("diag/diagnose.json"));
    assert_eq!(report["n_instances"], 30);
    assert_eq!(report["m_train"], 20);
    assert_eq!(report["ramp_means"].as_array().unwrap().len(), 2);
    let margins = std::fs::read_to_string(dir.path().join("diag/margins.csv")).unwrap();
    assert_eq!(margins.lines().next(), Some("bin_left,bin_right,count"));

    let cert = tightlab(&["certify", "--data", &data, "--weights", &weights, "--out", &d("diag")]);
    assert_eq!(cert.status.code(), Some(0), "{}", stderr(&cert));
    assert_eq!(read_json(&dir.path().join("diag/certificates.json"))["n_instances"], 30);

    let bound = tightlab(&["bound", "--diagnostics", &d("diag/diagnose.json"), "--gamma", "0.1,1", "--out", &d("diag")]);
    assert_eq!(bound.status.code(), Some(0), "{}", stderr(&bound));
    let b = read_json(&dir.path().join("diag/bound.json"));
    let b = b.as_array().unwrap();
    assert_eq!(b.len(), 2);
    assert!(b[1]["bound_value"].as_f64() < b[0]["bound_value"].as_f64());
}

#[test]
fn random_weights_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out_dir = dir.path().join(name);
        let out = tightlab(&[
            "diagnose", "--counterexample", "--random-weights", "--seed", "3",
            "--out", out_dir.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        std::fs::read_to_string(out_dir.join("diagnose.json")).unwrap()
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"train": {"lambda": 0.5, "passes": 3}, "generator": {"kind": "counterexample"}}"#).unwrap();
    let out_dir = dir.path().join("run");
    let out = tightlab(&[
        "train", "--config", cfg.to_str().unwrap(), "--passes", "2", "--out", out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let saved = read_json(&out_dir.join("run_config.json"));
    assert_eq!(saved["train"]["passes"], 2);
    assert_eq!(saved["train"]["lambda"], 0.5);
}

#[test]
fn invalid_inputs_exit_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();

    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"train": {"lambda": 0.5, "pases": 3}}"#).unwrap();
    let out = tightlab(&["train", "--config", cfg.to_str().unwrap(), "--counterexample"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("train"), "{}", stderr(&out));

    let out = tightlab(&["bound", "--m", "10", "--q", "3", "--b", "1", "--r-hat", "1", "--ramp-mean", "0.1", "--delta", "1.5"]);
    assert_eq!(out.status.code(), Some(2));

    let data = dir.path().join("data.json");
    std::fs::write(&data, "{\"format\": \"tightlab-dataset/1\",\n \"graph\": 3}").unwrap();
    let out = tightlab(&["diagnose", "--data", data.to_str().unwrap(), "--random-weights"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("graph"), "{}", stderr(&out));

    std::fs::write(&data, "{\"format\": ").unwrap();
    let out = tightlab(&["diagnose", "--data", data.to_str().unwrap(), "--random-weights"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 1"), "{}", stderr(&out));

    let out = tightlab(&["diagnose", "--counterexample"]);
    assert_eq!(out.status.code(), Some(2));
}
