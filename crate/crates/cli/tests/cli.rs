use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn hinfopt(args: &[&str], config: Option<&str>, dir: &Path) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_hinfopt"));
    cmd.args(args).env_remove("HINFOPT_THREADS");
    if let Some(text) = config {
        let path = dir.join("config.json");
        std::fs::write(&path, text).unwrap();
        cmd.arg("--config").arg(path);
    }
    cmd.output().unwrap()
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn schema_error_is_json_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let out = hinfopt(&["norm"], Some(r#"{"plant":"example2"}"#), dir.path());
    assert!(!out.status.success());
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "schema");
    assert_eq!(err["error"]["pointer"], "/K0");
}

#[test]
fn non_stabilizing_start_is_a_task_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = hinfopt(&["norm", "--out", dir.path().to_str().unwrap()], Some(r#"{"plant":"example1","K0":[[0.5]]}"#), dir.path());
    assert!(!out.status.success());
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "task");
    assert_eq!(err["error"]["task"], "norm");
}

#[test]
fn norm_of_example1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"plant":"example1","K0":[[-0.5]]}"#;
    let out = hinfopt(&["norm", "--out", dir.path().to_str().unwrap()], Some(cfg), dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let j = report(dir.path())["results"]["J"].as_f64().unwrap();
    assert!((j - 1.25f64.sqrt() / 0.5).abs() < 1e-7);
    assert!(dir.path().join("response.csv").exists());
    assert!(dir.path().join("response.svg").exists());
}

#[test]
fn optimize_is_byte_reproducible() {
    let cfg = r#"{"plant":"example1","K0":[[-0.5]],"T":2000,"schedule":{"kind":"constant","alpha":0.001}}"#;
    let runs: Vec<Vec<u8>> = (0..2)
        .map(|_| {
            let dir = tempfile::tempdir().unwrap();
            let out = hinfopt(&["optimize", "--out", dir.path().to_str().unwrap()], Some(cfg), dir.path());
            assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
            std::fs::read(dir.path().join("run.csv")).unwrap()
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
    let text = String::from_utf8(runs[0].clone()).unwrap();
    assert_eq!(text.lines().count(), 2002);
}

#[test]
fn landscape_counts_components() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"plant":"example3","alpha":0.13,"evaluate_cost":false}"#;
    let out = hinfopt(&["landscape", "--out", dir.path().to_str().unwrap()], Some(cfg), dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let comp: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("components.json")).unwrap()).unwrap();
    assert_eq!(comp["n_components"], 2);
    assert!(dir.path().join("heatmap.svg").exists());
}

#[test]
fn certify_example1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"plant":"example1","K0":[[-1.0]],"gamma":2.0}"#;
    let out = hinfopt(&["certify", "--out", dir.path().to_str().unwrap()], Some(cfg), dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = &report(dir.path())["results"];
    assert_eq!(r["feasible"], true);
    assert!(r["lambda_max_of_Lambda"].as_f64().unwrap() <= 1e-8);

    let dir = tempfile::tempdir().unwrap();
    let out = hinfopt(&["certify", "--out", dir.path().to_str().unwrap(), "--gamma", "1.4"], Some(cfg), dir.path());
    assert!(out.status.success());
    assert_eq!(report(dir.path())["results"]["feasible"], false);
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"plant":"example1","K0":[[-0.5]],"seed":3,"T":10,"output_dir":"ignored"}"#;
    let out = hinfopt(&["optimize", "--out", dir.path().to_str().unwrap(), "--T", "25", "--seed", "7"], Some(cfg), dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(dir.path());
    assert_eq!(r["config"]["seed"], 7);
    assert_eq!(r["config"]["T"], 25);
    assert!(!Path::new("ignored").exists());
}
