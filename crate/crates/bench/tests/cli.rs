use std::path::Path;
use std::process::{Command, Output};

fn msphs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_msphs")).args(args).output().unwrap()
}

fn error_kind(out: &Output) -> String {
    assert!(!out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    v["error"]["kind"].as_str().unwrap().to_string()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn missing_config_reports_structured_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = msphs(&["sweep", "--config", path(&dir.path().join("absent.toml")), "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_kind(&out), "io");
}

#[test]
fn invalid_config_reports_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "seeds = []\n").unwrap();
    let out = msphs(&["sweep", "--config", path(&cfg), "--out", path(dir.path())]);
    assert_eq!(error_kind(&out), "config");
}

#[test]
fn report_on_empty_directory_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = msphs(&["report", "--results", path(dir.path())]);
    assert!(!out.status.success());
    serde_json::from_slice::<serde_json::Value>(&out.stderr).unwrap();
}

#[test]
fn simulate_fit_predict_chain() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.txt");
    let model = dir.path().join("model.json");
    let mesh = dir.path().join("mesh.csv");
    let sim = msphs(&["simulate", "--system", "duffing", "--samples", "25", "--t1", "5", "--out", path(&data)]);
    assert!(sim.status.success(), "{}", String::from_utf8_lossy(&sim.stderr));
    let fit = msphs(&[
        "fit", "--data", path(&data), "--system", "duffing", "--method", "ms-phs-ab-2", "--iterations", "3", "--out",
        path(&model),
    ]);
    assert!(fit.status.success(), "{}", String::from_utf8_lossy(&fit.stderr));
    let pred = msphs(&[
        "predict", "--model", path(&model), "--data", path(&data), "--resolution", "4", "--bounds", "-1,1,-1,1", "--out",
        path(&mesh),
    ]);
    assert!(pred.status.success(), "{}", String::from_utf8_lossy(&pred.stderr));
    let text = std::fs::read_to_string(&mesh).unwrap();
    assert_eq!(text.lines().count(), 1 + 16);

    let wrong = msphs(&["fit", "--data", path(&data), "--system", "duffing", "--method", "gp-phs-loess-2", "--out", path(&model)]);
    assert!(!wrong.status.success());
}
