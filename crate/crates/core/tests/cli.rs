use std::path::Path;
use std::process::{Command, Output};

fn pudding(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pudding")).args(args).output().unwrap()
}

fn write_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("cfg.toml");
    let text = format!("n = [4]\nclients = 4\nduration_s = 20.0\ndrain_s = 30.0\nrepetitions = 1\ntrials = 4\n{extra}");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn scenario_writes_requested_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "workloads = [\"register\"]\n");
    let out = dir.path().join("out");
    let o = pudding(&["scenario", "--config", &cfg, "--seed", "9", "--out", out.to_str().unwrap(), "--format", "table"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("latencies.csv")).unwrap();
    assert!(csv.starts_with(pudding::harness::CSV_HEADER));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert!(json["runs"][0]["seed"].as_u64().is_some());
    assert!(out.join("table.txt").exists());
}

#[test]
fn scenario_prints_csv_to_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "workloads = [\"register\"]\n");
    let o = pudding(&["scenario", "--config", &cfg, "--format", "csv"]);
    assert!(o.status.success());
    assert!(String::from_utf8(o.stdout).unwrap().starts_with(pudding::harness::CSV_HEADER));
}

#[test]
fn passing_game_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let o = pudding(&["game", "g3", "--config", &cfg, "--format", "json"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v[0]["pass"], true);
}

#[test]
fn errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[[faults]]\nnode = 0\nkind = \"byzantine\"\n");
    // The membership game cannot run against Byzantine nodes.
    assert_eq!(pudding(&["game", "g4", "--config", &cfg]).status.code(), Some(2));
    assert_eq!(pudding(&["game", "g9"]).status.code(), Some(2));
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "mu = -1.0\n").unwrap();
    assert_eq!(pudding(&["scenario", "--config", bad.to_str().unwrap()]).status.code(), Some(2));
}
