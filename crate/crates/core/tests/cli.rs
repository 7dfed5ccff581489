use std::process::{Command, Output};

fn udtw(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_udtw")).args(args).output().expect("spawn")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn field(json: &str, key: &str) -> f64 {
    let v: serde_json::Value = serde_json::from_str(json).expect("json");
    v[key].as_f64().unwrap_or_else(|| panic!("missing {key} in {json}"))
}

#[test]
fn identical_single_frames_are_zero() {
    let o = udtw(&["dist", "--x", "1.5", "--y", "1.5"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(field(&out, "distance"), 0.0);
    assert_eq!(field(&out, "penalty"), 0.0);
}

#[test]
fn usage_errors_exit_two() {
    let o = udtw(&["dist", "--x", "1,2", "--y", "1,2", "--gamma", "-1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--gamma"), "{}", stderr(&o));

    let o = udtw(&["dist", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(2));

    let o = udtw(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn zero_threads_is_a_usage_error() {
    let o = Command::new(env!("CARGO_BIN_EXE_udtw"))
        .args(["dist", "--x", "1,2", "--y", "1,2"])
        .env("WARP_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("WARP_THREADS"), "{}", stderr(&o));
}

#[test]
fn missing_file_is_a_runtime_error() {
    let o = udtw(&["dist", "--dataset", "/nonexistent/data.tsv"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn config_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"gamma": 0.25, "x": "0,1,2", "y": "0,2"}"#).unwrap();
    let cfg = cfg.to_str().unwrap();

    let o = udtw(&["dist", "--config", cfg]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(field(&stdout(&o), "gamma"), 0.25);

    let o = udtw(&["dist", "--config", cfg, "--gamma", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(field(&stdout(&o), "gamma"), 2.0);
}

#[test]
fn alignment_csv_and_out_file() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("a.csv");
    let out = dir.path().join("r.json");
    let o = udtw(&[
        "dist",
        "--x",
        "0,1,2",
        "--y",
        "0,2",
        "--alignment",
        csv.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(&csv).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.split(',').count() == 2));
    assert!(field(&std::fs::read_to_string(&out).unwrap(), "distance") > 0.0);
}

#[test]
fn oracle_check_passes_and_catches_corruption() {
    let o = udtw(&["oracle-check", "--sizes", "3,3", "--trials", "20"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let o = udtw(&["oracle-check", "--sizes", "4,4", "--trials", "20", "--corrupt", "2,2,-50"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!stderr(&o).is_empty());
}

#[test]
fn output_is_reproducible() {
    let args = ["code", "--dataset", "synth:ecg-like:12", "--seed", "3"];
    let a = udtw(&args);
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    assert_eq!(stdout(&a), stdout(&udtw(&args)));
}
