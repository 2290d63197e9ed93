use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn longnav(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_longnav"))
        .args(args)
        .env("LONGNAV_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn quick_config() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs/quick.json")
        .to_string_lossy()
        .into_owned()
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn generate(dir: &Path, seed: &str) -> String {
    let cfg = quick_config();
    ok(longnav(&[
        "generate", "--config", &cfg, "--seed", seed, "--traversals", "4", "--out", &path(dir, ""),
    ]))
}

#[test]
fn generate_is_deterministic() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = generate(a.path(), "7");
    assert_eq!(first, generate(b.path(), "7"));
    assert_ne!(first, generate(c.path(), "8"));
    assert!(first.contains("sha256"));
    let bytes = |d: &Path| std::fs::read(d.join("dataset.jsonl")).unwrap();
    assert_eq!(bytes(a.path()), bytes(b.path()));
    assert!(a.path().join("map.json").exists());
}

#[test]
fn replay_gives_identical_logs() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path(), "7");
    let cfg = quick_config();
    let data = path(dir.path(), "dataset.jsonl");
    let run = |out: &str, extra: &[&str]| {
        let out = path(dir.path(), out);
        let mut args = vec!["replay", "--config", &cfg, "--dataset", &data, "--strategy", "static", "--out", &out];
        args.extend_from_slice(extra);
        ok(longnav(&args));
        std::fs::read_to_string(PathBuf::from(out).join("logs.jsonl")).unwrap()
    };
    let first = run("r1", &[]);
    assert_eq!(first, run("r2", &[]));
    assert_eq!(first.lines().count(), 4);
    // the snapshot written by generate is the map replay would teach
    let map = path(dir.path(), "map.json");
    assert_eq!(first, run("r3", &["--map", &map]));
}

#[test]
fn compare_writes_report_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config();
    let out = path(dir.path(), "cmp");
    let stdout = ok(longnav(&["compare", "--config", &cfg, "--traversals", "6", "--out", &out]));
    assert!(stdout.contains("ranking:"));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("cmp/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["strategies"].as_array().unwrap().len(), 3);
    assert_eq!(summary["t_tests"].as_array().unwrap().len(), 3);
    let cdf = std::fs::read_to_string(dir.path().join("cmp/cdf.csv")).unwrap();
    assert_eq!(cdf.lines().next().unwrap(), "threshold_px,static,score,fremen");

    // re-rendering from the logs reproduces the strategy summaries
    let logs = path(dir.path(), "cmp/logs.jsonl");
    let again = path(dir.path(), "again");
    ok(longnav(&["report", "--config", &cfg, "--logs", &logs, "--out", &again]));
    let rebuilt: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("again/summary.json")).unwrap()).unwrap();
    assert_eq!(rebuilt["strategies"], summary["strategies"]);
    assert_eq!(std::fs::read_to_string(dir.path().join("again/cdf.csv")).unwrap(), cdf);
}

#[test]
fn simulate_runs_closed_loop() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config();
    let out = path(dir.path(), "sim");
    ok(longnav(&["simulate", "--config", &cfg, "--traversals", "3", "--strategy", "latest", "--out", &out]));
    let summary = std::fs::read_to_string(dir.path().join("sim/summary.json")).unwrap();
    assert!(summary.contains("\"closed_loop\""));
    assert!(summary.contains("\"latest\""));
}

#[test]
fn exit_codes() {
    assert_eq!(longnav(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(longnav(&["compare", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(longnav(&["compare", "--strategy", "nonsense"]).status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let missing = path(dir.path(), "missing.json");
    let out = longnav(&["compare", "--config", &missing]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.json"));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"schedule": {"traversals": 0}}"#).unwrap();
    let out = longnav(&["generate", "--config", &bad.to_string_lossy(), "--out", &path(dir.path(), "o")]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}
