use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fleet_core::cli::CSV_HEADER;
use fleet_core::RunReport;

fn fleet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fleet")).args(args).env("FLEET_LOG", "quiet").output().unwrap()
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus/scenarios").join(name)
}

fn text(out: &[u8]) -> String {
    String::from_utf8(out.to_vec()).unwrap()
}

#[test]
fn run_prints_a_table() {
    let out = fleet(&["run", scenario("skype_call.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    assert!(stdout.starts_with("SUBSCRIBER"));
    assert!(stdout.contains("skype_like"));
}

#[test]
fn same_seed_same_bytes() {
    let path = scenario("skype_call.json");
    let a = fleet(&["run", path.to_str().unwrap(), "--format", "json", "--seed", "5"]);
    let b = fleet(&["run", path.to_str().unwrap(), "--format", "json", "--seed", "5"]);
    let c = fleet(&["run", path.to_str().unwrap(), "--format", "json", "--seed", "6"]);
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn csv_rows_match_json_totals() {
    let path = scenario("skype_call.json");
    let json = fleet(&["run", path.to_str().unwrap(), "--format", "json"]);
    let report = RunReport::from_json(&text(&json.stdout)).unwrap();
    let csv = text(&fleet(&["run", path.to_str().unwrap(), "--format", "csv"]).stdout);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len() as u64, report.totals.flows);
    let sum = |col: usize| rows.iter().map(|r| r[col].parse::<u64>().unwrap()).sum::<u64>();
    assert_eq!(sum(3), report.totals.bytes_up);
    assert_eq!(sum(4), report.totals.bytes_down);
    assert_eq!(sum(5), report.totals.forwarded_bytes);
}

#[test]
fn saved_report_renders_like_a_fresh_run() {
    let dir = tempfile::tempdir().unwrap();
    let saved = dir.path().join("report.json");
    let path = scenario("skype_call.json");
    let out = fleet(&["run", path.to_str().unwrap(), "--format", "json", "--out", saved.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    let fresh = fleet(&["run", path.to_str().unwrap()]);
    let replayed = fleet(&["report", saved.to_str().unwrap()]);
    assert_eq!(replayed.status.code(), Some(0));
    assert_eq!(fresh.stdout, replayed.stdout);
}

#[test]
fn anomalies_fail_only_when_asked() {
    let path = scenario("flow_storm.json");
    let plain = fleet(&["run", path.to_str().unwrap()]);
    assert_eq!(plain.status.code(), Some(0));
    assert!(text(&plain.stdout).contains("signaling_overload"));
    let strict = fleet(&["run", path.to_str().unwrap(), "--fail-on-anomaly"]);
    assert_eq!(strict.status.code(), Some(1));
    let calm = fleet(&["run", scenario("skype_call.json").to_str().unwrap(), "--fail-on-anomaly"]);
    assert_eq!(calm.status.code(), Some(0));
}

#[test]
fn config_errors_exit_2_and_name_the_field() {
    let missing = fleet(&["run", "/nonexistent/scenario.json"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(text(&missing.stderr).contains("/nonexistent/scenario.json"));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"device_count": 2, "apps": ["skype"], "duration_ms": 10000, "pool": {"first": "10.0.2.100", "last": "nope"}}"#)
        .unwrap();
    let out = fleet(&["validate", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("pool.last"), "{}", text(&out.stderr));

    let unknown_app = dir.path().join("app.json");
    std::fs::write(&unknown_app, r#"{"device_count": 1, "apps": ["nosuchapp"], "duration_ms": 10000}"#).unwrap();
    assert_eq!(fleet(&["validate", unknown_app.to_str().unwrap()]).status.code(), Some(2));

    assert_eq!(fleet(&["run"]).status.code(), Some(2));
}

#[test]
fn validate_accepts_shipped_scenarios() {
    for name in ["skype_call.json", "flow_storm.json"] {
        let out = fleet(&["validate", scenario(name).to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{name}: {}", text(&out.stderr));
        assert!(text(&out.stdout).contains(": ok ("));
    }
}
