//! End-to-end runs of the `fracdev` binary.

use std::path::PathBuf;
use std::process::{Command, Output};

fn fracdev(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fracdev"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn spec() -> String {
    concat!(env!("CARGO_MANIFEST_DIR"), "/specs/linear.json").to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn tree_listing_counts_match() {
    let o = fracdev(&["trees", "--max-nodes", "3", "--format", "csv"]);
    assert!(o.status.success());
    // header plus 1 + 2 + 8 labelled trees with at most three nodes
    assert_eq!(stdout(&o).lines().count(), 1 + 11);
    let strato = fracdev(&["trees", "--max-nodes", "3", "--strato", "--format", "json"]);
    let v: serde_json::Value = serde_json::from_slice(&strato.stdout).unwrap();
    assert!(v.as_array().unwrap().iter().all(|t| t["stoch"].as_u64().unwrap() % 2 == 0));
}

#[test]
fn moment_json_reports_closed_form() {
    let o = fracdev(&["moment", "--word", "1,1", "--hurst", "0.75", "--format", "json"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["value"], 0.5);
}

#[test]
fn path_csv_round_trips() {
    let o = fracdev(&["simulate-path", "--hurst", "0.3", "--steps", "32", "--dim", "2", "--seed", "11"]);
    assert!(o.status.success());
    let mut r = csv::Reader::from_reader(o.stdout.as_slice());
    assert_eq!(r.headers().unwrap(), vec!["t", "B1", "B2"]);
    let rows: Vec<Vec<f64>> = r
        .records()
        .map(|rec| rec.unwrap().iter().map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 33);
    assert_eq!(rows[0], [0.0, 0.0, 0.0]);
    assert_eq!(rows[32][0], 1.0);

    let json = fracdev(&["simulate-path", "--hurst", "0.3", "--steps", "32", "--dim", "2", "--seed", "11", "--format", "json"]);
    let v: serde_json::Value = serde_json::from_slice(&json.stdout).unwrap();
    let values: Vec<f64> = v["values"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    let from_csv: Vec<f64> = rows.iter().flat_map(|r| r[1..].to_vec()).collect();
    assert_eq!(values, from_csv);
}

#[test]
fn out_flag_writes_file() {
    let path = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("solve.csv");
    let o = fracdev(&["solve", &spec(), "--steps", "8", "--out", path.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(o.stdout.is_empty());
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next(), Some("t,x1"));
    assert_eq!(text.lines().count(), 10);
}

#[test]
fn expansion_values_at_times() {
    let o = fracdev(&["expand", &spec(), "--t", "0.5", "--format", "json"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    // 1 + 2t + t^{3/2}/2 + 2t^2 for dx = 2x dt + x dB, f = x, a = 1
    let want = 1.0 + 1.0 + 0.5 * 0.5f64.powf(1.5) + 0.5;
    assert!((v["values"][0]["value"].as_f64().unwrap() - want).abs() < 1e-12);
}

#[test]
fn validate_passes_on_linear_equation() {
    let o = fracdev(&["validate", &spec(), "--paths", "4000", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 2);
}

#[test]
fn empty_suite_exits_zero() {
    let cfg = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("empty_suite.json");
    std::fs::write(&cfg, r#"{"criteria": []}"#).unwrap();
    let o = fracdev(&["suite", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn exact_suite_criteria_pass() {
    let o = fracdev(&["suite", "--criteria", "3,4", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["passed"], true);
}

#[test]
fn input_errors_exit_two() {
    let bad = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("bad_spec.json");
    std::fs::write(&bad, r#"{"hurst": 1.5, "n": 1, "d": 1, "a": [0], "drift": ["0"], "diffusion": [["1"]], "f": "x1"}"#).unwrap();
    let o = fracdev(&["expand", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
    assert_eq!(fracdev(&["expand", "/nonexistent.json"]).status.code(), Some(2));
    assert_eq!(fracdev(&["moment", "--hurst", "0.5"]).status.code(), Some(2));
    assert_eq!(fracdev(&["suite", "--criteria", "0"]).status.code(), Some(2));
}
