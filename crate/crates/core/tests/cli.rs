//! The `auction-sim` binary.

use std::path::Path;
use std::process::{Command, Output};

use auction_channel::harness::load_metrics;
use auction_channel::metrics::MetricsRecord;
use auction_channel::scenario::Mode;

const SMALL: &str = r#"
name = "small"
seed = 4
delta = 2
dispute_window = 3
gamma = 0.1

[[parties]]
role = "buyer"
valuation_slope = 10.0
valuation_curvature = 1.0
capacity = 20.0

[[parties]]
role = "seller"
cost_curvature = 1.0
capacity = 20.0

[[parties]]
role = "buyer"
valuation_slope = 12.0
valuation_curvature = 2.0
capacity = 20.0
"#;

fn sim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_auction-sim")).args(args).output().unwrap()
}

fn write_scenario(dir: &Path, text: &str) -> String {
    let path = dir.join("s.toml");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn run_prints_one_csv_row() {
    let dir = tempfile::tempdir().unwrap();
    let s = write_scenario(dir.path(), SMALL);
    let out = sim(&["run", &s]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], MetricsRecord::csv_header());
    assert!(lines[1].starts_with("channel,3,"));
}

#[test]
fn jsonl_output_reloads_and_seed_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let s = write_scenario(dir.path(), SMALL);
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    let tr = dir.path().join("trace.jsonl");
    let out = sim(&["run", &s, "--format", "jsonl", "--out", a.to_str().unwrap(), "--trace", tr.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out.stdout.is_empty());
    let ra = load_metrics(&a).unwrap();
    assert_eq!(ra.len(), 1);
    assert!(ra[0].converged);
    let rounds = std::fs::read_to_string(&tr).unwrap().lines().count() as u64;
    assert_eq!(rounds, ra[0].rounds_elapsed);

    let out = sim(&["--seed", "99", "run", &s, "--format", "jsonl", "--out", b.to_str().unwrap()]);
    assert!(out.status.success());
    let rb = load_metrics(&b).unwrap();
    assert_eq!(ra[0].final_allocations, rb[0].final_allocations);
}

#[test]
fn compare_emits_both_modes() {
    let dir = tempfile::tempdir().unwrap();
    let s = write_scenario(dir.path(), SMALL);
    let out = sim(&["compare", &s, "--format", "jsonl"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let records: Vec<MetricsRecord> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| MetricsRecord::from_json_line(l).unwrap())
        .collect();
    assert_eq!(records.iter().map(|r| r.mode).collect::<Vec<_>>(), vec![Mode::Channel, Mode::Strawman]);
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("on_chain_tx"));
    assert!(!stderr.contains("MISMATCH"));
}

#[test]
fn bad_scenario_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let s = write_scenario(dir.path(), &SMALL.replace("delta = 2", "delta = \"two\""));
    let out = sim(&["run", &s]);
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("delta"), "{stderr}");

    let out = sim(&["run", dir.path().join("absent.toml").to_str().unwrap()]);
    assert!(!out.status.success());
}
