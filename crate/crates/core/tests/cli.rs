use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_fbtrain");
const DYNAMIC_TDD: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/dynamic_tdd_19cell.json");
const CELL_EDGE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/cell_edge_pair.json");

const SMALL: &[&str] = &[
    "--set", "topology.tiers=1",
    "--set", "users_per_cell=2",
    "--set", "scenario.iterations=3",
];

fn fbtrain(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn run_small(out: &Path, workers: &str) -> String {
    let mut args = vec!["run", "--config", DYNAMIC_TDD, "--out", out.to_str().unwrap(), "--drops", "3", "--workers", workers];
    args.extend_from_slice(SMALL);
    let o = fbtrain(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    fs::read_to_string(out.join("trace.csv")).unwrap()
}

#[test]
fn run_output_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = run_small(&dir.path().join("a"), "1");
    let b = run_small(&dir.path().join("b"), "1");
    let c = run_small(&dir.path().join("c"), "3");
    assert_eq!(a, b);
    assert_eq!(a, c);
    assert_eq!(a.lines().next().unwrap(), "strategy,drop,iteration,sum_rate,eff_throughput,pilots,objective");
    // 3 strategies x 3 drops x (T + 1) rows
    assert_eq!(a.lines().count(), 1 + 3 * 3 * 4);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("a/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["completed_drops"], 3);
    assert_eq!(summary["strategies"].as_array().unwrap().len(), 3);
}

#[test]
fn missing_config_names_the_path() {
    let o = fbtrain(&["validate", "--config", "/nonexistent/cfg.json"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("/nonexistent/cfg.json"), "{}", stderr(&o));
}

#[test]
fn validate_reports_every_violation() {
    let o = fbtrain(&[
        "validate", "--config", DYNAMIC_TDD,
        "--set", "scenario.pilot_pool=10",
        "--set", "scenario.duplex={\"mode\":\"dynamic_tdd\",\"p_ul\":1.5}",
    ]);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.contains("pilot"), "{err}");
    assert!(err.contains("p_ul"), "{err}");
}

#[test]
fn shipped_configs_validate() {
    for path in [CELL_EDGE, DYNAMIC_TDD] {
        let o = fbtrain(&["validate", "--config", path]);
        assert!(o.status.success(), "{path}: {}", stderr(&o));
    }
}

#[test]
fn sweep_writes_one_curve_per_strategy() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let mut args = vec!["sweep", "--config", DYNAMIC_TDD, "--out", out, "--drops", "2", "--t", "3,0,2,2"];
    args.extend_from_slice(SMALL);
    let o = fbtrain(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("duplicate"), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "strategy,T,gamma,total_overhead,mean_r,mean_eff_tput,p5,p95");
    assert_eq!(csv.lines().count(), 1 + 3 * 3);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("sweep_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["t_values"], serde_json::json!([0, 2, 3]));
    assert_eq!(summary["curves"].as_array().unwrap().len(), 3);
}

#[test]
fn sweep_at_zero_rounds_has_no_overhead() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let mut args = vec!["sweep", "--config", DYNAMIC_TDD, "--out", out, "--drops", "2", "--t", "0"];
    args.extend_from_slice(SMALL);
    let o = fbtrain(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut reader = csv::Reader::from_path(dir.path().join("sweep.csv")).unwrap();
    for row in reader.records() {
        let row = row.unwrap();
        assert_eq!(&row[1], "0");
        assert_eq!(row[3].parse::<f64>().unwrap(), 0.0);
        assert_eq!(row[4], row[5]);
    }
}
