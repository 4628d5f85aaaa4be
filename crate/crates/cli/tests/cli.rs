//! End-to-end runs of the `ordgee` binary.

use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn ordgee(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ordgee")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_demo(dir: &Path, complete: bool) -> String {
    let path = dir.join(if complete { "complete.csv" } else { "demo.csv" });
    let path = path.to_str().unwrap().to_string();
    let mut args = vec!["demo", "--n", "200", "--seed", "3", "--out", &path];
    if complete {
        args.push("--complete");
    }
    let o = ordgee(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    path
}

/// Coefficient lines of a fit table: everything after the title and header.
fn coefficient_rows(table: &str) -> Vec<&str> {
    table.lines().skip(2).filter(|l| !l.trim().is_empty()).collect()
}

#[test]
fn gee_fit_on_the_demo_succeeds() {
    let dir = TempDir::new().unwrap();
    let data = write_demo(dir.path(), true);
    let o = ordgee(&["fit", "--data", &data, "--method", "gee", "--assoc", "corr:ind", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("converged=true"), "{out}");
    assert_eq!(coefficient_rows(&out).len(), 7);
}

#[test]
fn drgee_fit_reports_seven_coefficients() {
    let dir = TempDir::new().unwrap();
    let data = write_demo(dir.path(), false);
    let config = dir.path().join("models.json");
    std::fs::write(&config, "{}").unwrap();
    let json = dir.path().join("fit.json");
    let o = ordgee(&[
        "fit",
        "--data",
        &data,
        "--method",
        "drgee",
        "--assoc",
        "lor:uniform",
        "--model-config",
        config.to_str().unwrap(),
        "--seed",
        "1",
        "--out",
        json.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    let rows = coefficient_rows(&out);
    assert_eq!(rows.len(), 7, "{out}");
    assert!(rows[0].starts_with("intercept1") && rows[2].starts_with('x'));
    let value: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
    assert!(value.is_object());
}

#[test]
fn weighted_methods_require_a_model_config() {
    let dir = TempDir::new().unwrap();
    let data = write_demo(dir.path(), false);
    for method in ["wgee", "migee", "drgee"] {
        let o = ordgee(&["fit", "--data", &data, "--method", method, "--seed", "1"]);
        assert_eq!(o.status.code(), Some(2), "{method}");
        assert!(stderr(&o).contains("--model-config"), "{}", stderr(&o));
    }
}

#[test]
fn invalid_input_exits_with_two() {
    let dir = TempDir::new().unwrap();
    let data = write_demo(dir.path(), true);
    let missing = dir.path().join("absent.csv");
    let cases: [&[&str]; 4] = [
        &["simulate", "--reps", "0", "--seed", "1"],
        &["fit", "--data", &data, "--assoc", "corr:nonsense", "--seed", "1"],
        &["fit", "--data", &data, "--method", "ols", "--seed", "1"],
        &["fit", "--data", missing.to_str().unwrap(), "--seed", "1"],
    ];
    for args in cases {
        let o = ordgee(args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
    }
}

fn small_simulation(dir: &Path, scenario: &str, name: &str) -> (Output, String) {
    let out = dir.join(name);
    let o = ordgee(&[
        "simulate",
        "--scenario",
        scenario,
        "--n",
        "80",
        "--reps",
        "3",
        "--assoc",
        "corr:ind,lor:uniform",
        "--imputations",
        "2",
        "--seed",
        "7",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let json = std::fs::read_to_string(out).unwrap();
    (o, json)
}

#[test]
fn simulation_is_deterministic_for_a_seed() {
    let dir = TempDir::new().unwrap();
    let (_, a) = small_simulation(dir.path(), "paper-table2", "a.json");
    let (_, b) = small_simulation(dir.path(), "paper-table2", "b.json");
    assert_eq!(a, b);
    let value: serde_json::Value = serde_json::from_str(&a).unwrap();
    assert!(value["schema_version"].is_u64());
}

#[test]
fn misspecified_preset_reports_its_blocks() {
    let dir = TempDir::new().unwrap();
    let (o, _) = small_simulation(dir.path(), "paper-table1", "t1.json");
    let table = stdout(&o);
    for block in ["Available", "WGEE(r-)", "MIGEE(x-)", "DRGEE(x-,r-)"] {
        assert!(table.contains(block), "missing {block}:\n{table}");
    }
}
