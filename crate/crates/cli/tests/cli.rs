use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_tdvs");

fn tdvs(args: &[&str], threads: usize) -> Output {
    Command::new(BIN).args(args).env("TDVS_THREADS", threads.to_string()).output().expect("binary runs")
}

fn ok(args: &[&str], threads: usize) -> String {
    let out = tdvs(args, threads);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// Small linear data set with a heavy-tailed error; deterministic LCG noise.
fn toy_csv(dir: &Path, constant_column: bool) -> PathBuf {
    let mut state: u64 = 12345;
    let mut unif = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((state >> 11) as f64 + 0.5) / (1u64 << 53) as f64
    };
    let mut text = String::from("y,x0,x1,x2,x3");
    if constant_column {
        text.push_str(",k");
    }
    text.push('\n');
    for _ in 0..40 {
        let x: Vec<f64> = (0..4).map(|_| unif() * 4.0 - 2.0).collect();
        let e = (unif() - 0.5) / (unif() + 0.05);
        let y = 1.0 + 2.0 * x[0] + x[2] + e;
        text.push_str(&format!("{y:.6},{:.6},{:.6},{:.6},{:.6}", x[0], x[1], x[2], x[3]));
        if constant_column {
            text.push_str(",7");
        }
        text.push('\n');
    }
    let path = dir.join(if constant_column { "toy_const.csv" } else { "toy.csv" });
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn version_reports_format() {
    let v = ok(&["--version"], 1);
    assert!(v.starts_with("tdvs "), "{v}");
    assert!(v.contains("output format 1"), "{v}");
}

#[test]
fn select_is_reproducible_across_runs_and_threads() {
    let dir = TempDir::new().unwrap();
    let input = toy_csv(dir.path(), false);
    let args =
        ["select", "--input", input.to_str().unwrap(), "--response", "y", "--seed", "11", "--permutations", "30"];
    let one = ok(&args, 1);
    assert_eq!(one, ok(&args, 1));
    assert_eq!(one, ok(&args, 3));
    let doc: Value = serde_json::from_str(&one).unwrap();
    assert_eq!(doc["manifest"]["command"], "select");
    assert_eq!(doc["manifest"]["config"]["selection"]["master_seed"], 11);
    let selected = doc["result"]["selection"]["selected"].as_array().unwrap();
    assert!(selected.contains(&Value::from(0)));
}

#[test]
fn simulate_is_identical_across_threads() {
    let args = ["simulate", "--scenario", "table1-mixhat", "--replicates", "3", "--seed", "5", "--permutations", "20"];
    let one = ok(&args, 1);
    assert_eq!(one, ok(&args, 4));
    let doc: Value = serde_json::from_str(&one).unwrap();
    assert_eq!(doc["result"]["replicates"].as_array().unwrap().len(), 3);
    assert_eq!(doc["result"]["summary"]["completed"], 3);
}

#[test]
fn replay_reproduces_every_command() {
    let dir = TempDir::new().unwrap();
    let input = toy_csv(dir.path(), false);
    let input = input.to_str().unwrap();
    let runs: [&[&str]; 4] = [
        &["fit", "--input", input, "--response", "y", "--t0", "5"],
        &["tune", "--input", input, "--response", "y", "--grid", "1,10", "--folds", "4"],
        &["select", "--input", input, "--response", "y", "--permutations", "20", "--tune-t0", "3,30", "--seed", "2"],
        &["simulate", "--scenario", "table1-normal", "--replicates", "2", "--method", "lasso"],
    ];
    for (k, args) in runs.iter().enumerate() {
        let first = dir.path().join(format!("run{k}.json"));
        let second = dir.path().join(format!("replay{k}.json"));
        let mut with_output = args.to_vec();
        with_output.extend(["--output", first.to_str().unwrap()]);
        ok(&with_output, 2);
        ok(&["replay", "--manifest", first.to_str().unwrap(), "--output", second.to_str().unwrap()], 1);
        assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap(), "{args:?}");
    }
}

#[test]
fn replay_refuses_changed_input() {
    let dir = TempDir::new().unwrap();
    let input = toy_csv(dir.path(), false);
    let doc = dir.path().join("fit.json");
    ok(&["fit", "--input", input.to_str().unwrap(), "--response", "y", "--output", doc.to_str().unwrap()], 1);
    let mut text = std::fs::read_to_string(&input).unwrap();
    text.push_str("1,1,1,1,1\n");
    std::fs::write(&input, text).unwrap();
    let out = tdvs(&["replay", "--manifest", doc.to_str().unwrap()], 1);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("changed"));
}

#[test]
fn response_by_name_matches_response_by_index() {
    let dir = TempDir::new().unwrap();
    let input = toy_csv(dir.path(), false);
    let run = |r: &str| -> Value {
        serde_json::from_str(&ok(&["fit", "--input", input.to_str().unwrap(), "--response", r], 1)).unwrap()
    };
    let (by_name, by_index) = (run("y"), run("0"));
    assert_eq!(by_name["result"], by_index["result"]);
    assert_eq!(by_name["manifest"]["input"], by_index["manifest"]["input"]);
}

#[test]
fn constant_columns_are_flagged() {
    let dir = TempDir::new().unwrap();
    let input = toy_csv(dir.path(), true);
    let doc: Value =
        serde_json::from_str(&ok(&["fit", "--input", input.to_str().unwrap(), "--response", "y"], 1)).unwrap();
    assert_eq!(doc["manifest"]["input"]["constant_columns"], serde_json::json!([4]));
    assert!(doc["warnings"][0].as_str().unwrap().contains("`k`"));
}

#[test]
fn input_errors_exit_with_code_2() {
    let dir = TempDir::new().unwrap();
    let missing_cell = dir.path().join("gap.csv");
    std::fs::write(&missing_cell, "y,a\n1,2\n3,\n").unwrap();
    let ragged = dir.path().join("ragged.csv");
    std::fs::write(&ragged, "y,a\n1,2\n3,4,5\n").unwrap();
    let text = dir.path().join("text.csv");
    std::fs::write(&text, "y,a\n1,2\n3,abc\n").unwrap();
    let good = toy_csv(dir.path(), false);

    let cases: Vec<(Vec<&str>, &str)> = vec![
        (vec!["fit", "--input", "/nonexistent/data.csv", "--response", "y"], "cannot read"),
        (vec!["fit", "--input", missing_cell.to_str().unwrap(), "--response", "y"], "line 3, column a"),
        (vec!["fit", "--input", ragged.to_str().unwrap(), "--response", "y"], "expected 2 fields"),
        (vec!["fit", "--input", text.to_str().unwrap(), "--response", "y"], "`abc`"),
        (vec!["fit", "--input", good.to_str().unwrap(), "--response", "zz"], "not found"),
        (vec!["fit", "--input", good.to_str().unwrap(), "--response", "y", "--t1", "0"], "t1"),
        (vec!["select", "--input", good.to_str().unwrap(), "--response", "y", "--alpha", "2"], "alpha"),
        (vec!["simulate", "--scenario", "table9-mixhat"], "unknown scenario"),
        (vec!["fit", "--bogus"], "unexpected argument"),
    ];
    for (args, needle) in cases {
        let out = tdvs(&args, 1);
        let stderr = String::from_utf8_lossy(&out.stderr);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {stderr}");
        assert!(stderr.contains(needle), "{args:?}: {stderr}");
        assert!(out.stdout.is_empty());
    }
}

#[test]
fn scenario_file_is_accepted() {
    let dir = TempDir::new().unwrap();
    let spec = serde_json::json!({
        "name": "custom",
        "n": 40,
        "p": 3,
        "beta0_true": 0.5,
        "beta_true": [1.5, 0.0, 0.0],
        "covariates": {"kind": "independent"},
        "errors": {"kind": "gaussian", "mean": 0.0, "variance": 1.0},
        "replicates": 2,
        "seed": 9
    });
    let path = dir.path().join("scenario.json");
    std::fs::write(&path, spec.to_string()).unwrap();
    let doc: Value =
        serde_json::from_str(&ok(&["simulate", "--scenario-file", path.to_str().unwrap(), "--permutations", "20"], 1))
            .unwrap();
    assert_eq!(doc["result"]["scenario"]["name"], "custom");
    assert_eq!(doc["result"]["summary"]["completed"], 2);
}
