use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn loadshift(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_loadshift")).args(args).output().expect("spawn loadshift")
}

fn ok(args: &[&str]) -> String {
    let out = loadshift(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Rows of a CSV file below its header.
fn rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|x| x.unwrap().iter().map(str::to_string).collect()).collect()
}

fn column_sum(rows: &[Vec<String>], col: usize) -> f64 {
    rows.iter().map(|r| r[col].parse::<f64>().unwrap()).sum()
}

fn train(consumer: &str, out: &Path, extra: &[&str]) {
    let scenario = data("table1.json");
    let placement = data("default_placement.json");
    let mut args = vec![
        "train",
        "--scenario",
        s(&scenario),
        "--consumer",
        consumer,
        "--placement",
        s(&placement),
        "--episodes",
        "2",
        "--out",
        s(out),
    ];
    args.extend_from_slice(extra);
    ok(&args);
}

#[test]
fn train_writes_a_complete_run() {
    let dir = tempfile::tempdir().unwrap();
    train("1", dir.path(), &["--checkpoint-every", "1"]);
    let run = dir.path().join("1");
    for f in ["manifest.json", "checkpoint.bin", "training_log.csv", "schedule.csv", "profile.csv", "evaluation.json"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let log = fs::read_to_string(run.join("training_log.csv")).unwrap();
    assert!(log.starts_with("episode,steps,total_reward,peak_kw,daily_cost_cents,epsilon\n"));
    assert_eq!(log.lines().count(), 3);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["episodes_completed"], 2);
    assert_eq!(manifest["agent"]["gamma"], 0.99);
}

#[test]
fn profile_export_conserves_energy() {
    let dir = tempfile::tempdir().unwrap();
    train("1", dir.path(), &[]);
    let run = dir.path().join("1");
    let csv = dir.path().join("p.csv");
    ok(&["export-profiles", "--run", s(&run), "--out", s(&csv)]);
    let r = rows(&csv);
    assert_eq!(r.len(), 24);
    // Consumer 1: 18.5 kWh fixed plus 6 kWh shiftable.
    assert_eq!(column_sum(&r, 1), 24.5);
    assert_eq!(column_sum(&r, 2), 24.5);
}

#[test]
fn evaluate_is_reproducible_from_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    train("2", dir.path(), &["--objective", "peak-cost", "--spread", "std"]);
    let run = dir.path().join("2");
    let first = fs::read_to_string(run.join("schedule.csv")).unwrap();
    ok(&["evaluate", "--run", s(&run)]);
    assert_eq!(fs::read_to_string(run.join("schedule.csv")).unwrap(), first);
}

#[test]
fn report_sums_consumers_into_an_all_row() {
    let dir = tempfile::tempdir().unwrap();
    let runs = dir.path().join("runs");
    train("all", &runs, &[]);
    let out = dir.path().join("report");
    let text = ok(&["report", "--runs", s(&runs), "--out", s(&out)]);
    assert!(text.contains("All"));
    let r = rows(&out.join("report.csv"));
    assert_eq!(r.len(), 6);
    let (individual, all) = r.split_at(5);
    // Columns: before_usd 5, rl_usd 6, oracle_usd 7, savings_usd 9.
    for col in [5, 6, 7, 9] {
        let sum = column_sum(individual, col);
        assert!((sum - all[0][col].parse::<f64>().unwrap()).abs() < 1e-9, "column {col}");
    }
    for row in &r {
        let saved = row[5].parse::<f64>().unwrap() - row[6].parse::<f64>().unwrap();
        assert!((saved - row[9].parse::<f64>().unwrap()).abs() < 1e-9);
        assert_eq!(row[8], "exact");
    }
    // Default placement: 270 c/day for Consumer 1, $81.00 a month.
    assert_eq!(individual[0][5], "81.00");
}

#[test]
fn single_run_report_has_one_row() {
    let dir = tempfile::tempdir().unwrap();
    train("3", dir.path(), &[]);
    let out = dir.path().join("report");
    ok(&["report", "--runs", s(&dir.path().join("3")), "--out", s(&out)]);
    assert_eq!(rows(&out.join("report.csv")).len(), 1);
}

#[test]
fn aggregate_before_peak_is_peak_of_summed_profiles() {
    let dir = tempfile::tempdir().unwrap();
    train("aggregate", dir.path(), &[]);
    let aggregate = rows(&dir.path().join("aggregate").join("profile.csv"));
    let mut summed = [0.0f64; 24];
    let each = tempfile::tempdir().unwrap();
    train("all", each.path(), &[]);
    for id in ["1", "2", "3", "4", "5"] {
        for (h, r) in rows(&each.path().join(id).join("profile.csv")).iter().enumerate() {
            summed[h] += r[1].parse::<f64>().unwrap();
        }
    }
    let before: Vec<f64> = aggregate.iter().map(|r| r[1].parse().unwrap()).collect();
    assert_eq!(before, summed.to_vec());
}

#[test]
fn oracle_writes_exact_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = data("table1.json");
    let placement = data("default_placement.json");
    let text = ok(&[
        "oracle",
        "--scenario",
        s(&scenario),
        "--consumer",
        "1",
        "--objective",
        "min-peak",
        "--placement",
        s(&placement),
        "--out",
        s(dir.path()),
    ]);
    assert!(text.contains("exact peak 2.0 kW"), "{text}");
    let sched = rows(&dir.path().join("schedule.csv"));
    assert_eq!(sched.len(), 4);
    assert!(sched.iter().all(|r| r[2] == "exact"));
    let profile = rows(&dir.path().join("profile.csv"));
    assert_eq!(profile.iter().map(|r| r[2].parse::<f64>().unwrap()).fold(0.0, f64::max), 2.0);
}

#[test]
fn empty_schedule_leaves_profile_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("fixed.json");
    fs::write(
        &scenario,
        r#"{"tariff": [{"start": 0, "end": 24, "cents_per_kwh": 10}],
            "consumers": [{"id": "f", "appliances": [
              {"name": "Fridge", "powers_kw": [0.5], "shiftable": false, "preferred_start": 0, "duration_h": 24}]}]}"#,
    )
    .unwrap();
    ok(&["train", "--scenario", s(&scenario), "--consumer", "f", "--episodes", "1", "--out", s(dir.path())]);
    let profile = rows(&dir.path().join("f").join("profile.csv"));
    assert!(profile.iter().all(|r| r[1] == r[2] && r[1] == "0.5"));
}

#[test]
fn ablation_tabulates_each_variant() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = data("table1.json");
    let placement = data("default_placement.json");
    ok(&[
        "ablate",
        "--study",
        "buffer-size",
        "--sizes",
        "100,500",
        "--scenario",
        s(&scenario),
        "--consumer",
        "4",
        "--placement",
        s(&placement),
        "--episodes",
        "1",
        "--out",
        s(dir.path()),
    ]);
    let r = rows(&dir.path().join("ablation.csv"));
    let variants: Vec<&str> = r.iter().map(|x| x[1].as_str()).collect();
    assert_eq!(variants, ["buffer_100", "buffer_500"]);
}

#[test]
fn failures_exit_nonzero_with_a_json_error_line() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = data("table1.json");
    let cases: Vec<Vec<&str>> = vec![
        vec!["train", "--scenario", s(&scenario), "--consumer", "9", "--episodes", "1", "--out", s(dir.path())],
        vec!["report", "--runs", s(dir.path()), "--out", s(dir.path())],
        vec!["evaluate", "--run", s(dir.path())],
        vec!["train", "--scenario", s(&scenario), "--consumer", "1", "--episodes", "1", "--out", s(dir.path())],
    ];
    for args in cases {
        let out = loadshift(&args);
        assert!(!out.status.success(), "{args:?} should fail");
        let line = String::from_utf8(out.stderr).unwrap();
        let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap_or_else(|_| panic!("not JSON: {line}"));
        assert!(v["error"].as_str().is_some_and(|e| !e.is_empty()));
    }
}

#[test]
fn bad_flags_are_rejected() {
    let out = loadshift(&["train", "--objective", "cheapest"]);
    assert!(!out.status.success());
}
