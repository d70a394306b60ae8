use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn civitrace(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_civitrace"))
        .args(args)
        .output()
        .expect("spawn civitrace")
}

fn small_config(dir: &Path, body: &str) -> String {
    let path = dir.join("scenario.json");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_owned()
}

const SMALL: &str = r#"{
  "n_agents": 120, "width": 8, "height": 8, "workplaces": 12,
  "shared_space_cells": [[2, 2], [5, 5]], "horizon_days": 30,
  "intervention": "contact+location"
}"#;

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn simulate_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), SMALL);
    let out = dir.path().join("run");
    let res = civitrace(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0), "{}", stderr(&res));
    for f in ["metrics.csv", "hotspots.json", "events.log", "summary.json"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 31);
}

#[test]
fn invalid_probability_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), r#"{"adoption": 1.5}"#);
    let res = civitrace(&["simulate", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    assert!(stderr(&res).contains("adoption"), "{}", stderr(&res));
    assert!(!dir.path().join("o").exists());
}

#[test]
fn malformed_json_reports_position() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "{\n  \"seed\": 3,\n  \"n_agents\": oops\n}");
    let res = civitrace(&["simulate", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    assert!(stderr(&res).contains("line 3"), "{}", stderr(&res));
}

#[test]
fn unknown_mode_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let res = civitrace(&["simulate", "--mode", "bluetooth", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), SMALL);
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let res = civitrace(&["simulate", "--config", &cfg, "--seed", "9", "--out", out.to_str().unwrap()]);
        assert_eq!(res.status.code(), Some(0));
        runs.push(out);
    }
    for f in ["metrics.csv", "hotspots.json", "events.log", "summary.json"] {
        assert_eq!(fs::read(runs[0].join(f)).unwrap(), fs::read(runs[1].join(f)).unwrap(), "{f}");
    }
}

#[test]
fn seed_and_mode_flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), SMALL);
    let out = dir.path().join("run");
    let res = civitrace(&[
        "simulate", "--config", &cfg, "--seed", "4", "--mode", "contact", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(0));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["seed"], 4);
    assert_eq!(summary["config"]["intervention"], "contact");
    assert_eq!(summary["metrics"]["location_uploads"], 0);
}

#[test]
fn sweep_writes_one_row_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("sweep.json");
    let base = SMALL.replace("30", "10");
    fs::write(&spec, format!(r#"{{"base": {base}, "adoption": [0.0, 0.5, 1.0], "seeds": [1, 2]}}"#)).unwrap();
    let out = dir.path().join("s");
    let res = civitrace(&["sweep", "--config", spec.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0), "{}", stderr(&res));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 6);
}

#[test]
fn trace_demo_forced_colocation_gives_one_exposure() {
    let dir = tempfile::tempdir().unwrap();
    let res = civitrace(&["trace-demo", "--users", "2", "--colocation", "forced", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0));
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("trace.json")).unwrap()).unwrap();
    assert_eq!(doc["decentralized"][0]["events"].as_array().unwrap().len(), 1);
    assert_eq!(doc["centralized_notified"], serde_json::json!([1]));
}

#[test]
fn trace_demo_without_colocation_gives_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let res = civitrace(&["trace-demo", "--users", "2", "--colocation", "never", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0));
    assert!(stdout(&res).contains("user 1: 0 exposure(s)"));
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("trace.json")).unwrap()).unwrap();
    assert_eq!(doc["centralized_notified"], serde_json::json!([]));
}

#[test]
fn trace_demo_modes_agree_across_seeds() {
    for seed in 1..=5 {
        let dir = tempfile::tempdir().unwrap();
        let seed = seed.to_string();
        let res = civitrace(&["trace-demo", "--users", "12", "--seed", &seed, "--out", dir.path().to_str().unwrap()]);
        assert_eq!(res.status.code(), Some(0), "seed {seed}: {}", stdout(&res));
        let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("trace.json")).unwrap()).unwrap();
        assert_eq!(doc["modes_agree"], true);
    }
}

#[test]
fn trace_demo_needs_two_users() {
    let dir = tempfile::tempdir().unwrap();
    let res = civitrace(&["trace-demo", "--users", "1", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn aggregate_demo_matches_plaintext() {
    for (n, d) in [("1", "4"), ("3", "2"), ("50", "1000")] {
        let dir = tempfile::tempdir().unwrap();
        let res = civitrace(&["aggregate-demo", "--participants", n, "--dimension", d, "--out", dir.path().to_str().unwrap()]);
        assert_eq!(res.status.code(), Some(0), "n={n} D={d}");
        let csv = fs::read_to_string(dir.path().join("aggregate.csv")).unwrap();
        for line in csv.lines().skip(1) {
            let cols: Vec<&str> = line.split(',').collect();
            assert_eq!(cols[1], cols[2]);
        }
    }
}

#[test]
fn aggregate_demo_rejects_zero_participants() {
    let dir = tempfile::tempdir().unwrap();
    let res = civitrace(&["aggregate-demo", "--participants", "0", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn coarsen_demo_is_monotone_in_grid_size() {
    let dir = tempfile::tempdir().unwrap();
    let res = civitrace(&["coarsen-demo", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("coarsen.csv")).unwrap();
    let rows: Vec<Vec<f64>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
        .collect();
    for a in &rows {
        for b in &rows {
            // Coarser or equal on both axes never yields more cells or visits.
            if b[0] >= a[0] && b[1] >= a[1] {
                assert!(b[2] <= a[2] && b[3] <= a[3], "{a:?} vs {b:?}");
            }
        }
    }
}

#[test]
fn demos_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let run = |sub: &str, name: &str| {
        let out = dir.path().join(name);
        let res = civitrace(&[sub, "--seed", "3", "--out", out.to_str().unwrap()]);
        assert_eq!(res.status.code(), Some(0));
        out
    };
    for (sub, file) in [("trace-demo", "trace.json"), ("aggregate-demo", "aggregate.csv"), ("coarsen-demo", "coarsen.csv")] {
        let a = run(sub, &format!("{sub}-a"));
        let b = run(sub, &format!("{sub}-b"));
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{sub}");
    }
}
