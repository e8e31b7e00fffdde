use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use blocksale::{InstanceSpec, Prototype};
use serde_json::Value;
use tempfile::tempdir;

fn blocksale(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blocksale")).args(args).output().unwrap()
}

fn write_instance(dir: &Path, steps: usize, total: usize) -> String {
    let path = dir.join(format!("T{steps}-N{total}.json"));
    let json = serde_json::json!({ "T": steps, "N": total, "prices": vec![100.0; steps] });
    fs::write(&path, json.to_string()).unwrap();
    path.to_str().unwrap().to_string()
}

fn lines(out: &Output) -> Vec<Value> {
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn solve_fire_sale_closed_form() {
    let dir = tempdir().unwrap();
    let inst = write_instance(dir.path(), 10, 100);
    let out = blocksale(&["solve", "--instance", &inst, "--alg", "fire-sale"]);
    assert!(out.status.success());
    let result = &lines(&out)[0];
    let eta = Prototype::Arctan.inverse(0.99) / 100.0;
    let expected = (100.0 - 90.0 * Prototype::Arctan.value(eta * 100.0)) * 100.0;
    assert_eq!(result["algorithm"], "fire-sale");
    assert!((result["value"].as_f64().unwrap() - expected).abs() < 1e-9);
    assert_eq!(result["x"][0], 100);
    assert_eq!(result["status"], "heuristic");
    assert!(result["wall_ms"].is_number());
}

#[test]
fn solve_two_step_matches_exact() {
    let dir = tempdir().unwrap();
    let inst = write_instance(dir.path(), 100, 10_000);
    let out = blocksale(&[
        "solve", "--instance", &inst, "--alg", "two-step", "--grain", "100", "--lambda", "5",
        "--alg", "exact",
    ]);
    assert!(out.status.success());
    let results = lines(&out);
    assert_eq!(results[0]["value"], results[1]["value"]);
    assert_eq!(results[1]["status"], "optimal");
}

#[test]
fn exit_codes() {
    let dir = tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"T": 5, "N": 3, "prices": [1, 1, 1, 1, 1]}"#).unwrap();
    let out = blocksale(&["solve", "--instance", bad.to_str().unwrap(), "--alg", "exact"]);
    assert_eq!(out.status.code(), Some(2));

    let inst = write_instance(dir.path(), 100, 10_000);
    let out = blocksale(&["solve", "--instance", &inst, "--alg", "exact", "--memory-limit", "1024"]);
    assert_eq!(out.status.code(), Some(4));
    let out = blocksale(&["solve", "--instance", &inst, "--alg", "exact", "--time-limit", "0.001"]);
    assert_eq!(out.status.code(), Some(3));

    let out = blocksale(&["solve", "--instance", &inst, "--alg", "simplex"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bench_writes_tables() {
    let dir = tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    let out = blocksale(&[
        "bench", "--size", "1,2", "--prototype", "arctan", "--alg", "fire-sale", "--alg", "uniform",
        "--alg", "exact", "--alg", "upper-bound", "--out", out_dir,
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let md = fs::read_to_string(dir.path().join("bench.md")).unwrap();
    assert!(md.contains("| 10 | 100 | 20.42 | 7.81 | <ε | 38.19 |"), "{md}");
    let csv = fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    let jsonl = fs::read_to_string(dir.path().join("bench.jsonl")).unwrap();
    let ub: Value = serde_json::from_str(jsonl.lines().last().unwrap()).unwrap();
    assert_eq!(ub["bound"]["convexity_ok"], true);
}

#[test]
fn bench_without_algorithms_is_header_only() {
    let dir = tempdir().unwrap();
    let out = blocksale(&["bench", "--size", "1,2", "--alg", "none", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success());
    let csv = fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1);
    assert!(csv.starts_with("instance_id,T,N,prototype"));
}

#[test]
fn calibrate_small_grid() {
    let dir = tempdir().unwrap();
    let out = blocksale(&[
        "calibrate", "--size", "1,2", "--prototype", "rational", "--H", "0.75", "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let md = fs::read_to_string(dir.path().join("calibration.md")).unwrap();
    assert!(md.contains("| 10 | 100 | 33.44 | 0.84 |"), "{md}");
    assert!(md.contains("### eta=1"));
}

#[test]
fn simulate_then_solve() {
    let dir = tempdir().unwrap();
    let csv = dir.path().join("prices.csv");
    let out = blocksale(&["simulate", "--mu", "-0.05", "--sigma", "0.7", "--seed", "3", "--out", csv.to_str().unwrap()]);
    assert!(out.status.success());
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next(), Some("price"));
    assert_eq!(text.lines().count(), 1001);

    let inst = dir.path().join("inst.json");
    let out = blocksale(&[
        "simulate", "--steps", "10", "--total", "1000", "--prototype", "sqrt", "--seed", "3",
        "--out", inst.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let spec = InstanceSpec::from_json(&fs::read_to_string(&inst).unwrap()).unwrap();
    assert_eq!(spec.prototype, Prototype::Sqrt);
    assert_eq!(spec.prices.as_ref().unwrap().len(), 10);

    let out = blocksale(&["solve", "--instance", inst.to_str().unwrap(), "--alg", "exact", "--alg", "ils"]);
    assert!(out.status.success());
    let results = lines(&out);
    assert!(results[0]["value"].as_f64() >= results[1]["value"].as_f64());
}

#[test]
fn generator_seed_override() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("gen.json");
    let json = r#"{"T": 10, "N": 200, "generator": {"mu": 0.05, "sigma": 0.25, "seed": 1}}"#;
    fs::write(&path, json).unwrap();
    let run = |seed: &str| {
        let out = blocksale(&["solve", "--instance", path.to_str().unwrap(), "--alg", "uniform", "--seed", seed]);
        assert!(out.status.success());
        lines(&out)[0]["value"].as_f64().unwrap()
    };
    assert_eq!(run("1"), run("1"));
    assert_ne!(run("1"), run("2"));
}
