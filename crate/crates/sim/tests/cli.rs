//! The `jarvis-sim` binary: exit codes, outputs and determinism.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_jarvis-sim"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

const SMALL: &str = r#"
[run]
seed = 4
epochs = 12
warmup_epochs = 4
record_weight = 20

[budget]
cores = 0.5

[[query]]
kind = "s2sprobe"
policy = "jarvis"
"#;

fn repo_config(name: &str) -> String {
    format!("{}/../../configs/{name}", env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn run_writes_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let csv = dir.path().join("m.csv");
    let out = run(&["run", "--config", cfg.to_str().unwrap(), "--csv", csv.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("# jarvis-sim metrics v1\n"));
    assert_eq!(text.lines().count(), 2 + 12);
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["schema"], "jarvis-sim summary v1");
    for key in ["throughput_mbps", "latency_median_s", "latency_max_s", "convergence"] {
        assert!(summary.get(key).is_some(), "summary lacks {key}");
    }
}

#[test]
fn same_seed_same_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let csv = |name: &str, seed: &str| {
        let p = dir.path().join(name);
        let out = run(&["run", "--config", cfg.to_str().unwrap(), "--seed", seed, "--csv", p.to_str().unwrap()]);
        assert!(out.status.success());
        fs::read(p).unwrap()
    };
    let a = csv("a.csv", "9");
    assert_eq!(a, csv("b.csv", "9"));
    assert_ne!(a, csv("c.csv", "10"));
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.toml", &SMALL.replace("cores = 0.5", "cores = 0.5\nspeed = 2"));
    let out = run(&["run", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("speed"));

    let missing = dir.path().join("nope.toml");
    let out = run(&["run", "--config", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    let good = write(dir.path(), "good.toml", SMALL);
    let out = run(&["sweep", "--config", good.to_str().unwrap(), "--axis", "colour", "--values", "1"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unsettled_runs_exit_with_3_on_demand() {
    let dir = tempfile::tempdir().unwrap();
    // The budget changes one epoch before the end: nothing can settle.
    let text = SMALL.replace("cores = 0.5", "cores = 0.5\nsteps = [{ at_epoch = 11, cores = 0.1 }]");
    let cfg = write(dir.path(), "late.toml", &text);
    let out = run(&["run", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success());
    let out = run(&["run", "--config", cfg.to_str().unwrap(), "--require-convergence"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn sweep_and_compare() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let csv = dir.path().join("sweep.csv");
    let out = run(&[
        "sweep", "--config", cfg.to_str().unwrap(), "--axis", "cpu_budget", "--values", "20%,60%", "--policies",
        "jarvis,all-src", "--jobs", "2", "--out", csv.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("# jarvis-sim sweep v1\n"));
    assert_eq!(text.lines().count(), 2 + 4);

    let out = run(&["compare", "--config", cfg.to_str().unwrap(), "--policies", "jarvis,best-op"]);
    assert!(out.status.success());
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("best-op") && table.contains("ratio"));
    let out = run(&["compare", "--config", cfg.to_str().unwrap(), "--policies", "jarvis"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn solve_gen_and_explain() {
    let out = run(&["solve", "--instance", &repo_config("lp_instance.toml"), "--grid", "0.05"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["compute_used_cpu_s"].as_f64().unwrap() <= 0.8 + 1e-9);
    assert!(report["grid_drained_fraction"].is_number());

    let out = run(&["gen", "--kind", "loganalytics", "--epochs", "1", "--record-weight", "100"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("# jarvis-sim records v1\nevent_time_ms,window_id,line\n"));

    let out = run(&["explain-costs", "--config", &repo_config("s2s_budget80.toml")]);
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout).unwrap().contains("cores to run locally"));
}

#[test]
fn shipped_configs_parse() {
    for entry in fs::read_dir(format!("{}/../../configs", env!("CARGO_MANIFEST_DIR"))).unwrap() {
        let path = entry.unwrap().path();
        if path.file_name().unwrap() == "lp_instance.toml" {
            continue;
        }
        let cfg = jarvis_sim::SimConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        cfg.to_experiment().unwrap();
        assert_eq!(jarvis_sim::SimConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }
}
