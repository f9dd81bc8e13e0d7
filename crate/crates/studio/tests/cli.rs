//! The `icpl` binary end to end on tiny configurations.

use std::path::Path;
use std::process::{Command, Output};

use icpl_core::envkit::EnvId;
use icpl_core::icpl::IcplConfig;
use icpl_core::optcore::PpoConfig;
use icpl_studio::runs::BaselineRunConfig;
use serde_json::Value;

fn icpl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_icpl")).args(args).output().unwrap()
}

fn tiny_ppo() -> PpoConfig {
    PpoConfig {
        total_steps: 512,
        rollout_steps: 256,
        minibatch_size: 64,
        epochs: 2,
        eval_interval: 256,
        eval_episodes: 1,
        trace_interval: 128,
        hidden: vec![16],
        ..PpoConfig::default()
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) {
    std::fs::write(path, serde_json::to_vec_pretty(value).unwrap()).unwrap();
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn run_proxy_then_report_a_stored_session() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = IcplConfig {
        env: EnvId::PointmassRun,
        k: 2,
        n: 2,
        train: tiny_ppo(),
        workers: 1,
        ..IcplConfig::default()
    };
    let cfg_path = dir.path().join("proxy.json");
    write_json(&cfg_path, &cfg);
    let out_dir = dir.path().join("out");
    let out = icpl(&[
        "run-proxy",
        "--config",
        cfg_path.to_str().unwrap(),
        "--runs",
        "2",
        "--compare-open-loop",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    let report = stdout_json(&out);
    let runs = report["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 2);
    let best = runs.iter().map(|r| r["ts"].as_f64().unwrap()).fold(f64::MIN, f64::max);
    assert_eq!(report["fts"].as_f64().unwrap(), best);
    assert_eq!(report["open_loop_comparison"]["open_loop"], true);
    assert!(out_dir.join("report.json").is_file());

    let session = out_dir.join("run1");
    let first = icpl(&["report", "--session", session.to_str().unwrap()]);
    let second = icpl(&["report", "--session", session.to_str().unwrap()]);
    assert_eq!(stdout_json(&first)["ledger_used"], 3);
    assert_eq!(first.stdout, second.stdout);
}

#[test]
fn run_baseline_stays_within_its_budget() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = BaselineRunConfig::default();
    cfg.baseline.train.ppo = PpoConfig {
        total_steps: 2048,
        ..tiny_ppo()
    };
    cfg.baseline.preference.reward_training_interval = 512;
    cfg.baseline.preference.mb_size = 4;
    let path = dir.path().join("baseline.json");
    write_json(&path, &cfg);
    let out = icpl(&["run-baseline", "prefppo", "--config", path.to_str().unwrap(), "--budget", "6"]);
    let report = stdout_json(&out);
    assert_eq!(report["algorithm"], "prefppo");
    let run = &report["runs"][0];
    assert!(run["ledger_used"].as_u64().unwrap() <= 6);
    assert!(run["ledger_used"].as_u64().unwrap() > 0);
}

#[test]
fn bad_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"k": 1}"#).unwrap();
    let out = icpl(&["run-proxy", "--config", path.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("at least 2 candidates"));
    let out = icpl(&["report", "--session", "missing", "--data", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
    let out = icpl(&["run-baseline", "sac", "--config", "x", "--budget", "1"]);
    assert!(!out.status.success());
}
