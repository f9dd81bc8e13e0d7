//! Unattended runs behind the `run-proxy` and `run-baseline` commands.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context};
use icpl_core::envkit::{EnvId, EnvSpec};
use icpl_core::icpl::store::to_report_json;
use icpl_core::icpl::{run_experiment_batch, BatchReport, IcplConfig};
use icpl_core::prefcore::{run_pebble, run_prefppo, run_surf, BaselineConfig, Teacher, TeacherKind};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Prefppo,
    Pebble,
    Surf,
}

/// Config file of `run-baseline`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineRunConfig {
    pub env: EnvId,
    pub seed: u64,
    /// Must be an oracle; human labels are collected through sessions.
    pub teacher: TeacherKind,
    /// Seeds `seed`, `seed + 1`, and so on.
    pub runs: usize,
    pub baseline: BaselineConfig,
}

impl Default for BaselineRunConfig {
    fn default() -> Self {
        BaselineRunConfig {
            env: EnvId::CartpoleBalance,
            seed: 0,
            teacher: TeacherKind::OracleDense,
            runs: 1,
            baseline: BaselineConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRun {
    pub seed: u64,
    pub final_metric: Option<f64>,
    pub rts: Option<f64>,
    pub ledger_used: usize,
    pub reward_updates: usize,
    pub final_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub algorithm: Algorithm,
    pub env: EnvId,
    pub budget: usize,
    pub runs: Vec<BaselineRun>,
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}

/// Runs the baseline once per seed. Ledgers go to `out/run{r}.ledger.jsonl`
/// when `out` is given.
pub fn run_baseline(
    algorithm: Algorithm,
    cfg: &BaselineRunConfig,
    budget: usize,
    out: Option<&Path>,
) -> anyhow::Result<BaselineReport> {
    if cfg.runs == 0 {
        bail!("runs must be at least 1");
    }
    let spec = EnvSpec::builtin(cfg.env);
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
    }
    let mut runs = Vec::with_capacity(cfg.runs);
    for r in 0..cfg.runs {
        let seed = cfg.seed.wrapping_add(r as u64);
        let mut teacher = Teacher::oracle(cfg.teacher, &spec)?;
        let ledger_path = out.map(|d| d.join(format!("run{r}.ledger.jsonl")));
        let run = match algorithm {
            Algorithm::Prefppo => run_prefppo,
            Algorithm::Pebble => run_pebble,
            Algorithm::Surf => run_surf,
        };
        let outcome = run(&spec, &mut teacher, budget, &cfg.baseline, seed, ledger_path.as_deref())?;
        runs.push(BaselineRun {
            seed,
            final_metric: outcome.curve.final_metric(),
            rts: outcome.curve.rts(),
            ledger_used: outcome.ledger.used(),
            reward_updates: outcome.updates,
            final_accuracy: outcome.final_accuracy,
        });
    }
    let report = BaselineReport {
        algorithm,
        env: cfg.env,
        budget,
        runs,
    };
    if let Some(dir) = out {
        fs::write(dir.join("report.json"), to_report_json(&report)?)?;
    }
    Ok(report)
}

/// Proxy-mode batch; sessions and `report.json` go under `out` when given.
pub fn run_proxy(cfg: &IcplConfig, runs: usize, compare_open_loop: bool, out: Option<&Path>) -> anyhow::Result<BatchReport> {
    let report = run_experiment_batch(cfg, runs, compare_open_loop, out)?;
    if let Some(dir) = out {
        fs::write(dir.join("report.json"), to_report_json(&report)?)?;
    }
    Ok(report)
}
