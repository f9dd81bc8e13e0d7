//! On-disk session layout:
//!
//! ```text
//! {root}/state.json
//! {root}/ledger.jsonl
//! {root}/programs/{iter}_{k}.reward   (+ {iter}_{k}.json sidecar)
//! {root}/traces/{iter}_{k}.json
//! {root}/curves/{iter}_{k}.json
//! {root}/replays/{iter}_{k}.json
//! ```
//!
//! Every file is written to a temporary name and renamed, so a reader never
//! sees a partial file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use super::{IcplError, Result, SessionState};
use crate::envkit::{import_replay, ReplayDocument};
use crate::optcore::MetricCurve;
use crate::rewardlang::RewardTrace;

#[derive(Debug, Clone)]
pub struct SessionStore {
    root: PathBuf,
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

impl SessionStore {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(SessionStore { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn state_path(&self) -> PathBuf {
        self.root.join("state.json")
    }

    pub fn ledger_path(&self) -> PathBuf {
        self.root.join("ledger.jsonl")
    }

    fn file(&self, dir: &str, iter: usize, k: usize, ext: &str) -> PathBuf {
        self.root.join(dir).join(format!("{iter}_{k}.{ext}"))
    }

    pub fn program_path(&self, iter: usize, k: usize) -> PathBuf {
        self.file("programs", iter, k, "reward")
    }

    pub fn trace_path(&self, iter: usize, k: usize) -> PathBuf {
        self.file("traces", iter, k, "json")
    }

    pub fn curve_path(&self, iter: usize, k: usize) -> PathBuf {
        self.file("curves", iter, k, "json")
    }

    pub fn replay_path(&self, iter: usize, k: usize) -> PathBuf {
        self.file("replays", iter, k, "json")
    }

    pub fn has_state(&self) -> bool {
        self.state_path().exists()
    }

    pub fn save_state(&self, state: &SessionState) -> Result<()> {
        write_atomic(&self.state_path(), serde_json::to_string_pretty(state)?.as_bytes())
    }

    pub fn load_state(&self) -> Result<SessionState> {
        read_json(&self.state_path())
    }

    pub fn write_program(&self, iter: usize, k: usize, source: &str, resample_count: usize) -> Result<()> {
        write_atomic(&self.program_path(iter, k), source.as_bytes())?;
        let sidecar = json!({
            "id": format!("{iter}_{k}"),
            "iteration": iter,
            "sample_index": k,
            "iteration_resample_count": resample_count,
        });
        write_atomic(
            &self.file("programs", iter, k, "json"),
            serde_json::to_string_pretty(&sidecar)?.as_bytes(),
        )
    }

    pub fn write_trace(&self, iter: usize, k: usize, trace: &RewardTrace) -> Result<()> {
        write_atomic(&self.trace_path(iter, k), serde_json::to_string(trace)?.as_bytes())
    }

    pub fn read_trace(&self, iter: usize, k: usize) -> Result<RewardTrace> {
        read_json(&self.trace_path(iter, k))
    }

    pub fn write_curve(&self, iter: usize, k: usize, curve: &MetricCurve) -> Result<()> {
        write_atomic(&self.curve_path(iter, k), serde_json::to_string(curve)?.as_bytes())
    }

    pub fn read_curve(&self, iter: usize, k: usize) -> Result<MetricCurve> {
        read_json(&self.curve_path(iter, k))
    }

    pub fn write_replay(&self, iter: usize, k: usize, doc: &ReplayDocument) -> Result<()> {
        write_atomic(&self.replay_path(iter, k), doc.to_json().as_bytes())
    }

    pub fn read_replay_bytes(&self, iter: usize, k: usize) -> Result<Vec<u8>> {
        Ok(fs::read(self.replay_path(iter, k))?)
    }

    pub fn read_replay(&self, iter: usize, k: usize) -> Result<ReplayDocument> {
        Ok(import_replay(&self.read_replay_bytes(iter, k)?)?)
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| IcplError::Corrupt(format!("{}: {e}", path.display())))
}

/// Pretty JSON with a trailing newline, the format of exported reports.
pub fn to_report_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}
