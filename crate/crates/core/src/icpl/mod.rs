//! The iterative reward-program search loop: a generator proposes K reward
//! programs, each trains a policy, a selector (proxy metric or human) picks
//! the best and worst, and the next prompt carries feedback about them.
//!
//! Task metrics drive proxy selection and scoring only. They never enter a
//! prompt.

pub mod backend;
pub mod mock;
pub mod orchestrator;
pub mod prompt;
pub mod store;

pub use backend::{
    build_backend, digest, extract_program, BackendConfig, GenerationBackend, GenerationRequest, HttpChatBackend, MockBackend,
    API_BASE_VAR, API_KEY_VAR,
};
pub use mock::{mock_generate, MockConfig, MutationConfig};
pub use orchestrator::{
    advance, apply_final_pick, apply_human_selection, finalize, fts, improvement_curve, run_experiment_batch, run_iteration,
    run_session, sample_candidates, session_report, BatchReport, IterationSummary, RunSummary, Sampled, Session,
    SessionReport,
};
pub use prompt::{
    assemble_feedback_prompt, assemble_initial_prompt, Message, PromptBundle, Role, BAD_MARKER, DIFF_MARKER, GOOD_MARKER,
    REQUEST_MARKER, TRACE_MARKER,
};
pub use store::SessionStore;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envkit::{EnvError, EnvId};
use crate::optcore::{MetricCurve, OptError, PpoConfig};
use crate::prefcore::PrefError;
use crate::rewardlang::{parse, RewardProgram, RewardTrace};

#[derive(Debug, Error)]
pub enum IcplError {
    #[error("template slot `{0}` is unresolved")]
    TemplateSlotUnresolved(String),
    #[error("the latest iteration has no selection yet")]
    NoSelectionYet,
    #[error("feedback prompts are never built in open-loop mode")]
    OpenLoopMode,
    #[error("generation backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("no executable programs after {rounds} resampling rounds")]
    GenerationExhausted { rounds: usize },
    #[error("invalid selection: {0}")]
    InvalidSelection(String),
    #[error("selection targets iteration {got} but iteration {expected} is pending")]
    StaleIteration { expected: usize, got: usize },
    #[error("operation needs status {expected}, session is {actual}")]
    WrongStatus { expected: String, actual: SessionStatus },
    #[error("session has not finished")]
    NotFinished,
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("stored session is corrupt: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Train(#[from] OptError),
    #[error(transparent)]
    Pref(#[from] PrefError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("session storage: {0}")]
    Io(#[from] std::io::Error),
    #[error("session json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = IcplError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Proxy,
    Human,
}

/// Which feedback sections are included. `open_loop` disables feedback
/// altogether: every iteration reuses the initial prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationFlags {
    pub use_reward_trace: bool,
    pub use_diffs: bool,
    pub use_bad_example: bool,
    pub open_loop: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        AblationFlags {
            use_reward_trace: true,
            use_diffs: true,
            use_bad_example: true,
            open_loop: false,
        }
    }
}

impl AblationFlags {
    /// All eight combinations of the three section flags, loop closed.
    pub fn all_section_combinations() -> Vec<AblationFlags> {
        (0..8u8)
            .map(|m| AblationFlags {
                use_reward_trace: m & 1 != 0,
                use_diffs: m & 2 != 0,
                use_bad_example: m & 4 != 0,
                open_loop: false,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Generating,
    Training,
    AwaitingSelection,
    Finished,
}

impl std::fmt::Display for SessionStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SessionStatus::Generating => "generating",
            SessionStatus::Training => "training",
            SessionStatus::AwaitingSelection => "awaiting_selection",
            SessionStatus::Finished => "finished",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionSource {
    Proxy,
    Human,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub good: usize,
    pub bad: usize,
    pub source: SelectionSource,
}

/// One generate, train and select round. Programs are kept as canonical
/// source text; `candidates()` parses them back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 1-based.
    pub index: usize,
    pub programs: Vec<String>,
    pub resample_count: usize,
    pub traces: Vec<RewardTrace>,
    pub curves: Vec<MetricCurve>,
    /// Present iff the session runs in proxy mode and training finished.
    pub rts: Option<Vec<f64>>,
    pub selection: Option<Selection>,
}

impl IterationRecord {
    pub fn candidates(&self) -> Result<Vec<RewardProgram>> {
        self.programs
            .iter()
            .enumerate()
            .map(|(k, src)| {
                parse(src)
                    .map(|p| p.with_meta(self.index, k))
                    .map_err(|e| IcplError::Corrupt(format!("program {}_{k}: {e}", self.index)))
            })
            .collect()
    }

    pub fn candidate(&self, k: usize) -> Result<RewardProgram> {
        let src = self
            .programs
            .get(k)
            .ok_or_else(|| IcplError::Corrupt(format!("no candidate {k} in iteration {}", self.index)))?;
        parse(src)
            .map(|p| p.with_meta(self.index, k))
            .map_err(|e| IcplError::Corrupt(format!("program {}_{k}: {e}", self.index)))
    }

    pub fn is_trained(&self) -> bool {
        !self.programs.is_empty() && self.curves.len() == self.programs.len()
    }

    /// Score of a candidate's training run, available in both modes.
    pub fn curve_score(&self, k: usize) -> Option<f64> {
        self.curves.get(k).and_then(MetricCurve::rts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalOutcome {
    /// Task score of the run.
    pub ts: f64,
    /// Iteration (1-based) and candidate of the chosen program.
    pub iteration: usize,
    pub candidate: usize,
    pub program_id: String,
}

/// Result of a human selection, replayed verbatim for a repeated key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionAck {
    pub iteration: usize,
    pub good: usize,
    /// Absent for the final pick.
    pub bad: Option<usize>,
    pub status: SessionStatus,
    pub ledger_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IcplConfig {
    pub env: EnvId,
    /// Built-in task text for the environment when absent.
    pub task_description: Option<String>,
    pub k: usize,
    pub n: usize,
    pub mode: Mode,
    pub ablation: AblationFlags,
    pub seed: u64,
    pub train: PpoConfig,
    pub backend: BackendConfig,
    /// Resampling rounds per iteration before giving up.
    pub resample_cap: usize,
    /// Training threads; 0 means one per candidate.
    pub workers: usize,
}

impl Default for IcplConfig {
    fn default() -> Self {
        IcplConfig {
            env: EnvId::PointmassRun,
            task_description: None,
            k: 6,
            n: 5,
            mode: Mode::Proxy,
            ablation: AblationFlags::default(),
            seed: 0,
            train: PpoConfig {
                total_steps: 30_000,
                rollout_steps: 1024,
                eval_interval: 2048,
                eval_episodes: 5,
                trace_interval: 2048,
                ..PpoConfig::default()
            },
            backend: BackendConfig::default(),
            resample_cap: 10,
            workers: 0,
        }
    }
}

impl IcplConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(IcplError::ConfigInvalid(format!("K = {}; at least 2 candidates are needed", self.k)));
        }
        if self.n < 1 {
            return Err(IcplError::ConfigInvalid("N must be at least 1".into()));
        }
        if self.resample_cap < 1 {
            return Err(IcplError::ConfigInvalid("resample_cap must be at least 1".into()));
        }
        self.train
            .validate()
            .map_err(|e| IcplError::ConfigInvalid(e.to_string()))?;
        self.backend.validate()
    }

    /// Total charged queries of a completed session.
    pub fn query_budget(&self) -> Result<usize> {
        Ok(crate::prefcore::icpl_query_budget(self.k, self.n)?)
    }
}

/// Serializable session snapshot. The query ledger lives beside it in its
/// own append-only file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub id: String,
    pub config: IcplConfig,
    pub status: SessionStatus,
    pub records: Vec<IterationRecord>,
    /// Backend samples requested so far; the mock's call index.
    pub calls_made: u64,
    pub final_outcome: Option<FinalOutcome>,
    /// Idempotency key to acknowledgement.
    pub applied: BTreeMap<String, SelectionAck>,
}

impl SessionState {
    pub fn new(id: impl Into<String>, config: IcplConfig) -> Result<Self> {
        config.validate()?;
        Ok(SessionState {
            id: id.into(),
            config,
            status: SessionStatus::Generating,
            records: Vec::new(),
            calls_made: 0,
            final_outcome: None,
            applied: BTreeMap::new(),
        })
    }

    /// True while the human must make the final pick across iterations.
    pub fn awaiting_final_pick(&self) -> bool {
        self.status == SessionStatus::AwaitingSelection
            && self.records.len() == self.config.n
            && self.records.iter().all(|r| r.selection.is_some())
    }

    /// Good programs of all selected iterations, oldest first.
    pub fn selected_goods(&self) -> Vec<(&IterationRecord, usize)> {
        self.records
            .iter()
            .filter_map(|r| r.selection.map(|s| (r, s.good)))
            .collect()
    }

    /// Score of each iteration's selected good program.
    pub fn selected_scores(&self) -> Vec<f64> {
        self.selected_goods()
            .into_iter()
            .filter_map(|(r, g)| match &r.rts {
                Some(rts) => rts.get(g).copied(),
                None => r.curve_score(g),
            })
            .collect()
    }
}
