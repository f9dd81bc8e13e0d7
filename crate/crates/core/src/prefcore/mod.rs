//! Preference learning: teachers, a Bradley-Terry reward-model ensemble,
//! query selection, the query-budget ledger and the PrefPPO, PEBBLE and
//! SURF experiment drivers.
//!
//! A preference between two full trajectories is modelled as
//! `P[σ1 ≻ σ0] = exp(S1) / (exp(S0) + exp(S1))` where `S` is the summed
//! predicted reward over the trajectory.

pub mod baselines;
pub mod ledger;
pub mod model;
pub mod sampling;
pub mod teacher;

pub use baselines::{run_pebble, run_prefppo, run_surf, BaselineConfig, BaselineOutcome, PreferenceConfig};
pub use ledger::{LedgerEntry, QueryLedger};
pub use model::{
    bradley_terry, preference_loss, train_reward_model, train_reward_model_report, FeatureScaler, RewardEnsemble, RewardTrainConfig, RewardTrainReport,
    TrainingPair,
};
pub use sampling::{disagreement_sample, pseudo_labels_from_probs, select_by_disagreement, surf_pseudo_label};
pub use teacher::{dense_oracle_program, teacher_label, trajectory_id, HumanChannel, Teacher, TeacherKind, TrajectoryRecord};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envkit::EnvError;
use crate::optcore::OptError;

#[derive(Debug, Error)]
pub enum PrefError {
    #[error("query budget of {budget} exhausted")]
    BudgetExhausted { budget: usize },
    #[error("degenerate configuration: {0}")]
    DegenerateConfig(String),
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("pool of {pool} pairs is smaller than the requested {mbsize}")]
    PoolTooSmall { pool: usize, mbsize: usize },
    #[error("trajectories come from different environments")]
    EnvMismatch,
    #[error("human channel closed: {0}")]
    ChannelClosed(String),
    #[error("ledger file: {0}")]
    Io(#[from] std::io::Error),
    #[error("ledger entry: {0}")]
    Corrupt(#[from] serde_json::Error),
    #[error(transparent)]
    Opt(#[from] OptError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// Who produced a label. Pseudo labels never reach the ledger.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelSource {
    OracleDense,
    OracleSparse,
    Human,
    Pseudo,
}

/// Query budget matching the iterative loop's human effort for `k`
/// candidates over `n` iterations: `(k - 1) * 2n - 1`.
pub fn icpl_query_budget(k: usize, n: usize) -> Result<usize, PrefError> {
    if k < 2 || n < 1 {
        return Err(PrefError::DegenerateConfig(format!("K = {k}, N = {n}; need K >= 2 and N >= 1")));
    }
    Ok((k - 1) * 2 * n - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn query_budget() {
        assert_eq!(icpl_query_budget(6, 5).unwrap(), 49);
        assert_eq!(icpl_query_budget(2, 1).unwrap(), 1);
        assert_eq!(icpl_query_budget(4, 3).unwrap(), 17);
        assert!(matches!(icpl_query_budget(1, 5), Err(PrefError::DegenerateConfig(_))));
        assert!(matches!(icpl_query_budget(4, 0), Err(PrefError::DegenerateConfig(_))));
    }
}
