//! Numerical training stack: networks with manual gradients, Adam, GAE,
//! the k-NN entropy bonus, PPO and a fixed-temperature soft actor-critic.

pub mod adam;
pub mod config;
pub mod curve;
pub mod entropy;
pub mod gae;
pub mod gradcheck;
pub mod nn;
pub mod normalize;
pub mod offpolicy;
pub mod policy;
pub mod ppo;

pub use adam::{clip_grad_norm, Adam};
pub use config::{OffPolicyConfig, PpoConfig, TrainConfig, UnsupervisedConfig};
pub use curve::{CurveSample, MetricCurve};
pub use entropy::state_entropy_reward;
pub use gae::{gae, gae_bootstrapped};
pub use gradcheck::{grad_check, GRAD_CHECK_COORDS};
pub use nn::{tanh_in_place, Activation, Layer, Mlp, Workspace};
pub use normalize::{ReturnScaler, RunningStandardizer};
pub use offpolicy::{discrete_actor_loss, offpolicy_train, squashed_actor_loss, OffPolicyLearner, ReplayBuffer};
pub use policy::{Deterministic, PolicyBatch, PolicyKind, PolicySpec, LOG_STD_MAX, LOG_STD_MIN};
pub use ppo::{evaluate_policy, ppo_train, value_loss, BatchReward, EntropyBonus, EpisodeEnd, PpoLearner, RewardSource, Rollout, TrainOutcome, UpdateStats};

use thiserror::Error;

use crate::envkit::EnvError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("batch of {batch} too small for k = {k}")]
    BatchTooSmall { batch: usize, k: usize },
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// SplitMix64 finalizer over a pair; derives independent stream seeds.
pub(crate) fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
