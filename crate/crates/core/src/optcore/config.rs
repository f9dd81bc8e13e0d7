use serde::{Deserialize, Serialize};

use super::OptError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub clip: f64,
    pub gae_lambda: f64,
    pub gamma: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub learning_rate: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    pub total_steps: usize,
    pub rollout_steps: usize,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub hidden: Vec<usize>,
    pub normalize_observations: bool,
    pub scale_rewards: bool,
    pub trace_interval: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip: 0.2,
            gae_lambda: 0.95,
            gamma: 0.99,
            epochs: 4,
            minibatch_size: 64,
            learning_rate: 3e-4,
            entropy_coef: 0.01,
            max_grad_norm: 0.5,
            total_steps: 200_000,
            rollout_steps: 2048,
            eval_interval: 8192,
            eval_episodes: 10,
            hidden: vec![64, 64],
            normalize_observations: true,
            scale_rewards: true,
            trace_interval: crate::rewardlang::DEFAULT_TRACE_INTERVAL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OffPolicyConfig {
    pub replay_capacity: usize,
    pub batch_size: usize,
    /// Polyak factor for target critics.
    pub tau: f64,
    /// Fixed entropy weight (no temperature tuning).
    pub entropy_weight: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub gamma: f64,
    pub total_steps: usize,
    /// Uniform-random steps before the first gradient update.
    pub learning_starts: usize,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub hidden: Vec<usize>,
}

impl Default for OffPolicyConfig {
    fn default() -> Self {
        OffPolicyConfig {
            replay_capacity: 100_000,
            batch_size: 64,
            tau: 0.005,
            entropy_weight: 0.05,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            gamma: 0.99,
            total_steps: 50_000,
            learning_starts: 1000,
            eval_interval: 5000,
            eval_episodes: 10,
            hidden: vec![64, 64],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnsupervisedConfig {
    /// Fraction of total steps spent on entropy pretraining.
    pub pretrain_fraction: f64,
    pub k: usize,
}

impl Default for UnsupervisedConfig {
    fn default() -> Self {
        UnsupervisedConfig {
            pretrain_fraction: 0.1,
            k: 5,
        }
    }
}

impl UnsupervisedConfig {
    pub fn pretrain_steps(&self, total_steps: usize) -> usize {
        (self.pretrain_fraction * total_steps as f64).round() as usize
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub ppo: PpoConfig,
    pub offpolicy: OffPolicyConfig,
    pub unsupervised: UnsupervisedConfig,
}

fn check(ok: bool, what: &str) -> Result<(), OptError> {
    if ok {
        Ok(())
    } else {
        Err(OptError::ConfigInvalid(what.to_string()))
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), OptError> {
        check(self.clip > 0.0 && self.clip < 1.0, "clip must lie in (0, 1)")?;
        check((0.0..=1.0).contains(&self.gae_lambda), "gae_lambda must lie in [0, 1]")?;
        check((0.0..1.0).contains(&self.gamma), "gamma must lie in [0, 1)")?;
        check(
            self.epochs > 0
                && self.minibatch_size > 0
                && self.total_steps > 0
                && self.rollout_steps > 0
                && self.eval_interval > 0
                && self.eval_episodes > 0
                && self.trace_interval > 0,
            "counts must be positive",
        )?;
        check(self.minibatch_size <= self.rollout_steps, "minibatch larger than rollout")?;
        check(self.learning_rate > 0.0 && self.learning_rate.is_finite(), "learning_rate must be positive")?;
        check(self.entropy_coef >= 0.0 && self.max_grad_norm > 0.0, "coefficients out of range")?;
        check(!self.hidden.is_empty() && self.hidden.iter().all(|&h| h > 0), "hidden widths must be positive")
    }
}

impl OffPolicyConfig {
    pub fn validate(&self) -> Result<(), OptError> {
        check((0.0..1.0).contains(&self.gamma), "gamma must lie in [0, 1)")?;
        check(self.tau > 0.0 && self.tau <= 1.0, "tau must lie in (0, 1]")?;
        check(self.entropy_weight >= 0.0, "entropy_weight must be non-negative")?;
        check(
            self.replay_capacity > 0
                && self.batch_size > 0
                && self.total_steps > 0
                && self.eval_interval > 0
                && self.eval_episodes > 0,
            "counts must be positive",
        )?;
        check(self.actor_lr > 0.0 && self.critic_lr > 0.0, "learning rates must be positive")?;
        check(!self.hidden.is_empty() && self.hidden.iter().all(|&h| h > 0), "hidden widths must be positive")
    }
}

impl UnsupervisedConfig {
    pub fn validate(&self) -> Result<(), OptError> {
        check((0.0..1.0).contains(&self.pretrain_fraction), "pretrain_fraction must lie in [0, 1)")?;
        check(self.k > 0, "k must be positive")
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), OptError> {
        self.ppo.validate()?;
        self.offpolicy.validate()?;
        self.unsupervised.validate()
    }
}
