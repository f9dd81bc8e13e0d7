use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{reset, step, Action, EnvError, EnvId, EnvSpec, Policy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    /// Full feature catalog after the transition (next state + action features).
    pub features: Vec<f64>,
    pub action: Action,
    pub metric_increment: f64,
    /// True only on a terminating step; truncation at the horizon leaves it false.
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub env_id: EnvId,
    pub seed: u64,
    /// State features at reset; the policy input of the first step.
    pub initial_observation: Vec<f64>,
    pub steps: Vec<TrajectoryStep>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Episodic sparse return: the sum of metric increments.
    pub fn metric_total(&self) -> f64 {
        self.steps.iter().map(|s| s.metric_increment).sum()
    }

    /// The observation the policy acted on at step `t`.
    pub fn observation_before(&self, t: usize, state_dim: usize) -> &[f64] {
        if t == 0 {
            &self.initial_observation
        } else {
            &self.steps[t - 1].features[..state_dim]
        }
    }
}

/// Per-episode action sampling stream, decorrelated from the reset stream.
pub(crate) fn action_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5_5A5A_C3C3_3C3C)
}

/// Runs one episode to termination or the horizon.
pub fn rollout_episode<P: Policy + ?Sized>(
    spec: &EnvSpec,
    policy: &P,
    seed: u64,
) -> Result<Trajectory, EnvError> {
    policy.check_compatible(spec)?;
    let mut rng = action_rng(seed);
    let (mut state, mut obs) = reset(spec, seed);
    let initial_observation = obs.clone();
    let mut steps = Vec::new();
    while !state.finished {
        let action = policy.sample(&obs, &mut rng);
        let out = step(spec, &mut state, &action)?;
        steps.push(TrajectoryStep {
            features: out.features,
            action,
            metric_increment: out.metric_increment,
            done: out.terminated,
        });
        obs = out.observation;
    }
    Ok(Trajectory {
        env_id: spec.id,
        seed,
        initial_observation,
        steps,
    })
}

/// `n_episodes` episodes seeded `seed, seed + 1, ...`.
pub fn rollout<P: Policy + ?Sized>(
    spec: &EnvSpec,
    policy: &P,
    n_episodes: usize,
    seed: u64,
) -> Result<Vec<Trajectory>, EnvError> {
    policy.check_compatible(spec)?;
    (0..n_episodes as u64)
        .map(|i| rollout_episode(spec, policy, seed.wrapping_add(i)))
        .collect()
}

/// Mean episodic sparse return over a batch from one environment.
pub fn compute_task_metric(trajectories: &[Trajectory]) -> Result<f64, EnvError> {
    let first = trajectories.first().ok_or(EnvError::EmptyBatch)?;
    if trajectories.iter().any(|t| t.env_id != first.env_id) {
        return Err(EnvError::MixedBatch);
    }
    let total: f64 = trajectories.iter().map(Trajectory::metric_total).sum();
    Ok(total / trajectories.len() as f64)
}

/// Policy-dependent part of the trajectory log-likelihood, `Σ_t ln π(a_t | s_t)`.
///
/// Initial-state and transition terms are omitted: the dynamics are
/// deterministic given the seed, so they do not depend on the policy.
pub fn trajectory_log_prob<P: Policy + ?Sized>(
    spec: &EnvSpec,
    policy: &P,
    trajectory: &Trajectory,
) -> Result<f64, EnvError> {
    policy.check_compatible(spec)?;
    let state_dim = spec.state_dim();
    let mut total = 0.0;
    for (t, s) in trajectory.steps.iter().enumerate() {
        let lp = policy.log_prob(trajectory.observation_before(t, state_dim), &s.action);
        if lp == f64::NEG_INFINITY || lp.is_nan() {
            return Err(EnvError::ZeroProbabilityAction {
                step: t,
                action: s.action.to_string(),
            });
        }
        total += lp;
    }
    Ok(total)
}
