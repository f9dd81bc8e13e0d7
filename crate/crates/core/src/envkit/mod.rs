//! Small deterministic control environments.
//!
//! Each environment exposes a catalog of named scalar features. The first
//! `state_dim` entries describe the state and form the policy input; the
//! remaining entries are derived from the action taken on that step. Reward
//! programs and reward models see the full catalog.

mod dynamics;
mod replay;
mod trajectory;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dynamics::{reset, step, EnvState, StepOutcome};
pub use replay::{export_replay, import_replay, Body, Frame, ReplayDocument};
pub use trajectory::{
    compute_task_metric, rollout, rollout_episode, trajectory_log_prob, Trajectory, TrajectoryStep,
};

pub const DEFAULT_DT: f64 = 0.02;
pub const DEFAULT_HORIZON: usize = 500;
pub const DEFAULT_GAMMA: f64 = 0.99;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("step called on a finished episode")]
    StepAfterDone,
    #[error("empty trajectory batch")]
    EmptyBatch,
    #[error("trajectories come from different environments")]
    MixedBatch,
    #[error("policy does not match the environment: {0}")]
    PolicyShapeMismatch(String),
    #[error("action {action} has zero probability at step {step}")]
    ZeroProbabilityAction { step: usize, action: String },
    #[error("replay schema violation: {0}")]
    SchemaViolation(String),
    #[error("invalid environment spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvId {
    CartpoleBalance,
    PointmassRun,
    Hover2d,
}

impl EnvId {
    pub const ALL: [EnvId; 3] = [EnvId::CartpoleBalance, EnvId::PointmassRun, EnvId::Hover2d];

    pub fn as_str(self) -> &'static str {
        match self {
            EnvId::CartpoleBalance => "cartpole_balance",
            EnvId::PointmassRun => "pointmass_run",
            EnvId::Hover2d => "hover2d",
        }
    }

    pub fn parse(s: &str) -> Option<EnvId> {
        EnvId::ALL.into_iter().find(|id| id.as_str() == s)
    }
}

impl std::fmt::Display for EnvId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    State,
    Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub description: String,
    pub bounds: Option<(f64, f64)>,
    pub kind: FeatureKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSpace {
    Discrete(usize),
    Continuous { low: Vec<f64>, high: Vec<f64> },
}

/// Kind and dimensionality of an action space, ignoring bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionShape {
    Discrete(usize),
    Continuous(usize),
}

impl ActionSpace {
    pub fn shape(&self) -> ActionShape {
        match self {
            ActionSpace::Discrete(n) => ActionShape::Discrete(*n),
            ActionSpace::Continuous { low, .. } => ActionShape::Continuous(low.len()),
        }
    }

    /// Continuous actions are clipped to the bounds; discrete actions are
    /// returned as-is.
    pub fn clip(&self, action: &Action) -> Action {
        match (self, action) {
            (ActionSpace::Continuous { low, high }, Action::Continuous(a)) => Action::Continuous(
                a.iter()
                    .zip(low.iter().zip(high))
                    .map(|(&v, (&lo, &hi))| if v.is_nan() { 0.0 } else { v.clamp(lo, hi) })
                    .collect(),
            ),
            _ => action.clone(),
        }
    }

    pub fn contains(&self, action: &Action) -> bool {
        match (self, action) {
            (ActionSpace::Discrete(n), Action::Discrete(a)) => a < n,
            (ActionSpace::Continuous { low, .. }, Action::Continuous(a)) => a.len() == low.len(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Action::Discrete(a) => write!(f, "{a}"),
            Action::Continuous(v) => write!(f, "{v:?}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricId {
    Duration,
    DisplacementPerStep,
    NegDistance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub id: EnvId,
    pub feature_catalog: Vec<FeatureSpec>,
    pub action_space: ActionSpace,
    pub horizon: usize,
    pub dt: f64,
    pub gamma: f64,
    pub metric_id: MetricId,
}

fn feat(name: &str, description: &str, lo: f64, hi: f64, kind: FeatureKind) -> FeatureSpec {
    FeatureSpec {
        name: name.to_string(),
        description: description.to_string(),
        bounds: Some((lo, hi)),
        kind,
    }
}

impl EnvSpec {
    /// Built-in specification for `id`.
    pub fn builtin(id: EnvId) -> EnvSpec {
        use FeatureKind::{Action as A, State as S};
        let (feature_catalog, action_space, metric_id) = match id {
            EnvId::CartpoleBalance => (
                vec![
                    feat("x", "cart position along the track (m)", -2.4, 2.4, S),
                    feat("x_dot", "cart velocity (m/s)", -3.0, 3.0, S),
                    feat("theta", "pole angle from vertical (rad)", -0.2095, 0.2095, S),
                    feat("theta_dot", "pole angular velocity (rad/s)", -3.5, 3.5, S),
                    feat("upright", "cosine of the pole angle", 0.978, 1.0, S),
                    feat("force", "applied force direction, -1 (left) or +1 (right)", -1.0, 1.0, A),
                    feat("action_l1", "absolute value of the applied force direction", 1.0, 1.0, A),
                ],
                ActionSpace::Discrete(2),
                MetricId::Duration,
            ),
            EnvId::PointmassRun => (
                vec![
                    feat("x", "forward position (m)", -10.0, 50.0, S),
                    feat("y", "lateral position; the track ends at |y| > 2", -2.0, 2.0, S),
                    feat("vx", "forward velocity (m/s)", -4.0, 4.0, S),
                    feat("vy", "lateral velocity (m/s)", -4.0, 4.0, S),
                    feat("prev_x", "forward position on the previous step (m)", -10.0, 50.0, S),
                    feat("action_l1", "sum of absolute action components", 0.0, 2.0, A),
                    feat("action_sq", "sum of squared action components", 0.0, 2.0, A),
                ],
                ActionSpace::Continuous {
                    low: vec![-1.0; 2],
                    high: vec![1.0; 2],
                },
                MetricId::DisplacementPerStep,
            ),
            EnvId::Hover2d => (
                vec![
                    feat("x", "horizontal position (m)", -6.0, 6.0, S),
                    feat("y", "vertical position (m)", -6.0, 6.0, S),
                    feat("vx", "horizontal velocity (m/s)", -4.0, 4.0, S),
                    feat("vy", "vertical velocity (m/s)", -4.0, 4.0, S),
                    feat("dx", "target x minus craft x (m)", -6.0, 6.0, S),
                    feat("dy", "target y minus craft y (m)", -6.0, 6.0, S),
                    feat("dist_to_target", "euclidean distance to the target (m)", 0.0, 8.5, S),
                    feat("action_l1", "sum of absolute thrust components", 0.0, 2.0, A),
                    feat("action_sq", "sum of squared thrust components", 0.0, 2.0, A),
                ],
                ActionSpace::Continuous {
                    low: vec![-1.0; 2],
                    high: vec![1.0; 2],
                },
                MetricId::NegDistance,
            ),
        };
        EnvSpec {
            id,
            feature_catalog,
            action_space,
            horizon: DEFAULT_HORIZON,
            dt: DEFAULT_DT,
            gamma: DEFAULT_GAMMA,
            metric_id,
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let mut seen = std::collections::HashSet::new();
        for f in &self.feature_catalog {
            if f.name.is_empty() {
                return Err(EnvError::InvalidSpec("empty feature name".into()));
            }
            if !seen.insert(f.name.as_str()) {
                return Err(EnvError::InvalidSpec(format!("duplicate feature {}", f.name)));
            }
            if let Some((lo, hi)) = f.bounds {
                if !(lo <= hi) {
                    return Err(EnvError::InvalidSpec(format!("bad bounds on {}", f.name)));
                }
            }
        }
        if self.feature_catalog[self.state_dim()..]
            .iter()
            .any(|f| f.kind != FeatureKind::Action)
        {
            return Err(EnvError::InvalidSpec("state features must precede action features".into()));
        }
        if self.horizon == 0 {
            return Err(EnvError::InvalidSpec("horizon must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(EnvError::InvalidSpec("gamma must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Number of state features (the policy input width).
    pub fn state_dim(&self) -> usize {
        self.feature_catalog
            .iter()
            .take_while(|f| f.kind == FeatureKind::State)
            .count()
    }

    pub fn n_features(&self) -> usize {
        self.feature_catalog.len()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_catalog.iter().position(|f| f.name == name)
    }

    pub fn feature_names(&self) -> impl Iterator<Item = &str> {
        self.feature_catalog.iter().map(|f| f.name.as_str())
    }

    /// Name→value view of a full feature vector.
    pub fn observation_map(&self, features: &[f64]) -> std::collections::BTreeMap<String, f64> {
        self.feature_names()
            .zip(features)
            .map(|(n, &v)| (n.to_string(), v))
            .collect()
    }

    pub fn action_dim(&self) -> usize {
        match &self.action_space {
            ActionSpace::Discrete(_) => 1,
            ActionSpace::Continuous { low, .. } => low.len(),
        }
    }
}

/// Anything that maps state observations to actions.
pub trait Policy {
    fn observation_dim(&self) -> usize;
    fn action_shape(&self) -> ActionShape;
    fn sample(&self, observation: &[f64], rng: &mut dyn RngCore) -> Action;
    /// `ln π(action | observation)`; `-inf` when the action is impossible.
    fn log_prob(&self, observation: &[f64], action: &Action) -> f64;

    fn check_compatible(&self, spec: &EnvSpec) -> Result<(), EnvError> {
        if self.observation_dim() != spec.state_dim() {
            return Err(EnvError::PolicyShapeMismatch(format!(
                "policy expects {} inputs, {} has {}",
                self.observation_dim(),
                spec.id,
                spec.state_dim()
            )));
        }
        if self.action_shape() != spec.action_space.shape() {
            return Err(EnvError::PolicyShapeMismatch(format!(
                "policy emits {:?}, {} expects {:?}",
                self.action_shape(),
                spec.id,
                spec.action_space.shape()
            )));
        }
        Ok(())
    }
}

/// Uniform over the discrete actions, or uniform inside the continuous box.
#[derive(Debug, Clone)]
pub struct UniformRandomPolicy {
    observation_dim: usize,
    space: ActionSpace,
}

impl UniformRandomPolicy {
    pub fn new(spec: &EnvSpec) -> Self {
        UniformRandomPolicy {
            observation_dim: spec.state_dim(),
            space: spec.action_space.clone(),
        }
    }
}

impl Policy for UniformRandomPolicy {
    fn observation_dim(&self) -> usize {
        self.observation_dim
    }

    fn action_shape(&self) -> ActionShape {
        self.space.shape()
    }

    fn sample(&self, _observation: &[f64], rng: &mut dyn RngCore) -> Action {
        use rand::Rng;
        match &self.space {
            ActionSpace::Discrete(n) => Action::Discrete(rng.random_range(0..*n)),
            ActionSpace::Continuous { low, high } => Action::Continuous(
                low.iter()
                    .zip(high)
                    .map(|(&lo, &hi)| lo + (hi - lo) * rng.random::<f64>())
                    .collect(),
            ),
        }
    }

    fn log_prob(&self, _observation: &[f64], action: &Action) -> f64 {
        match (&self.space, action) {
            (ActionSpace::Discrete(n), Action::Discrete(a)) if a < n => -(*n as f64).ln(),
            (ActionSpace::Continuous { low, high }, Action::Continuous(a)) => {
                let inside = a
                    .iter()
                    .zip(low.iter().zip(high))
                    .all(|(&v, (&lo, &hi))| v >= lo && v <= hi);
                if inside {
                    -low.iter().zip(high).map(|(lo, hi)| (hi - lo).ln()).sum::<f64>()
                } else {
                    f64::NEG_INFINITY
                }
            }
            _ => f64::NEG_INFINITY,
        }
    }
}
