//! Explicit-Euler dynamics of the built-in environments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Action, EnvError, EnvId, EnvSpec, MetricId};

// Cartpole constants follow the classic control formulation.
const GRAVITY: f64 = 9.8;
const CART_MASS: f64 = 1.0;
const POLE_MASS: f64 = 0.1;
const POLE_HALF_LENGTH: f64 = 0.5;
const FORCE_MAG: f64 = 10.0;
const X_LIMIT: f64 = 2.4;
const THETA_LIMIT: f64 = 12.0 * std::f64::consts::PI / 180.0;

const RUN_FORCE: f64 = 2.0;
const RUN_DRAG: f64 = 0.5;
const TRACK_HALF_WIDTH: f64 = 2.0;

const HOVER_THRUST: f64 = 3.0;
const HOVER_DRAG: f64 = 0.8;
const HOVER_GRAVITY: f64 = 1.0;
/// Spawn radius around the target, in metres.
pub const HOVER_SPAWN_RADIUS: (f64, f64) = (0.5, 2.0);

/// Internal state of one environment instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub env: EnvId,
    pub seed: u64,
    /// `[x, x_dot, theta, theta_dot]` for cartpole, `[x, y, vx, vy]` otherwise.
    pub phys: [f64; 4],
    pub prev_x: f64,
    pub t: usize,
    pub finished: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// State features of the next state (policy input).
    pub observation: Vec<f64>,
    /// Full catalog: next-state features followed by action features.
    pub features: Vec<f64>,
    pub metric_increment: f64,
    pub terminated: bool,
    pub truncated: bool,
}

impl EnvState {
    pub fn observation(&self) -> Vec<f64> {
        let p = self.phys;
        match self.env {
            EnvId::CartpoleBalance => vec![p[0], p[1], p[2], p[3], p[2].cos()],
            EnvId::PointmassRun => vec![p[0], p[1], p[2], p[3], self.prev_x],
            EnvId::Hover2d => {
                let (dx, dy) = (-p[0], -p[1]);
                vec![p[0], p[1], p[2], p[3], dx, dy, dx.hypot(dy)]
            }
        }
    }
}

fn action_features(env: EnvId, action: &Action) -> Vec<f64> {
    match (env, action) {
        (EnvId::CartpoleBalance, Action::Discrete(a)) => {
            vec![if *a == 1 { 1.0 } else { -1.0 }, 1.0]
        }
        (_, Action::Continuous(a)) => vec![
            a.iter().map(|v| v.abs()).sum(),
            a.iter().map(|v| v * v).sum(),
        ],
        _ => unreachable!("action kind checked against the spec"),
    }
}

/// Starts an episode. The same `(spec, seed)` always yields the same state.
pub fn reset(spec: &EnvSpec, seed: u64) -> (EnvState, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phys = match spec.id {
        EnvId::CartpoleBalance => std::array::from_fn(|_| rng.random_range(-0.05..0.05)),
        EnvId::PointmassRun => [
            rng.random_range(-0.1..0.1),
            rng.random_range(-0.5..0.5),
            0.0,
            0.0,
        ],
        EnvId::Hover2d => {
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let radius = rng.random_range(HOVER_SPAWN_RADIUS.0..HOVER_SPAWN_RADIUS.1);
            [radius * angle.cos(), radius * angle.sin(), 0.0, 0.0]
        }
    };
    let state = EnvState {
        env: spec.id,
        seed,
        phys,
        prev_x: phys[0],
        t: 0,
        finished: false,
    };
    let obs = state.observation();
    (state, obs)
}

/// Advances one step of `spec.dt` seconds.
pub fn step(spec: &EnvSpec, state: &mut EnvState, action: &Action) -> Result<StepOutcome, EnvError> {
    if state.finished {
        return Err(EnvError::StepAfterDone);
    }
    if !spec.action_space.contains(action) {
        return Err(EnvError::PolicyShapeMismatch(format!(
            "action {action} outside {:?}",
            spec.action_space
        )));
    }
    let action = spec.action_space.clip(action);
    let dt = spec.dt;
    let [a, b, c, d] = state.phys;
    let x_before = a;
    let (phys, terminated) = match (spec.id, &action) {
        (EnvId::CartpoleBalance, Action::Discrete(act)) => {
            let (x, x_dot, theta, theta_dot) = (a, b, c, d);
            let force = if *act == 1 { FORCE_MAG } else { -FORCE_MAG };
            let (sin, cos) = theta.sin_cos();
            let total_mass = CART_MASS + POLE_MASS;
            let pm_len = POLE_MASS * POLE_HALF_LENGTH;
            let temp = (force + pm_len * theta_dot * theta_dot * sin) / total_mass;
            let theta_acc = (GRAVITY * sin - cos * temp)
                / (POLE_HALF_LENGTH * (4.0 / 3.0 - POLE_MASS * cos * cos / total_mass));
            let x_acc = temp - pm_len * theta_acc * cos / total_mass;
            let next = [
                x + dt * x_dot,
                x_dot + dt * x_acc,
                theta + dt * theta_dot,
                theta_dot + dt * theta_acc,
            ];
            let terminated = next[0].abs() > X_LIMIT || next[2].abs() > THETA_LIMIT;
            (next, terminated)
        }
        (EnvId::PointmassRun, Action::Continuous(u)) => {
            let (x, y, vx, vy) = (a, b, c, d);
            let ax = RUN_FORCE * u[0] - RUN_DRAG * vx;
            let ay = RUN_FORCE * u[1] - RUN_DRAG * vy;
            let next = [x + dt * vx, y + dt * vy, vx + dt * ax, vy + dt * ay];
            (next, next[1].abs() > TRACK_HALF_WIDTH)
        }
        (EnvId::Hover2d, Action::Continuous(u)) => {
            let (x, y, vx, vy) = (a, b, c, d);
            let ax = HOVER_THRUST * u[0] - HOVER_DRAG * vx;
            let ay = HOVER_THRUST * u[1] - HOVER_DRAG * vy - HOVER_GRAVITY;
            ([x + dt * vx, y + dt * vy, vx + dt * ax, vy + dt * ay], false)
        }
        _ => unreachable!("action kind checked against the spec"),
    };
    state.phys = phys;
    state.prev_x = x_before;
    state.t += 1;
    let truncated = !terminated && state.t >= spec.horizon;
    state.finished = terminated || truncated;

    let observation = state.observation();
    let metric_increment = match spec.metric_id {
        MetricId::Duration => {
            if terminated {
                0.0
            } else {
                1.0
            }
        }
        MetricId::DisplacementPerStep => phys[0] - x_before,
        MetricId::NegDistance => -(phys[0].hypot(phys[1])),
    };
    let mut features = observation.clone();
    features.extend(action_features(spec.id, &action));
    Ok(StepOutcome {
        observation,
        features,
        metric_increment,
        terminated,
        truncated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reset_is_deterministic() {
        let spec = EnvSpec::builtin(EnvId::CartpoleBalance);
        let (_, a) = reset(&spec, 0);
        let (_, b) = reset(&spec, 0);
        assert_eq!(a, b);
        let (_, c) = reset(&spec, 1);
        assert_ne!(a, c);
    }

    #[test]
    fn hover_spawn_support_matches_radius() {
        let spec = EnvSpec::builtin(EnvId::Hover2d);
        let dist_idx = spec.feature_index("dist_to_target").unwrap();
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for seed in 0..1000 {
            let (_, obs) = reset(&spec, seed);
            lo = lo.min(obs[dist_idx]);
            hi = hi.max(obs[dist_idx]);
        }
        assert!(lo >= 0.5 && hi <= 2.0, "support [{lo}, {hi}]");
        // The draw covers most of the interval.
        assert!(lo < 0.55 && hi > 1.95);
    }

    #[test]
    fn cartpole_surviving_step_scores_one() {
        let spec = EnvSpec::builtin(EnvId::CartpoleBalance);
        let (mut s, _) = reset(&spec, 0);
        let out = step(&spec, &mut s, &Action::Discrete(1)).unwrap();
        assert!(!out.terminated);
        assert_eq!(out.metric_increment, 1.0);
        assert_eq!(out.features.len(), spec.n_features());
    }

    #[test]
    fn pointmass_at_rest_does_not_move() {
        let spec = EnvSpec::builtin(EnvId::PointmassRun);
        let (mut s, _) = reset(&spec, 1);
        let out = step(&spec, &mut s, &Action::Continuous(vec![0.0, 0.0])).unwrap();
        assert_eq!(out.metric_increment, 0.0);
    }

    #[test]
    fn hover_at_target_scores_zero() {
        let spec = EnvSpec::builtin(EnvId::Hover2d);
        let (mut s, _) = reset(&spec, 3);
        // Thrust exactly cancels gravity, craft parked on the target.
        s.phys = [0.0, 0.0, 0.0, 0.0];
        let hold = HOVER_GRAVITY / HOVER_THRUST;
        let out = step(&spec, &mut s, &Action::Continuous(vec![0.0, hold])).unwrap();
        assert_eq!(out.metric_increment, 0.0);
    }

    #[test]
    fn step_after_done_is_an_error() {
        let spec = EnvSpec::builtin(EnvId::CartpoleBalance);
        let (mut s, _) = reset(&spec, 0);
        let mut n = 0;
        while !s.finished {
            step(&spec, &mut s, &Action::Discrete(0)).unwrap();
            n += 1;
        }
        assert!(n < spec.horizon);
        assert_eq!(
            step(&spec, &mut s, &Action::Discrete(0)),
            Err(EnvError::StepAfterDone)
        );
    }

    #[test]
    fn truncation_at_horizon() {
        let spec = EnvSpec::builtin(EnvId::Hover2d);
        let (mut s, _) = reset(&spec, 0);
        let mut last = None;
        for _ in 0..spec.horizon {
            last = Some(step(&spec, &mut s, &Action::Continuous(vec![0.0, 0.0])).unwrap());
        }
        let last = last.unwrap();
        assert!(last.truncated && !last.terminated);
        assert!(s.finished);
    }

    #[test]
    fn out_of_bounds_actions_are_clipped() {
        let spec = EnvSpec::builtin(EnvId::PointmassRun);
        let (mut a, _) = reset(&spec, 5);
        let mut b = a.clone();
        for _ in 0..3 {
            let oa = step(&spec, &mut a, &Action::Continuous(vec![9.0, -9.0])).unwrap();
            let ob = step(&spec, &mut b, &Action::Continuous(vec![1.0, -1.0])).unwrap();
            assert_eq!(oa, ob);
        }
    }
}
