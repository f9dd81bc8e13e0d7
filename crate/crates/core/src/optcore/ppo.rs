//! Proximal policy optimization with a split collect/update cycle so that
//! callers can supply rewards computed after the fact.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{clip_grad_norm, Adam};
use super::config::PpoConfig;
use super::curve::{CurveSample, MetricCurve};
use super::entropy::state_entropy_reward;
use super::gae::gae_bootstrapped;
use super::nn::{Mlp, Workspace};
use super::normalize::{ReturnScaler, RunningStandardizer};
use super::policy::{PolicyBatch, PolicySpec};
use super::{mix_seed, OptError};
use crate::envkit::{
    compute_task_metric, reset, rollout_episode, step, EnvSpec, EnvState, Trajectory, TrajectoryStep,
};
use crate::rewardlang::{CompiledProgram, RewardProgram, RewardTrace, TraceRecorder};
use crate::Scalar;

/// Per-step rewards for rows of the full feature catalog.
pub trait BatchReward {
    fn rewards(&self, features: &[f64], n: usize) -> Vec<f64>;
}

pub enum RewardSource<'a> {
    Program(&'a RewardProgram),
    /// The environment's own task-metric increments.
    Metric,
    Model(&'a dyn BatchReward),
    /// k-NN state entropy over each rollout's standardized next states.
    StateEntropy { k: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeEnd {
    /// Index of the episode's final step within the rollout.
    pub index: usize,
    pub metric_total: f64,
}

/// Transitions gathered by one `collect` call.
#[derive(Debug, Clone, Default)]
pub struct Rollout {
    /// Normalized observations the policy acted on.
    pub obs: Vec<f64>,
    pub actions: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    /// Post-step feature rows.
    pub features: Vec<f64>,
    pub n_features: usize,
    pub metric: Vec<f64>,
    /// Episode boundary after the step (termination or truncation).
    pub dones: Vec<bool>,
    pub truncated: Vec<bool>,
    /// `V(s_T)` for truncated steps, zero elsewhere.
    pub terminal_values: Vec<f64>,
    pub last_value: f64,
    pub episodes: Vec<EpisodeEnd>,
    /// Completed episodes, when the learner keeps them.
    pub trajectories: Vec<Trajectory>,
    /// Learner step count before the first transition.
    pub start_step: usize,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_probs.is_empty()
    }

    pub fn feature_row(&self, t: usize) -> &[f64] {
        &self.features[t * self.n_features..(t + 1) * self.n_features]
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

pub struct PpoLearner {
    spec: EnvSpec,
    cfg: PpoConfig,
    seed: u64,
    policy: PolicySpec<f64>,
    value: Mlp<f64>,
    opt_net: Adam<f64>,
    opt_log_std: Adam<f64>,
    opt_value: Adam<f64>,
    ret_scaler: ReturnScaler,
    rng: ChaCha8Rng,
    env: EnvState,
    obs: Vec<f64>,
    episodes_started: u64,
    partial: Option<Trajectory>,
    ep_metric: f64,
    /// Keep completed episodes in each rollout.
    pub keep_trajectories: bool,
    steps: usize,
    curve: MetricCurve,
    ws_pi: Workspace<f64>,
    ws_v: Workspace<f64>,
}

const EVAL_SALT: u64 = 0xE7A1_0000_0000_0001;

/// Mean task metric of the stochastic policy over `episodes` seeded episodes.
pub fn evaluate_policy(spec: &EnvSpec, policy: &PolicySpec<f64>, episodes: usize, seed: u64) -> Result<f64, OptError> {
    let trajs = (0..episodes)
        .map(|j| rollout_episode(spec, policy, mix_seed(seed ^ EVAL_SALT, j as u64)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(compute_task_metric(&trajs)?)
}

impl PpoLearner {
    pub fn new(spec: &EnvSpec, cfg: &PpoConfig, seed: u64) -> Result<Self, OptError> {
        cfg.validate()?;
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut policy = PolicySpec::new(spec, &cfg.hidden, &mut rng);
        if cfg.normalize_observations {
            policy.obs_norm = Some(RunningStandardizer::new(spec.state_dim(), 10.0));
        }
        let mut sizes = vec![spec.state_dim()];
        sizes.extend_from_slice(&cfg.hidden);
        sizes.push(1);
        let value = Mlp::new(&sizes, 1.0, &mut rng);
        let (env, obs) = reset(spec, mix_seed(seed, 0));
        Ok(PpoLearner {
            spec: spec.clone(),
            cfg: cfg.clone(),
            seed,
            opt_net: Adam::new(policy.net.n_params(), cfg.learning_rate),
            opt_log_std: Adam::new(policy.log_std.len(), cfg.learning_rate),
            opt_value: Adam::new(value.n_params(), cfg.learning_rate),
            policy,
            value,
            ret_scaler: ReturnScaler::new(cfg.gamma),
            rng,
            partial: None,
            ep_metric: 0.0,
            env,
            obs,
            episodes_started: 1,
            keep_trajectories: false,
            steps: 0,
            curve: MetricCurve::default(),
            ws_pi: Workspace::new(),
            ws_v: Workspace::new(),
        })
    }

    pub fn steps_done(&self) -> usize {
        self.steps
    }

    pub fn curve(&self) -> &MetricCurve {
        &self.curve
    }

    pub fn policy(&self) -> &PolicySpec<f64> {
        &self.policy
    }

    pub fn config(&self) -> &PpoConfig {
        &self.cfg
    }

    fn value_of(&mut self, x: &[f64]) -> f64 {
        self.value.forward_batch(x, 1, &mut self.ws_v);
        self.ws_v.output()[0]
    }

    fn new_partial(&self) -> Option<Trajectory> {
        self.keep_trajectories.then(|| Trajectory {
            env_id: self.spec.id,
            seed: self.env.seed,
            initial_observation: self.obs.clone(),
            steps: Vec::new(),
        })
    }

    pub fn evaluate(&self) -> Result<f64, OptError> {
        evaluate_policy(&self.spec, &self.policy, self.cfg.eval_episodes, self.seed)
    }

    /// Runs `n` environment steps with the current policy. Evaluates and
    /// extends the curve whenever the step count hits the eval interval.
    pub fn collect(&mut self, n: usize) -> Result<Rollout, OptError> {
        let nf = self.spec.n_features();
        let ad = self.policy.action_dim();
        let mut r = Rollout {
            n_features: nf,
            start_step: self.steps,
            ..Default::default()
        };
        r.obs.reserve(n * self.spec.state_dim());
        r.features.reserve(n * nf);
        if self.keep_trajectories && self.partial.is_none() {
            self.partial = self.new_partial();
        }
        for t in 0..n {
            if let Some(norm) = self.policy.obs_norm.as_mut() {
                norm.update(&self.obs);
            }
            let x = self.policy.normalize_obs(&self.obs);
            self.policy.net.forward_batch(&x, 1, &mut self.ws_pi);
            let (a, logp) = self.policy.sample_from_head(self.ws_pi.output(), &mut self.rng);
            let v = self.value_of(&x);
            let action = self.policy.to_action(&a);
            let out = step(&self.spec, &mut self.env, &action)?;
            debug_assert_eq!(a.len(), ad);
            r.obs.extend_from_slice(&x);
            r.actions.extend_from_slice(&a);
            r.log_probs.push(logp);
            r.values.push(v);
            r.features.extend_from_slice(&out.features);
            r.metric.push(out.metric_increment);
            let done = out.terminated || out.truncated;
            r.dones.push(done);
            let trunc = out.truncated && !out.terminated;
            r.truncated.push(trunc);
            r.terminal_values.push(if trunc {
                let xn = self.policy.normalize_obs(&out.observation);
                self.value_of(&xn)
            } else {
                0.0
            });
            if let Some(p) = self.partial.as_mut() {
                p.steps.push(TrajectoryStep {
                    features: out.features,
                    action,
                    metric_increment: out.metric_increment,
                    done: out.terminated,
                });
            }
            self.steps += 1;
            self.ep_metric += out.metric_increment;
            if done {
                let metric_total = std::mem::take(&mut self.ep_metric);
                if let Some(p) = self.partial.take() {
                    r.trajectories.push(p);
                }
                r.episodes.push(EpisodeEnd { index: t, metric_total });
                let (env, obs) = reset(&self.spec, mix_seed(self.seed, self.episodes_started));
                self.episodes_started += 1;
                self.env = env;
                self.obs = obs;
                self.partial = self.new_partial();
            } else {
                self.obs = out.observation;
            }
            if self.steps.is_multiple_of(self.cfg.eval_interval) {
                let m = self.evaluate()?;
                self.curve.push(self.steps, m);
            }
        }
        let x = self.policy.normalize_obs(&self.obs);
        r.last_value = self.value_of(&x);
        Ok(r)
    }

    /// One PPO update on a collected rollout with caller-supplied rewards.
    pub fn update(&mut self, r: &Rollout, rewards: &[f64]) -> Result<UpdateStats, OptError> {
        let n = r.len();
        if rewards.len() != n {
            return Err(OptError::LengthMismatch(format!("{} rewards for {n} steps", rewards.len())));
        }
        if let Some(i) = rewards.iter().position(|v| !v.is_finite()) {
            return Err(OptError::NonFinite(format!("reward at step {}", r.start_step + i + 1)));
        }
        let gamma = self.cfg.gamma;
        let mut rew = if self.cfg.scale_rewards {
            self.ret_scaler.scale(rewards, &r.dones)
        } else {
            rewards.to_vec()
        };
        for t in 0..n {
            if r.truncated[t] {
                rew[t] += gamma * r.terminal_values[t];
            }
        }
        let adv = gae_bootstrapped(&rew, &r.values, &r.dones, r.last_value, gamma, self.cfg.gae_lambda)?;
        let returns: Vec<f64> = adv.iter().zip(&r.values).map(|(a, v)| a + v).collect();
        let od = self.spec.state_dim();
        let ad = self.policy.action_dim();
        let mb = self.cfg.minibatch_size.min(n);
        let mut idx: Vec<usize> = (0..n).collect();
        let mut stats = UpdateStats::default();
        let mut batches = 0.0;
        let (mut obs_b, mut act_b, mut lp_b, mut adv_b, mut ret_b) = (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let n_net = self.policy.net.n_params();
        for _ in 0..self.cfg.epochs {
            idx.shuffle(&mut self.rng);
            for chunk in idx.chunks(mb) {
                obs_b.clear();
                act_b.clear();
                lp_b.clear();
                adv_b.clear();
                ret_b.clear();
                for &i in chunk {
                    obs_b.extend_from_slice(&r.obs[i * od..(i + 1) * od]);
                    act_b.extend_from_slice(&r.actions[i * ad..(i + 1) * ad]);
                    lp_b.push(r.log_probs[i]);
                    adv_b.push(adv[i]);
                    ret_b.push(returns[i]);
                }
                let m = chunk.len() as f64;
                if chunk.len() > 1 {
                    let mean = adv_b.iter().sum::<f64>() / m;
                    let std = (adv_b.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / m).sqrt();
                    adv_b.iter_mut().for_each(|a| *a = (*a - mean) / (std + 1e-8));
                }
                let mut g = vec![0.0; n_net + self.policy.log_std.len()];
                let (gn, gls) = g.split_at_mut(n_net);
                let batch = PolicyBatch {
                    obs: &obs_b,
                    actions: &act_b,
                    old_log_prob: &lp_b,
                    advantages: &adv_b,
                };
                let s = self.policy.surrogate_loss(
                    &batch,
                    self.cfg.clip,
                    self.cfg.entropy_coef,
                    &mut self.ws_pi,
                    gn,
                    gls,
                );
                if !s.loss.is_finite() || g.iter().any(|v| !v.is_finite()) {
                    return Err(OptError::NonFinite(format!("policy loss after {} steps", self.steps)));
                }
                clip_grad_norm(&mut g, self.cfg.max_grad_norm);
                let (gn, gls) = g.split_at(n_net);
                self.opt_net.step(self.policy.net.params_mut(), gn);
                self.opt_log_std.step(&mut self.policy.log_std, gls);

                let mut gv = vec![0.0; self.value.n_params()];
                let vloss = value_loss(&self.value, &obs_b, &ret_b, &mut self.ws_v, &mut gv);
                if !vloss.is_finite() {
                    return Err(OptError::NonFinite(format!("value loss after {} steps", self.steps)));
                }
                clip_grad_norm(&mut gv, self.cfg.max_grad_norm);
                self.opt_value.step(self.value.params_mut(), &gv);

                stats.policy_loss += s.loss;
                stats.value_loss += vloss;
                stats.entropy += s.entropy;
                stats.approx_kl += s.approx_kl;
                stats.clip_fraction += s.clip_fraction;
                batches += 1.0;
            }
        }
        stats.policy_loss /= batches;
        stats.value_loss /= batches;
        stats.entropy /= batches;
        stats.approx_kl /= batches;
        stats.clip_fraction /= batches;
        Ok(stats)
    }

    /// Adds a final evaluation if the curve does not end at the current step.
    pub fn finish_curve(&mut self) -> Result<(), OptError> {
        if self.curve.samples.last().map(|s| s.env_step) != Some(self.steps) && self.steps > 0 {
            let m = self.evaluate()?;
            self.curve.push(self.steps, m);
        }
        Ok(())
    }

    pub fn into_parts(self) -> (PolicySpec<f64>, MetricCurve) {
        (self.policy, self.curve)
    }
}

/// Half mean squared error of a scalar value head against `returns`;
/// accumulates the gradient into `grad`.
pub fn value_loss<T: Scalar>(net: &Mlp<T>, obs: &[T], returns: &[T], ws: &mut Workspace<T>, grad: &mut [T]) -> T {
    let n = returns.len();
    let m = T::of(n as f64);
    net.forward_batch(obs, n, ws);
    let mut loss = T::zero();
    let d: Vec<T> = ws
        .output()
        .iter()
        .zip(returns)
        .map(|(&v, &ret)| {
            loss += T::of(0.5) * (v - ret) * (v - ret) / m;
            (v - ret) / m
        })
        .collect();
    net.backward(ws, &d, grad, None);
    loss
}

pub struct TrainOutcome {
    pub policy: PolicySpec<f64>,
    pub curve: MetricCurve,
    /// Present when training on a reward program.
    pub trace: Option<RewardTrace>,
}

/// Computes rewards for a rollout from a fixed source, feeding the trace.
struct SourceState<'a> {
    source: RewardSource<'a>,
    compiled: Option<CompiledProgram>,
    recorder: Option<TraceRecorder>,
    entropy: Option<EntropyBonus>,
}

/// k-NN state-entropy rewards over the raw states of each rollout. The
/// scale of the bonus is left to the learner's return scaling.
#[derive(Debug, Clone)]
pub struct EntropyBonus {
    k: usize,
    state_dim: usize,
}

impl EntropyBonus {
    pub fn new(spec: &EnvSpec, k: usize) -> Self {
        EntropyBonus {
            k,
            state_dim: spec.state_dim(),
        }
    }

    pub fn rewards(&self, r: &Rollout) -> Result<Vec<f64>, OptError> {
        let sd = self.state_dim;
        let states: Vec<f64> = (0..r.len()).flat_map(|t| r.feature_row(t)[..sd].to_vec()).collect();
        state_entropy_reward(&states, sd, self.k)
    }
}

impl<'a> SourceState<'a> {
    fn new(spec: &EnvSpec, source: RewardSource<'a>, trace_interval: usize) -> Result<Self, OptError> {
        let (compiled, recorder) = match &source {
            RewardSource::Program(p) => {
                let c = CompiledProgram::new(p, spec).map_err(|e| OptError::ConfigInvalid(e.to_string()))?;
                let rec = TraceRecorder::new(p.id(), c.component_names(), trace_interval);
                (Some(c), Some(rec))
            }
            _ => (None, None),
        };
        let entropy = match &source {
            RewardSource::StateEntropy { k } => Some(EntropyBonus::new(spec, *k)),
            _ => None,
        };
        Ok(SourceState {
            source,
            compiled,
            recorder,
            entropy,
        })
    }

    fn rewards(&mut self, r: &Rollout) -> Result<Vec<f64>, OptError> {
        let n = r.len();
        Ok(match &self.source {
            RewardSource::Metric => r.metric.clone(),
            RewardSource::Model(m) => m.rewards(&r.features, n),
            RewardSource::StateEntropy { .. } => self.entropy.as_ref().expect("entropy bonus").rewards(r)?,
            RewardSource::Program(_) => {
                let c = self.compiled.as_ref().expect("compiled program");
                let rec = self.recorder.as_mut().expect("trace recorder");
                let mut comps = vec![0.0; c.n_components()];
                let mut ends = r.episodes.iter().peekable();
                let mut out = Vec::with_capacity(n);
                for t in 0..n {
                    let total = c.eval_into(r.feature_row(t), &mut comps);
                    if !total.is_finite() {
                        return Err(OptError::NonFinite(format!(
                            "reward program produced {total} at step {}",
                            r.start_step + t + 1
                        )));
                    }
                    rec.record(r.start_step + t + 1, &comps, total);
                    if let Some(e) = ends.next_if(|e| e.index == t) {
                        rec.end_episode(e.metric_total);
                    }
                    out.push(total);
                }
                out
            }
        })
    }
}

/// Trains a fresh policy on a fixed reward source. Deterministic in `seed`.
pub fn ppo_train(
    spec: &EnvSpec,
    source: RewardSource<'_>,
    cfg: &PpoConfig,
    seed: u64,
    mut on_checkpoint: impl FnMut(&CurveSample),
) -> Result<TrainOutcome, OptError> {
    let mut learner = PpoLearner::new(spec, cfg, seed)?;
    let mut src = SourceState::new(spec, source, cfg.trace_interval)?;
    let mut reported = 0;
    while learner.steps_done() < cfg.total_steps {
        let n = cfg.rollout_steps.min(cfg.total_steps - learner.steps_done());
        let rollout = learner.collect(n)?;
        let rewards = src.rewards(&rollout)?;
        learner.update(&rollout, &rewards)?;
        for s in &learner.curve().samples[reported..] {
            on_checkpoint(s);
        }
        reported = learner.curve().samples.len();
    }
    learner.finish_curve()?;
    for s in &learner.curve().samples[reported..] {
        on_checkpoint(s);
    }
    let total = learner.steps_done();
    let trace = src.recorder.take().map(|r| r.finish(total));
    let (policy, curve) = learner.into_parts();
    Ok(TrainOutcome { policy, curve, trace })
}
