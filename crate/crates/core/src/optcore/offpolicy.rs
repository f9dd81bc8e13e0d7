//! Soft actor-critic with a fixed entropy weight: a discrete variant with
//! exact expectations over actions and a tanh-Gaussian continuous variant.
//! The replay buffer keeps raw feature rows so rewards can be relabeled.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::adam::{clip_grad_norm, Adam};
use super::config::OffPolicyConfig;
use super::curve::MetricCurve;
use super::entropy::state_entropy_reward;
use super::nn::{Mlp, Workspace};
use super::normalize::RunningStandardizer;
use super::policy::{log_softmax, squash_log_std, PolicyKind, PolicySpec};
use super::ppo::{evaluate_policy, BatchReward, RewardSource};
use super::{mix_seed, OptError};
use crate::envkit::{reset, step, ActionSpace, EnvSpec, EnvState, Trajectory, TrajectoryStep, UniformRandomPolicy, Policy};
use crate::rewardlang::CompiledProgram;

const MAX_GRAD_NORM: f64 = 10.0;

/// FIFO transition store. Rows hold the normalized observation, the action
/// scalars, and the raw post-step feature row.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    obs_dim: usize,
    act_dim: usize,
    n_features: usize,
    obs: Vec<f64>,
    actions: Vec<f64>,
    features: Vec<f64>,
    rewards: Vec<f64>,
    dones: Vec<bool>,
    head: usize,
    len: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, obs_dim: usize, act_dim: usize, n_features: usize) -> Self {
        ReplayBuffer {
            capacity,
            obs_dim,
            act_dim,
            n_features,
            obs: vec![0.0; capacity * obs_dim],
            actions: vec![0.0; capacity * act_dim],
            features: vec![0.0; capacity * n_features],
            rewards: vec![0.0; capacity],
            dones: vec![false; capacity],
            head: 0,
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Overwrites the oldest transition once full.
    pub fn push(&mut self, obs: &[f64], action: &[f64], features: &[f64], reward: f64, done: bool) {
        let i = self.head;
        self.obs[i * self.obs_dim..(i + 1) * self.obs_dim].copy_from_slice(obs);
        self.actions[i * self.act_dim..(i + 1) * self.act_dim].copy_from_slice(action);
        self.features[i * self.n_features..(i + 1) * self.n_features].copy_from_slice(features);
        self.rewards[i] = reward;
        self.dones[i] = done;
        self.head = (self.head + 1) % self.capacity;
        self.len = (self.len + 1).min(self.capacity);
    }

    /// Slot of the `age`-th oldest stored transition.
    fn slot(&self, age: usize) -> usize {
        (self.head + self.capacity - self.len + age) % self.capacity
    }

    /// Rewards from oldest to newest.
    pub fn rewards(&self) -> Vec<f64> {
        (0..self.len).map(|a| self.rewards[self.slot(a)]).collect()
    }

    /// Feature rows from oldest to newest.
    pub fn feature_rows(&self) -> Vec<&[f64]> {
        (0..self.len)
            .map(|a| {
                let s = self.slot(a);
                &self.features[s * self.n_features..(s + 1) * self.n_features]
            })
            .collect()
    }

    /// Recomputes every stored reward from its feature row.
    pub fn relabel(&mut self, model: &dyn BatchReward) {
        // Occupied slots are always 0..len, whether or not the ring wrapped.
        let r = model.rewards(&self.features[..self.len * self.n_features], self.len);
        self.rewards[..self.len].copy_from_slice(&r);
    }
}

struct Batch {
    obs: Vec<f64>,
    actions: Vec<f64>,
    next_obs: Vec<f64>,
    rewards: Vec<f64>,
    dones: Vec<bool>,
}

pub struct OffPolicyLearner {
    spec: EnvSpec,
    cfg: OffPolicyConfig,
    seed: u64,
    policy: PolicySpec<f64>,
    q: [Mlp<f64>; 2],
    q_target: [Mlp<f64>; 2],
    opt_pi: Adam<f64>,
    opt_q: [Adam<f64>; 2],
    pub buffer: ReplayBuffer,
    rng: ChaCha8Rng,
    env: EnvState,
    obs: Vec<f64>,
    episodes_started: u64,
    partial: Option<Trajectory>,
    /// Keep completed episodes for the caller (preference pools).
    pub keep_trajectories: bool,
    steps: usize,
    curve: MetricCurve,
    discrete: bool,
    ws: [Workspace<f64>; 4],
}

/// Maps features to roughly `[-1, 1]` by their documented bounds.
fn bounds_normalizer(spec: &EnvSpec) -> RunningStandardizer<f64> {
    let mut n = RunningStandardizer::new(spec.state_dim(), 10.0);
    for (j, f) in spec.feature_catalog.iter().take(spec.state_dim()).enumerate() {
        let (lo, hi) = f.bounds.unwrap_or((-1.0, 1.0));
        n.mean[j] = 0.5 * (lo + hi);
        let half = (0.5 * (hi - lo)).max(1e-6);
        n.var[j] = half * half;
    }
    n.count = 1.0;
    n
}

fn polyak(target: &mut Mlp<f64>, source: &Mlp<f64>, tau: f64) {
    for (t, s) in target.params_mut().iter_mut().zip(source.params()) {
        *t += tau * (s - *t);
    }
}

impl OffPolicyLearner {
    pub fn new(spec: &EnvSpec, cfg: &OffPolicyConfig, seed: u64) -> Result<Self, OptError> {
        cfg.validate()?;
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sd = spec.state_dim();
        let (discrete, mut policy, q_in, q_out) = match &spec.action_space {
            ActionSpace::Discrete(n) => (true, PolicySpec::new(spec, &cfg.hidden, &mut rng), sd, *n),
            ActionSpace::Continuous { low, high } => {
                if low.iter().chain(high).any(|b| b.abs() != 1.0) {
                    return Err(OptError::ConfigInvalid("continuous actions must span [-1, 1]".into()));
                }
                (false, PolicySpec::squashed(spec, &cfg.hidden, &mut rng), sd + low.len(), 1)
            }
        };
        policy.obs_norm = Some(bounds_normalizer(spec));
        let mut sizes = vec![q_in];
        sizes.extend_from_slice(&cfg.hidden);
        sizes.push(q_out);
        let q = [Mlp::new(&sizes, 1.0, &mut rng), Mlp::new(&sizes, 1.0, &mut rng)];
        let act_dim = policy.action_dim();
        let (env, obs) = reset(spec, mix_seed(seed, 0));
        Ok(OffPolicyLearner {
            spec: spec.clone(),
            cfg: cfg.clone(),
            seed,
            opt_pi: Adam::new(policy.net.n_params(), cfg.actor_lr),
            opt_q: [Adam::new(q[0].n_params(), cfg.critic_lr), Adam::new(q[1].n_params(), cfg.critic_lr)],
            q_target: q.clone(),
            q,
            policy,
            buffer: ReplayBuffer::new(cfg.replay_capacity, sd, act_dim, spec.n_features()),
            rng,
            env,
            obs,
            episodes_started: 1,
            partial: None,
            keep_trajectories: false,
            steps: 0,
            curve: MetricCurve::default(),
            discrete,
            ws: Default::default(),
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

    pub fn evaluate(&self) -> Result<f64, OptError> {
        evaluate_policy(&self.spec, &self.policy, self.cfg.eval_episodes, self.seed)
    }

    /// One environment step. Before `learning_starts` actions are uniform.
    /// `reward` maps the post-step feature row and metric increment to the
    /// stored reward. Returns the episode if this step completed one and
    /// trajectories are kept.
    pub fn env_step(&mut self, reward: &mut dyn FnMut(&[f64], f64) -> f64) -> Result<Option<Trajectory>, OptError> {
        if self.keep_trajectories && self.partial.is_none() {
            self.partial = Some(Trajectory {
                env_id: self.spec.id,
                seed: self.env.seed,
                initial_observation: self.obs.clone(),
                steps: Vec::new(),
            });
        }
        let x = self.policy.normalize_obs(&self.obs);
        let (scalars, action) = if self.steps < self.cfg.learning_starts {
            let a = UniformRandomPolicy::new(&self.spec).sample(&self.obs, &mut self.rng);
            let s = match &a {
                crate::envkit::Action::Discrete(i) => vec![*i as f64],
                crate::envkit::Action::Continuous(v) => v.clone(),
            };
            (s, a)
        } else {
            self.policy.net.forward_batch(&x, 1, &mut self.ws[0]);
            let head = self.ws[0].output().to_vec();
            let (s, _) = self.policy.sample_from_head(&head, &mut self.rng);
            let a = self.policy.to_action(&s);
            (s, a)
        };
        let out = step(&self.spec, &mut self.env, &action)?;
        let r = reward(&out.features, out.metric_increment);
        if !r.is_finite() {
            return Err(OptError::NonFinite(format!("reward at step {}", self.steps + 1)));
        }
        self.buffer.push(&x, &scalars, &out.features, r, out.terminated);
        if let Some(p) = self.partial.as_mut() {
            p.steps.push(TrajectoryStep {
                features: out.features.clone(),
                action,
                metric_increment: out.metric_increment,
                done: out.terminated,
            });
        }
        self.steps += 1;
        let mut finished = None;
        if out.terminated || out.truncated {
            finished = self.partial.take();
            let (env, obs) = reset(&self.spec, mix_seed(self.seed, self.episodes_started));
            self.episodes_started += 1;
            self.env = env;
            self.obs = obs;
        } else {
            self.obs = out.observation;
        }
        if self.steps.is_multiple_of(self.cfg.eval_interval) {
            let m = self.evaluate()?;
            self.curve.push(self.steps, m);
        }
        Ok(finished)
    }

    fn sample_batch(&mut self, entropy_k: Option<usize>) -> Result<Batch, OptError> {
        let n = self.cfg.batch_size.min(self.buffer.len());
        let b = &self.buffer;
        let sd = b.obs_dim;
        let norm = self.policy.obs_norm.as_ref().expect("bounds normalizer");
        let mut batch = Batch {
            obs: Vec::with_capacity(n * sd),
            actions: Vec::with_capacity(n * b.act_dim),
            next_obs: Vec::with_capacity(n * sd),
            rewards: Vec::with_capacity(n),
            dones: Vec::with_capacity(n),
        };
        for _ in 0..n {
            let s = b.slot(self.rng.random_range(0..b.len()));
            batch.obs.extend_from_slice(&b.obs[s * sd..(s + 1) * sd]);
            batch.actions.extend_from_slice(&b.actions[s * b.act_dim..(s + 1) * b.act_dim]);
            let f = &b.features[s * b.n_features..s * b.n_features + sd];
            batch.next_obs.extend(norm.normalize(f));
            batch.rewards.push(b.rewards[s]);
            batch.dones.push(b.dones[s]);
        }
        if let Some(k) = entropy_k {
            batch.rewards = state_entropy_reward(&batch.next_obs, sd, k)?;
        }
        Ok(batch)
    }

    /// One critic and actor update from a replay minibatch. With
    /// `entropy_k`, rewards are the k-NN state entropy of the batch.
    pub fn train_step(&mut self, entropy_k: Option<usize>) -> Result<(), OptError> {
        if self.buffer.len() < self.cfg.batch_size.max(2) || self.steps < self.cfg.learning_starts {
            return Ok(());
        }
        let batch = self.sample_batch(entropy_k)?;
        if self.discrete {
            self.update_discrete(&batch)?;
        } else {
            self.update_continuous(&batch)?;
        }
        for i in 0..2 {
            polyak(&mut self.q_target[i], &self.q[i], self.cfg.tau);
        }
        Ok(())
    }

    fn update_discrete(&mut self, b: &Batch) -> Result<(), OptError> {
        let n = b.rewards.len();
        let na = self.q[0].output_dim();
        let (alpha, gamma) = (self.cfg.entropy_weight, self.cfg.gamma);
        let [ws0, ws1, ws2, ws3] = &mut self.ws;
        // Soft state value of the next states under the current policy.
        self.policy.net.forward_batch(&b.next_obs, n, ws0);
        self.q_target[0].forward_batch(&b.next_obs, n, ws1);
        self.q_target[1].forward_batch(&b.next_obs, n, ws2);
        let mut lp = vec![0.0; na];
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            log_softmax(&ws0.output()[i * na..(i + 1) * na], &mut lp);
            let mut v = 0.0;
            for a in 0..na {
                let qmin = ws1.output()[i * na + a].min(ws2.output()[i * na + a]);
                v += lp[a].exp() * (qmin - alpha * lp[a]);
            }
            y.push(b.rewards[i] + if b.dones[i] { 0.0 } else { gamma * v });
        }
        for k in 0..2 {
            let ws = if k == 0 { &mut *ws1 } else { &mut *ws2 };
            self.q[k].forward_batch(&b.obs, n, ws);
            let mut d = vec![0.0; n * na];
            for i in 0..n {
                let a = b.actions[i] as usize;
                d[i * na + a] = (ws.output()[i * na + a] - y[i]) / n as f64;
            }
            let mut g = vec![0.0; self.q[k].n_params()];
            self.q[k].backward(ws, &d, &mut g, None);
            if g.iter().any(|v| !v.is_finite()) {
                return Err(OptError::NonFinite("critic gradient".into()));
            }
            clip_grad_norm(&mut g, MAX_GRAD_NORM);
            self.opt_q[k].step(self.q[k].params_mut(), &g);
        }
        self.q[0].forward_batch(&b.obs, n, ws1);
        self.q[1].forward_batch(&b.obs, n, ws2);
        let qmin: Vec<f64> = ws1.output().iter().zip(ws2.output()).map(|(a, b)| a.min(*b)).collect();
        let mut g = vec![0.0; self.policy.net.n_params()];
        discrete_actor_loss(&self.policy.net, &qmin, &b.obs, n, alpha, ws3, &mut g);
        if g.iter().any(|v| !v.is_finite()) {
            return Err(OptError::NonFinite("actor gradient".into()));
        }
        clip_grad_norm(&mut g, MAX_GRAD_NORM);
        self.opt_pi.step(self.policy.net.params_mut(), &g);
        Ok(())
    }

    /// Reparameterized tanh-Gaussian draw for each row of `heads`.
    fn squashed_draw(&mut self, heads: &[f64], n: usize, dim: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut acts = Vec::with_capacity(n * dim);
        let mut eps = Vec::with_capacity(n * dim);
        let mut logp = Vec::with_capacity(n);
        for i in 0..n {
            let h = &heads[i * 2 * dim..(i + 1) * 2 * dim];
            let mut lp = 0.0;
            for d in 0..dim {
                let e: f64 = StandardNormal.sample(&mut self.rng);
                let ls = squash_log_std(h[dim + d]);
                let a = (h[d] + ls.exp() * e).tanh();
                lp += -0.5 * e * e - ls - super::policy::half_log_2pi::<f64>() - (1.0 - a * a + 1e-6).ln();
                acts.push(a);
                eps.push(e);
            }
            logp.push(lp);
        }
        (acts, eps, logp)
    }

    fn update_continuous(&mut self, b: &Batch) -> Result<(), OptError> {
        let n = b.rewards.len();
        let PolicyKind::SquashedGaussian { dim } = self.policy.kind else {
            unreachable!("continuous learner uses a squashed head")
        };
        let sd = self.spec.state_dim();
        let (alpha, gamma) = (self.cfg.entropy_weight, self.cfg.gamma);
        let join = |obs: &[f64], acts: &[f64]| -> Vec<f64> {
            obs.chunks(sd).zip(acts.chunks(dim)).flat_map(|(o, a)| o.iter().chain(a).copied()).collect()
        };
        let mut ws = std::mem::take(&mut self.ws);
        self.policy.net.forward_batch(&b.next_obs, n, &mut ws[0]);
        let next_heads = ws[0].output().to_vec();
        let (a2, _, lp2) = self.squashed_draw(&next_heads, n, dim);
        let x2 = join(&b.next_obs, &a2);
        self.q_target[0].forward_batch(&x2, n, &mut ws[1]);
        self.q_target[1].forward_batch(&x2, n, &mut ws[2]);
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let v = ws[1].output()[i].min(ws[2].output()[i]) - alpha * lp2[i];
                b.rewards[i] + if b.dones[i] { 0.0 } else { gamma * v }
            })
            .collect();
        let x = join(&b.obs, &b.actions);
        for k in 0..2 {
            self.q[k].forward_batch(&x, n, &mut ws[1]);
            let d: Vec<f64> = ws[1].output().iter().zip(&y).map(|(q, t)| (q - t) / n as f64).collect();
            let mut g = vec![0.0; self.q[k].n_params()];
            self.q[k].backward(&mut ws[1], &d, &mut g, None);
            if g.iter().any(|v| !v.is_finite()) {
                self.ws = ws;
                return Err(OptError::NonFinite("critic gradient".into()));
            }
            clip_grad_norm(&mut g, MAX_GRAD_NORM);
            self.opt_q[k].step(self.q[k].params_mut(), &g);
        }
        let noise: Vec<f64> = (0..n * dim).map(|_| StandardNormal.sample(&mut self.rng)).collect();
        let mut g = vec![0.0; self.policy.net.n_params()];
        let [_, w1, w2, w3] = &mut ws;
        squashed_actor_loss(
            &self.policy.net,
            [&self.q[0], &self.q[1]],
            &b.obs,
            &noise,
            n,
            alpha,
            [w1, w2, w3],
            &mut g,
        );
        self.ws = ws;
        if g.iter().any(|v| !v.is_finite()) {
            return Err(OptError::NonFinite("actor gradient".into()));
        }
        clip_grad_norm(&mut g, MAX_GRAD_NORM);
        self.opt_pi.step(self.policy.net.params_mut(), &g);
        Ok(())
    }

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

/// Mean over states of `sum_a pi(a|s) (alpha ln pi(a|s) - qmin(s, a))` for a
/// logits network; accumulates its gradient into `grad`.
pub fn discrete_actor_loss(
    policy: &Mlp<f64>,
    qmin: &[f64],
    obs: &[f64],
    n: usize,
    alpha: f64,
    ws: &mut Workspace<f64>,
    grad: &mut [f64],
) -> f64 {
    let na = policy.output_dim();
    policy.forward_batch(obs, n, ws);
    let mut lp = vec![0.0; na];
    let mut d = vec![0.0; n * na];
    let mut loss = 0.0;
    for i in 0..n {
        log_softmax(&ws.output()[i * na..(i + 1) * na], &mut lp);
        let f: Vec<f64> = (0..na).map(|a| alpha * lp[a] - qmin[i * na + a]).collect();
        let mean: f64 = (0..na).map(|a| lp[a].exp() * f[a]).sum();
        loss += mean / n as f64;
        // The ln-pi term contributes nothing beyond this centered form.
        for a in 0..na {
            d[i * na + a] = lp[a].exp() * (f[a] - mean) / n as f64;
        }
    }
    policy.backward(ws, &d, grad, None);
    loss
}

/// Mean over states of `alpha ln pi(a|s) - min_k Q_k(s, a)` with
/// `a = tanh(mu + sigma * noise)`; accumulates the gradient in the policy
/// parameters into `grad`. The critics are held fixed.
#[allow(clippy::too_many_arguments)]
pub fn squashed_actor_loss(
    policy: &Mlp<f64>,
    q: [&Mlp<f64>; 2],
    obs: &[f64],
    noise: &[f64],
    n: usize,
    alpha: f64,
    ws: [&mut Workspace<f64>; 3],
    grad: &mut [f64],
) -> f64 {
    let [ws_q0, ws_q1, ws_pi] = ws;
    let dim = policy.output_dim() / 2;
    let sd = policy.input_dim();
    policy.forward_batch(obs, n, ws_pi);
    let heads = ws_pi.output().to_vec();
    let mut acts = Vec::with_capacity(n * dim);
    let mut loss = 0.0;
    for i in 0..n {
        let h = &heads[i * 2 * dim..(i + 1) * 2 * dim];
        for d in 0..dim {
            let e = noise[i * dim + d];
            let ls = squash_log_std(h[dim + d]);
            let a = (h[d] + ls.exp() * e).tanh();
            loss += alpha * (-0.5 * e * e - ls - super::policy::half_log_2pi::<f64>() - (1.0 - a * a + 1e-6).ln())
                / n as f64;
            acts.push(a);
        }
    }
    let xa: Vec<f64> = obs
        .chunks(sd)
        .zip(acts.chunks(dim))
        .flat_map(|(o, a)| o.iter().chain(a).copied())
        .collect();
    q[0].forward_batch(&xa, n, ws_q0);
    q[1].forward_batch(&xa, n, ws_q1);
    let width = sd + dim;
    let mut dq = [vec![0.0; n], vec![0.0; n]];
    for i in 0..n {
        let (q0, q1) = (ws_q0.output()[i], ws_q1.output()[i]);
        loss -= q0.min(q1) / n as f64;
        dq[if q0 <= q1 { 0 } else { 1 }][i] = 1.0;
    }
    let mut gin = [vec![0.0; n * width], vec![0.0; n * width]];
    let mut scratch = vec![0.0; q[0].n_params()];
    q[0].backward(ws_q0, &dq[0], &mut scratch, Some(&mut gin[0]));
    let mut scratch = vec![0.0; q[1].n_params()];
    q[1].backward(ws_q1, &dq[1], &mut scratch, Some(&mut gin[1]));
    let mut d_head = vec![0.0; n * 2 * dim];
    for i in 0..n {
        let h = &heads[i * 2 * dim..(i + 1) * 2 * dim];
        for d in 0..dim {
            let a = acts[i * dim + d];
            let e = noise[i * dim + d];
            let raw_ls = h[dim + d];
            let sigma = squash_log_std(raw_ls).exp();
            let dqda = gin[0][i * width + sd + d] + gin[1][i * width + sd + d];
            let du = 1.0 - a * a;
            // d/du of -ln(1 - tanh(u)^2 + 1e-6)
            let dlogp_du = 2.0 * a * du / (du + 1e-6);
            let g_u = (alpha * dlogp_du - dqda * du) / n as f64;
            d_head[i * 2 * dim + d] = g_u;
            let live = raw_ls > super::policy::LOG_STD_MIN && raw_ls < super::policy::LOG_STD_MAX;
            d_head[i * 2 * dim + dim + d] = if live { g_u * sigma * e - alpha / n as f64 } else { 0.0 };
        }
    }
    policy.backward(ws_pi, &d_head, grad, None);
    loss
}

/// Trains a fresh off-policy agent on a fixed reward source.
pub fn offpolicy_train(
    spec: &EnvSpec,
    source: RewardSource<'_>,
    cfg: &OffPolicyConfig,
    seed: u64,
) -> Result<(PolicySpec<f64>, MetricCurve), OptError> {
    let mut learner = OffPolicyLearner::new(spec, cfg, seed)?;
    let compiled = match &source {
        RewardSource::Program(p) => Some(CompiledProgram::new(p, spec).map_err(|e| OptError::ConfigInvalid(e.to_string()))?),
        _ => None,
    };
    let entropy_k = match source {
        RewardSource::StateEntropy { k } => Some(k),
        _ => None,
    };
    let mut reward = |features: &[f64], metric: f64| -> f64 {
        match &source {
            RewardSource::Metric => metric,
            RewardSource::Program(_) => compiled.as_ref().map_or(0.0, |c| c.total(features)),
            RewardSource::Model(m) => m.rewards(features, 1)[0],
            RewardSource::StateEntropy { .. } => 0.0,
        }
    };
    while learner.steps_done() < cfg.total_steps {
        learner.env_step(&mut reward)?;
        learner.train_step(entropy_k)?;
    }
    learner.finish_curve()?;
    Ok(learner.into_parts())
}
