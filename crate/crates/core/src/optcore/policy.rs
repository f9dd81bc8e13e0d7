//! Stochastic policies over a network head: categorical logits, or a
//! Gaussian mean with a state-independent log standard deviation.

use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::nn::{Mlp, Workspace};
use super::normalize::RunningStandardizer;
use crate::envkit::{Action, ActionShape, ActionSpace, EnvSpec, Policy};
use crate::Scalar;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PolicyKind {
    Categorical { n: usize },
    Gaussian { dim: usize },
    /// `tanh` of a Gaussian whose mean and log-std both come from the
    /// network (outputs `[mean; log_std]`).
    SquashedGaussian { dim: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec<T> {
    pub kind: PolicyKind,
    pub net: Mlp<T>,
    /// Unclamped; every use clamps to `[LOG_STD_MIN, LOG_STD_MAX]`.
    pub log_std: Vec<T>,
    /// Frozen observation statistics applied before the network.
    pub obs_norm: Option<RunningStandardizer<T>>,
}

/// One minibatch for the clipped surrogate. Observations are already
/// normalized; discrete actions are stored as their index.
pub struct PolicyBatch<'a, T> {
    pub obs: &'a [T],
    pub actions: &'a [T],
    pub old_log_prob: &'a [T],
    pub advantages: &'a [T],
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SurrogateStats {
    pub loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

pub(crate) fn log_softmax<T: Scalar>(logits: &[T], out: &mut [T]) {
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = m + logits.iter().map(|&l| (l - m).exp()).sum::<T>().ln();
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = l - lse;
    }
}

/// Network log-std output clamped to `[LOG_STD_MIN, LOG_STD_MAX]`.
pub fn squash_log_std<T: Scalar>(raw: T) -> T {
    raw.max(T::of(LOG_STD_MIN)).min(T::of(LOG_STD_MAX))
}

pub(crate) fn half_log_2pi<T: Scalar>() -> T {
    T::of(0.5 * (2.0 * std::f64::consts::PI).ln())
}

impl<T: Scalar> PolicySpec<T> {
    pub fn new<R: Rng + ?Sized>(spec: &EnvSpec, hidden: &[usize], rng: &mut R) -> Self {
        let kind = match &spec.action_space {
            ActionSpace::Discrete(n) => PolicyKind::Categorical { n: *n },
            ActionSpace::Continuous { low, .. } => PolicyKind::Gaussian { dim: low.len() },
        };
        let (out, log_std) = match kind {
            PolicyKind::Categorical { n } => (n, Vec::new()),
            PolicyKind::Gaussian { dim } | PolicyKind::SquashedGaussian { dim } => (dim, vec![T::zero(); dim]),
        };
        let mut sizes = vec![spec.state_dim()];
        sizes.extend_from_slice(hidden);
        sizes.push(out);
        PolicySpec {
            kind,
            net: Mlp::new(&sizes, 0.01, rng),
            log_std,
            obs_norm: None,
        }
    }

    /// Tanh-squashed policy for bounded continuous control.
    pub fn squashed<R: Rng + ?Sized>(spec: &EnvSpec, hidden: &[usize], rng: &mut R) -> Self {
        let dim = spec.action_dim();
        let mut sizes = vec![spec.state_dim()];
        sizes.extend_from_slice(hidden);
        sizes.push(2 * dim);
        PolicySpec {
            kind: PolicyKind::SquashedGaussian { dim },
            net: Mlp::new(&sizes, 0.01, rng),
            log_std: Vec::new(),
            obs_norm: None,
        }
    }

    pub fn action_dim(&self) -> usize {
        match self.kind {
            PolicyKind::Categorical { .. } => 1,
            PolicyKind::Gaussian { dim } | PolicyKind::SquashedGaussian { dim } => dim,
        }
    }

    pub fn clamped_log_std(&self) -> Vec<T> {
        self.log_std
            .iter()
            .map(|&l| l.max(T::of(LOG_STD_MIN)).min(T::of(LOG_STD_MAX)))
            .collect()
    }

    pub fn normalize_obs(&self, obs: &[f64]) -> Vec<T> {
        let x: Vec<T> = obs.iter().map(|&v| T::of(v)).collect();
        match &self.obs_norm {
            Some(n) => n.normalize(&x),
            None => x,
        }
    }

    fn head(&self, obs: &[f64]) -> Vec<T> {
        self.net
            .forward(&self.normalize_obs(obs))
            .expect("observation width checked by the policy contract")
    }

    /// Log-probability of `action` given one network output row.
    pub fn log_prob_from_head(&self, head: &[T], action: &[T]) -> T {
        match self.kind {
            PolicyKind::Categorical { n } => {
                let mut lp = vec![T::zero(); n];
                log_softmax(head, &mut lp);
                lp[action[0].to_usize().unwrap_or(0).min(n - 1)]
            }
            PolicyKind::Gaussian { .. } => self
                .clamped_log_std()
                .iter()
                .zip(head.iter().zip(action))
                .map(|(&ls, (&mu, &a))| {
                    let z = (a - mu) / ls.exp();
                    -T::of(0.5) * z * z - ls - half_log_2pi::<T>()
                })
                .sum(),
            PolicyKind::SquashedGaussian { dim } => {
                let lim = T::one() - T::of(1e-6);
                (0..dim)
                    .map(|d| {
                        let a = action[d].max(-lim).min(lim);
                        let u = T::of(0.5) * ((T::one() + a) / (T::one() - a)).ln();
                        let ls = squash_log_std(head[dim + d]);
                        let z = (u - head[d]) / ls.exp();
                        -T::of(0.5) * z * z - ls - half_log_2pi::<T>() - (T::one() - a * a + T::of(1e-6)).ln()
                    })
                    .sum()
            }
        }
    }

    /// The distribution's mode: argmax action or the mean.
    pub fn mode(&self, obs: &[f64]) -> Action {
        let h = self.head(obs);
        match self.kind {
            PolicyKind::Categorical { .. } => {
                let mut best = 0;
                for (i, v) in h.iter().enumerate() {
                    if *v > h[best] {
                        best = i;
                    }
                }
                Action::Discrete(best)
            }
            PolicyKind::Gaussian { .. } => Action::Continuous(h.iter().map(|v| v.as_f64()).collect()),
            PolicyKind::SquashedGaussian { dim } => Action::Continuous(h[..dim].iter().map(|v| v.tanh().as_f64()).collect()),
        }
    }

    /// Samples an action from one head row; returns it as scalars and its
    /// log-probability.
    pub fn sample_from_head(&self, head: &[T], rng: &mut dyn RngCore) -> (Vec<T>, T) {
        let a = match self.kind {
            PolicyKind::Categorical { n } => {
                let mut lp = vec![T::zero(); n];
                log_softmax(head, &mut lp);
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = n - 1;
                for (i, l) in lp.iter().enumerate() {
                    acc += l.as_f64().exp();
                    if u < acc {
                        pick = i;
                        break;
                    }
                }
                vec![T::of(pick as f64)]
            }
            PolicyKind::Gaussian { .. } => self
                .clamped_log_std()
                .iter()
                .zip(head)
                .map(|(&ls, &mu)| {
                    let e: f64 = StandardNormal.sample(rng);
                    mu + ls.exp() * T::of(e)
                })
                .collect(),
            PolicyKind::SquashedGaussian { dim } => (0..dim)
                .map(|d| {
                    let e: f64 = StandardNormal.sample(rng);
                    (head[d] + squash_log_std(head[dim + d]).exp() * T::of(e)).tanh()
                })
                .collect(),
        };
        let lp = self.log_prob_from_head(head, &a);
        (a, lp)
    }

    pub fn to_action(&self, a: &[T]) -> Action {
        match self.kind {
            PolicyKind::Categorical { .. } => Action::Discrete(a[0].to_usize().unwrap_or(0)),
            PolicyKind::Gaussian { .. } | PolicyKind::SquashedGaussian { .. } => {
                Action::Continuous(a.iter().map(|v| v.as_f64()).collect())
            }
        }
    }

    fn action_scalars(&self, action: &Action) -> Option<Vec<T>> {
        match (self.kind, action) {
            (PolicyKind::Categorical { n }, Action::Discrete(a)) if *a < n => Some(vec![T::of(*a as f64)]),
            (
                PolicyKind::Gaussian { dim } | PolicyKind::SquashedGaussian { dim },
                Action::Continuous(v),
            ) if v.len() == dim => {
                Some(v.iter().map(|&x| T::of(x)).collect())
            }
            _ => None,
        }
    }

    /// Clipped surrogate loss minus the entropy bonus, averaged over the
    /// batch. Accumulates gradients for the network and the log-std.
    pub fn surrogate_loss(
        &self,
        batch: &PolicyBatch<'_, T>,
        clip: T,
        entropy_coef: T,
        ws: &mut Workspace<T>,
        grad_net: &mut [T],
        grad_log_std: &mut [T],
    ) -> SurrogateStats {
        let n = batch.old_log_prob.len();
        let nt = T::of(n as f64);
        self.net.forward_batch(batch.obs, n, ws);
        let heads = ws.output().to_vec();
        let out_dim = self.net.output_dim();
        let ad = self.action_dim();
        let mut d_head = vec![T::zero(); heads.len()];
        let mut stats = SurrogateStats::default();
        let one = T::one();
        let log_std = self.clamped_log_std();
        let ls_live: Vec<bool> = self
            .log_std
            .iter()
            .map(|&l| l > T::of(LOG_STD_MIN) && l < T::of(LOG_STD_MAX))
            .collect();
        let mut lp_buf = vec![T::zero(); out_dim];
        for i in 0..n {
            let head = &heads[i * out_dim..(i + 1) * out_dim];
            let act = &batch.actions[i * ad..(i + 1) * ad];
            let adv = batch.advantages[i];
            let logp = self.log_prob_from_head(head, act);
            let ratio = (logp - batch.old_log_prob[i]).exp();
            let clipped = ratio.max(one - clip).min(one + clip);
            let unclipped_active = ratio * adv <= clipped * adv;
            let surr = if unclipped_active { ratio * adv } else { clipped * adv };
            // d(-surr)/d logp
            let g_logp = if unclipped_active { -ratio * adv / nt } else { T::zero() };
            stats.loss -= (surr / nt).as_f64();
            let log_ratio = logp - batch.old_log_prob[i];
            stats.approx_kl += ((ratio - one) - log_ratio).as_f64() / n as f64;
            if (ratio - one).abs() > clip {
                stats.clip_fraction += 1.0 / n as f64;
            }
            let dh = &mut d_head[i * out_dim..(i + 1) * out_dim];
            match self.kind {
                PolicyKind::Categorical { .. } => {
                    log_softmax(head, &mut lp_buf);
                    let a = act[0].to_usize().unwrap_or(0);
                    let h: T = -lp_buf.iter().map(|&l| l.exp() * l).sum::<T>();
                    stats.entropy += h.as_f64() / n as f64;
                    stats.loss -= (entropy_coef * h / nt).as_f64();
                    for (k, d) in dh.iter_mut().enumerate() {
                        let p = lp_buf[k].exp();
                        let onehot = if k == a { one } else { T::zero() };
                        // d logp / d logit_k = 1[k=a] - p_k; d H / d logit_k = -p_k (log p_k + H)
                        *d += g_logp * (onehot - p);
                        *d -= entropy_coef / nt * (-p * (lp_buf[k] + h));
                    }
                }
                PolicyKind::SquashedGaussian { .. } => {
                    unreachable!("the clipped surrogate is defined for categorical and Gaussian heads")
                }
                PolicyKind::Gaussian { .. } => {
                    for d in 0..ad {
                        let sigma = log_std[d].exp();
                        let z = (act[d] - head[d]) / sigma;
                        dh[d] += g_logp * z / sigma;
                        if ls_live[d] {
                            grad_log_std[d] += g_logp * (z * z - one);
                        }
                    }
                }
            }
        }
        if let PolicyKind::Gaussian { .. } = self.kind {
            let h: T = log_std.iter().map(|&l| l + half_log_2pi::<T>() + T::of(0.5)).sum();
            stats.entropy = h.as_f64();
            stats.loss -= (entropy_coef * h).as_f64();
            for (g, live) in grad_log_std.iter_mut().zip(&ls_live) {
                if *live {
                    *g -= entropy_coef;
                }
            }
        }
        self.net.backward(ws, &d_head, grad_net, None);
        stats
    }
}

impl<T: Scalar> Policy for PolicySpec<T> {
    fn observation_dim(&self) -> usize {
        self.net.input_dim()
    }

    fn action_shape(&self) -> ActionShape {
        match self.kind {
            PolicyKind::Categorical { n } => ActionShape::Discrete(n),
            PolicyKind::Gaussian { dim } | PolicyKind::SquashedGaussian { dim } => ActionShape::Continuous(dim),
        }
    }

    fn sample(&self, observation: &[f64], rng: &mut dyn RngCore) -> Action {
        let h = self.head(observation);
        let (a, _) = self.sample_from_head(&h, rng);
        self.to_action(&a)
    }

    fn log_prob(&self, observation: &[f64], action: &Action) -> f64 {
        match self.action_scalars(action) {
            Some(a) => self.log_prob_from_head(&self.head(observation), &a).as_f64(),
            None => f64::NEG_INFINITY,
        }
    }
}

/// Acts with the mode of a stochastic policy.
pub struct Deterministic<'a, T>(pub &'a PolicySpec<T>);

impl<T: Scalar> Policy for Deterministic<'_, T> {
    fn observation_dim(&self) -> usize {
        self.0.observation_dim()
    }

    fn action_shape(&self) -> ActionShape {
        self.0.action_shape()
    }

    fn sample(&self, observation: &[f64], _rng: &mut dyn RngCore) -> Action {
        self.0.mode(observation)
    }

    fn log_prob(&self, observation: &[f64], action: &Action) -> f64 {
        if self.0.mode(observation) == *action {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    }
}
