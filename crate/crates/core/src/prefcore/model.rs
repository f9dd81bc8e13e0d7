//! Reward-model ensemble trained with the Bradley-Terry cross-entropy on
//! full-trajectory preferences.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::PrefError;
use crate::envkit::EnvSpec;
use crate::optcore::{clip_grad_norm, mix_seed, Activation, Adam, BatchReward, Mlp, Workspace};

/// Maps each catalog feature to roughly `[-1, 1]` using its bounds.
/// Unbounded or zero-width features pass through centred only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    center: Vec<f64>,
    inv_half_width: Vec<f64>,
}

impl FeatureScaler {
    pub fn new(spec: &EnvSpec) -> Self {
        let (center, inv_half_width) = spec
            .feature_catalog
            .iter()
            .map(|f| match f.bounds {
                Some((lo, hi)) if hi > lo => ((lo + hi) / 2.0, 2.0 / (hi - lo)),
                Some((lo, hi)) => ((lo + hi) / 2.0, 1.0),
                None => (0.0, 1.0),
            })
            .unzip();
        FeatureScaler { center, inv_half_width }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn scale(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.center)
            .zip(&self.inv_half_width)
            .map(|((x, c), s)| (x - c) * s)
            .collect()
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `P[σ1 ≻ σ0]` from summed rewards: the logistic of `s1 - s0`.
pub fn bradley_terry(s0: f64, s1: f64) -> f64 {
    1.0 / (1.0 + (s0 - s1).exp())
}

/// `ln P` and `ln (1 - P)` without forming `P`.
fn log_probs(s0: f64, s1: f64) -> (f64, f64) {
    (-softplus(s0 - s1), -softplus(s1 - s0))
}

/// One labelled comparison over scaled feature rows. `label` 1 means
/// `x1` is preferred.
#[derive(Debug, Clone, Copy)]
pub struct TrainingPair<'a> {
    pub x0: &'a [f64],
    pub x1: &'a [f64],
    pub label: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardTrainConfig {
    /// Epoch cap per training call.
    pub max_update: usize,
    /// Pairs per gradient step.
    pub batch_pairs: usize,
    pub lr: f64,
    pub target_accuracy: f64,
}

impl Default for RewardTrainConfig {
    fn default() -> Self {
        RewardTrainConfig {
            max_update: 50,
            batch_pairs: 32,
            lr: 3e-3,
            target_accuracy: 0.97,
        }
    }
}

/// E independently initialized reward networks over scaled feature rows,
/// each ending in `tanh` so per-step rewards stay in `(-1, 1)`.
#[derive(Debug, Clone)]
pub struct RewardEnsemble {
    pub members: Vec<Mlp<f64>>,
    scaler: FeatureScaler,
    opts: Vec<Adam<f64>>,
}

impl RewardEnsemble {
    pub fn new(spec: &EnvSpec, size: usize, hidden: &[usize], lr: f64, seed: u64) -> Result<Self, PrefError> {
        if size < 3 {
            return Err(PrefError::ConfigInvalid(format!("ensemble of {size}; need at least 3")));
        }
        let scaler = FeatureScaler::new(spec);
        let mut sizes = vec![scaler.dim()];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let members: Vec<Mlp<f64>> = (0..size as u64)
            .map(|m| {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, m));
                let net = Mlp::new(&sizes, 1.0, &mut rng);
                let mut layers = net.layers().to_vec();
                layers.last_mut().expect("output layer").activation = Activation::Tanh;
                Mlp::from_parts(layers, net.params().to_vec()).expect("same shapes")
            })
            .collect();
        let opts = members.iter().map(|m| Adam::new(m.n_params(), lr)).collect();
        Ok(RewardEnsemble { members, scaler, opts })
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn scaler(&self) -> &FeatureScaler {
        &self.scaler
    }

    /// Summed predicted reward of each member over a trajectory.
    pub fn member_returns(&self, inputs: &[f64]) -> Vec<f64> {
        let n = inputs.len() / self.scaler.dim();
        let mut ws = Workspace::new();
        self.members
            .iter()
            .map(|m| {
                m.forward_batch(inputs, n, &mut ws);
                ws.output().iter().sum()
            })
            .collect()
    }

    pub fn member_probs(&self, x0: &[f64], x1: &[f64]) -> Vec<f64> {
        let s0 = self.member_returns(x0);
        let s1 = self.member_returns(x1);
        s0.iter().zip(&s1).map(|(a, b)| bradley_terry(*a, *b)).collect()
    }

    /// Mean of the members' preference probabilities.
    pub fn predictor_prob(&self, x0: &[f64], x1: &[f64]) -> f64 {
        let p = self.member_probs(x0, x1);
        p.iter().sum::<f64>() / p.len() as f64
    }

    /// Fraction of pairs where the ensemble predictor agrees with the label;
    /// `P = 0.5` predicts 0.
    pub fn accuracy(&self, pairs: &[TrainingPair<'_>]) -> f64 {
        if pairs.is_empty() {
            return 1.0;
        }
        let hits = pairs
            .iter()
            .filter(|p| u8::from(self.predictor_prob(p.x0, p.x1) > 0.5) == p.label)
            .count();
        hits as f64 / pairs.len() as f64
    }
}

impl BatchReward for RewardEnsemble {
    /// Mean member reward for each raw feature row.
    fn rewards(&self, features: &[f64], n: usize) -> Vec<f64> {
        let scaled: Vec<f64> = features.chunks(self.scaler.dim()).flat_map(|r| self.scaler.scale(r)).collect();
        let mut out = vec![0.0; n];
        let mut ws = Workspace::new();
        for m in &self.members {
            m.forward_batch(&scaled, n, &mut ws);
            for (o, r) in out.iter_mut().zip(ws.output()) {
                *o += r / self.members.len() as f64;
            }
        }
        out
    }
}

/// Mean cross-entropy between one network's predictor and the labels;
/// accumulates the gradient into `grad`.
pub fn preference_loss(net: &Mlp<f64>, pairs: &[TrainingPair<'_>], ws: &mut Workspace<f64>, grad: &mut [f64]) -> f64 {
    let dim = net.input_dim();
    let mut rows = Vec::new();
    let mut spans = Vec::with_capacity(pairs.len());
    for p in pairs {
        let a = rows.len() / dim;
        rows.extend_from_slice(p.x0);
        let b = rows.len() / dim;
        rows.extend_from_slice(p.x1);
        spans.push((a, b, rows.len() / dim));
    }
    let n_rows = rows.len() / dim;
    net.forward_batch(&rows, n_rows, ws);
    let out = ws.output();
    let mut d = vec![0.0; n_rows];
    let mut loss = 0.0;
    let np = pairs.len() as f64;
    for (p, &(a, b, e)) in pairs.iter().zip(&spans) {
        let s0: f64 = out[a..b].iter().sum();
        let s1: f64 = out[b..e].iter().sum();
        let (lp1, lp0) = log_probs(s0, s1);
        let y = f64::from(p.label);
        loss -= (y * lp1 + (1.0 - y) * lp0) / np;
        // dL/dS1 = P - y, dL/dS0 = y - P
        let g1 = (lp1.exp() - y) / np;
        d[a..b].iter_mut().for_each(|v| *v = -g1);
        d[b..e].iter_mut().for_each(|v| *v = g1);
    }
    net.backward(ws, &d, grad, None);
    loss
}

const REWARD_MAX_GRAD_NORM: f64 = 10.0;

/// Outcome of one reward-model training call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardTrainReport {
    /// Ensemble accuracy over all pairs after the last epoch.
    pub accuracy: f64,
    pub epochs: usize,
    /// True when the accuracy target ended training before the epoch cap.
    pub stopped_early: bool,
}

/// Minimizes each member's cross-entropy on `pairs`, one epoch at a time,
/// until the ensemble accuracy reaches `cfg.target_accuracy` or
/// `cfg.max_update` epochs have run. Returns the final accuracy.
pub fn train_reward_model(
    ensemble: &mut RewardEnsemble,
    pairs: &[TrainingPair<'_>],
    cfg: &RewardTrainConfig,
    seed: u64,
) -> f64 {
    train_reward_model_report(ensemble, pairs, cfg, seed).accuracy
}

pub fn train_reward_model_report(
    ensemble: &mut RewardEnsemble,
    pairs: &[TrainingPair<'_>],
    cfg: &RewardTrainConfig,
    seed: u64,
) -> RewardTrainReport {
    let mut report = RewardTrainReport {
        accuracy: 1.0,
        epochs: 0,
        stopped_early: false,
    };
    if pairs.is_empty() {
        return report;
    }
    for epoch in 0..cfg.max_update as u64 {
        ensemble
            .members
            .par_iter_mut()
            .zip(ensemble.opts.par_iter_mut())
            .enumerate()
            .for_each(|(m, (net, opt))| {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(mix_seed(seed, m as u64), epoch));
                let mut order: Vec<usize> = (0..pairs.len()).collect();
                order.shuffle(&mut rng);
                let mut ws = Workspace::new();
                let mut grad = vec![0.0; net.n_params()];
                let mut batch = Vec::with_capacity(cfg.batch_pairs);
                for chunk in order.chunks(cfg.batch_pairs.max(1)) {
                    batch.clear();
                    batch.extend(chunk.iter().map(|&i| pairs[i]));
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    preference_loss(net, &batch, &mut ws, &mut grad);
                    if grad.iter().all(|g| g.is_finite()) {
                        clip_grad_norm(&mut grad, REWARD_MAX_GRAD_NORM);
                        opt.step(net.params_mut(), &grad);
                    }
                }
            });
        report.epochs += 1;
        report.accuracy = ensemble.accuracy(pairs);
        if report.accuracy >= cfg.target_accuracy {
            report.stopped_early = report.epochs < cfg.max_update;
            break;
        }
    }
    report
}
