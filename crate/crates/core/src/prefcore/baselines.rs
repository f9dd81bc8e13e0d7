//! PrefPPO, PEBBLE and SURF drivers.
//!
//! All three share one reward-learning core: complete episodes enter a
//! bounded pool; every `reward_training_interval` steps, while the ledger
//! has budget, uniformly drawn candidate pairs are narrowed by ensemble
//! disagreement, labelled by the teacher and the ensemble is retrained on
//! every label so far. The first `M` steps train the agent on the k-NN
//! state-entropy bonus instead of the model.

use std::collections::VecDeque;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ledger::QueryLedger;
use super::model::{train_reward_model, RewardEnsemble, RewardTrainConfig, TrainingPair};
use super::sampling::{pseudo_labels_from_probs, select_by_disagreement};
use super::teacher::{teacher_label, Teacher, TrajectoryRecord};
use super::{bradley_terry, PrefError};
use crate::envkit::{EnvSpec, Trajectory};
use crate::optcore::{
    mix_seed, BatchReward, EntropyBonus, MetricCurve, OffPolicyLearner, PolicySpec, PpoLearner, TrainConfig,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreferenceConfig {
    pub ensemble_size: usize,
    pub reward_hidden: Vec<usize>,
    pub reward: RewardTrainConfig,
    /// Environment steps between reward-model updates.
    pub reward_training_interval: usize,
    /// Queries requested per update.
    pub mb_size: usize,
    /// Uniform candidates drawn per query before disagreement selection.
    pub candidate_factor: usize,
    /// Most recent complete episodes kept for querying.
    pub pool_capacity: usize,
    /// Confidence needed for a pseudo label.
    pub surf_threshold: f64,
    /// Unlabelled pairs drawn per update for pseudo labelling.
    pub surf_unlabeled: usize,
}

impl Default for PreferenceConfig {
    fn default() -> Self {
        PreferenceConfig {
            ensemble_size: 3,
            reward_hidden: vec![32, 32],
            reward: RewardTrainConfig::default(),
            reward_training_interval: 16384,
            mb_size: 32,
            candidate_factor: 10,
            pool_capacity: 256,
            surf_threshold: 0.95,
            surf_unlabeled: 64,
        }
    }
}

impl PreferenceConfig {
    pub fn validate(&self) -> Result<(), PrefError> {
        let bad = |m: &str| Err(PrefError::ConfigInvalid(m.to_string()));
        if self.ensemble_size < 3 {
            return bad("ensemble_size must be at least 3");
        }
        if self.reward_training_interval == 0 || self.mb_size == 0 || self.candidate_factor == 0 {
            return bad("interval, mb_size and candidate_factor must be positive");
        }
        if self.pool_capacity < 2 {
            return bad("pool_capacity must hold a pair");
        }
        if !(self.surf_threshold > 0.5 && self.surf_threshold < 1.0) {
            return bad("surf_threshold must lie in (0.5, 1)");
        }
        if self.reward.batch_pairs == 0 || !(self.reward.lr > 0.0) {
            return bad("reward batch_pairs and lr must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub train: TrainConfig,
    pub preference: PreferenceConfig,
}

pub struct BaselineOutcome {
    pub policy: PolicySpec<f64>,
    pub curve: MetricCurve,
    pub ledger: QueryLedger,
    pub ensemble: RewardEnsemble,
    /// Reward-model updates performed.
    pub updates: usize,
    /// Accuracy after the last update.
    pub final_accuracy: Option<f64>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Variant {
    PrefPpo,
    Pebble,
    Surf,
}

struct Labeled {
    sigma0: Arc<TrajectoryRecord>,
    sigma1: Arc<TrajectoryRecord>,
    label: u8,
}

/// Pool, labels and ensemble for one run.
struct RewardLearner<'t> {
    variant: Variant,
    cfg: PreferenceConfig,
    ensemble: RewardEnsemble,
    teacher: &'t mut Teacher,
    ledger: QueryLedger,
    pool: VecDeque<Arc<TrajectoryRecord>>,
    labeled: Vec<Labeled>,
    rng: ChaCha8Rng,
    seed: u64,
    updates: usize,
    final_accuracy: Option<f64>,
}

impl<'t> RewardLearner<'t> {
    fn new(
        variant: Variant,
        spec: &EnvSpec,
        cfg: &PreferenceConfig,
        teacher: &'t mut Teacher,
        ledger: QueryLedger,
        seed: u64,
    ) -> Result<Self, PrefError> {
        cfg.validate()?;
        if ledger.budget() == 0 {
            return Err(PrefError::DegenerateConfig("query budget Q must be at least 1".into()));
        }
        let ensemble = RewardEnsemble::new(spec, cfg.ensemble_size, &cfg.reward_hidden, cfg.reward.lr, mix_seed(seed, 1))?;
        Ok(RewardLearner {
            variant,
            cfg: cfg.clone(),
            ensemble,
            teacher,
            ledger,
            pool: VecDeque::new(),
            labeled: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(mix_seed(seed, 2)),
            seed,
            updates: 0,
            final_accuracy: None,
        })
    }

    fn add(&mut self, t: Trajectory) {
        if t.is_empty() {
            return;
        }
        if self.pool.len() == self.cfg.pool_capacity {
            self.pool.pop_front();
        }
        self.pool.push_back(Arc::new(TrajectoryRecord::new(t, self.ensemble.scaler())));
    }

    fn can_query(&self) -> bool {
        self.ledger.remaining() > 0 && self.pool.len() >= 2
    }

    /// `count` uniformly drawn pairs of distinct pool entries.
    fn draw_pairs(&mut self, count: usize) -> Vec<(usize, usize)> {
        let n = self.pool.len();
        (0..count)
            .map(|_| {
                let a = self.rng.random_range(0..n);
                let b = (a + self.rng.random_range(1..n)) % n;
                (a, b)
            })
            .collect()
    }

    /// Per-member probabilities for pool pairs, summing each episode once.
    fn member_probs(&self, pairs: &[(usize, usize)]) -> Vec<Vec<f64>> {
        let mut returns: Vec<Option<Vec<f64>>> = vec![None; self.pool.len()];
        for &(a, b) in pairs {
            for i in [a, b] {
                if returns[i].is_none() {
                    returns[i] = Some(self.ensemble.member_returns(&self.pool[i].inputs));
                }
            }
        }
        pairs
            .iter()
            .map(|&(a, b)| {
                let (ra, rb) = (returns[a].as_ref().expect("filled"), returns[b].as_ref().expect("filled"));
                ra.iter().zip(rb).map(|(x, y)| bradley_terry(*x, *y)).collect()
            })
            .collect()
    }

    /// One query round plus reward-model training. Returns false when no
    /// query could be made.
    fn update(&mut self) -> Result<bool, PrefError> {
        if !self.can_query() {
            return Ok(false);
        }
        let want = self.cfg.mb_size.min(self.ledger.remaining());
        let candidates = self.draw_pairs(want * self.cfg.candidate_factor);
        let probs = self.member_probs(&candidates);
        let chosen = select_by_disagreement(&probs, want)?;
        for &c in &chosen {
            let (a, b) = candidates[c];
            let (s0, s1) = (self.pool[a].clone(), self.pool[b].clone());
            let before = self.ledger.used();
            let label = match teacher_label(&mut self.ledger, self.teacher, &s0, &s1) {
                Ok(l) => l,
                Err(PrefError::BudgetExhausted { .. }) => break,
                Err(e) => return Err(e),
            };
            // Cached answers are already in the training set.
            if self.ledger.used() > before {
                self.labeled.push(Labeled {
                    sigma0: s0,
                    sigma1: s1,
                    label,
                });
            }
        }
        // Pseudo labels are recomputed each round and never stored.
        let pseudo: Vec<((usize, usize), u8)> = if self.variant == Variant::Surf {
            let unlabeled = self.draw_pairs(self.cfg.surf_unlabeled);
            let mean: Vec<f64> = self
                .member_probs(&unlabeled)
                .iter()
                .map(|p| p.iter().sum::<f64>() / p.len() as f64)
                .collect();
            pseudo_labels_from_probs(&mean, self.cfg.surf_threshold)?
                .into_iter()
                .map(|(i, l)| (unlabeled[i], l))
                .collect()
        } else {
            Vec::new()
        };
        let pool = &self.pool;
        let pairs: Vec<TrainingPair<'_>> = self
            .labeled
            .iter()
            .map(|l| TrainingPair {
                x0: &l.sigma0.inputs,
                x1: &l.sigma1.inputs,
                label: l.label,
            })
            .chain(pseudo.iter().map(|&((a, b), label)| TrainingPair {
                x0: &pool[a].inputs,
                x1: &pool[b].inputs,
                label,
            }))
            .collect();
        let acc = train_reward_model(
            &mut self.ensemble,
            &pairs,
            &self.cfg.reward,
            mix_seed(self.seed, 100 + self.updates as u64),
        );
        self.updates += 1;
        self.final_accuracy = Some(acc);
        Ok(true)
    }

    fn finish(self, policy: PolicySpec<f64>, curve: MetricCurve) -> BaselineOutcome {
        BaselineOutcome {
            policy,
            curve,
            ledger: self.ledger,
            ensemble: self.ensemble,
            updates: self.updates,
            final_accuracy: self.final_accuracy,
        }
    }
}

fn open_ledger(q: usize, path: Option<&Path>) -> Result<QueryLedger, PrefError> {
    match path {
        Some(p) => QueryLedger::open(p, q),
        None => Ok(QueryLedger::new(q)),
    }
}

/// PPO on the learned reward, with entropy pretraining. The ledger is
/// appended to `ledger_path` when given.
pub fn run_prefppo(
    spec: &EnvSpec,
    teacher: &mut Teacher,
    q: usize,
    cfg: &BaselineConfig,
    seed: u64,
    ledger_path: Option<&Path>,
) -> Result<BaselineOutcome, PrefError> {
    let ppo = &cfg.train.ppo;
    let mut rl = RewardLearner::new(Variant::PrefPpo, spec, &cfg.preference, teacher, open_ledger(q, ledger_path)?, seed)?;
    let mut learner = PpoLearner::new(spec, ppo, seed)?;
    learner.keep_trajectories = true;
    let pretrain = cfg.train.unsupervised.pretrain_steps(ppo.total_steps);
    let bonus = EntropyBonus::new(spec, cfg.train.unsupervised.k);
    let mut last_update: Option<usize> = None;
    while learner.steps_done() < ppo.total_steps {
        let mut r = learner.collect(ppo.rollout_steps.min(ppo.total_steps - learner.steps_done()))?;
        for t in std::mem::take(&mut r.trajectories) {
            rl.add(t);
        }
        let rewards = if r.start_step < pretrain {
            bonus.rewards(&r)?
        } else {
            let now = learner.steps_done();
            let due = last_update.is_none_or(|s| now - s >= rl.cfg.reward_training_interval);
            if due && rl.update()? {
                last_update = Some(now);
            }
            rl.ensemble.rewards(&r.features, r.len())
        };
        learner.update(&r, &rewards)?;
        debug_assert!(rl.ledger.used() <= rl.ledger.budget());
    }
    learner.finish_curve()?;
    let (policy, curve) = learner.into_parts();
    Ok(rl.finish(policy, curve))
}

fn run_offpolicy(
    variant: Variant,
    spec: &EnvSpec,
    teacher: &mut Teacher,
    q: usize,
    cfg: &BaselineConfig,
    seed: u64,
    ledger_path: Option<&Path>,
) -> Result<BaselineOutcome, PrefError> {
    let off = &cfg.train.offpolicy;
    let mut rl = RewardLearner::new(variant, spec, &cfg.preference, teacher, open_ledger(q, ledger_path)?, seed)?;
    let mut learner = OffPolicyLearner::new(spec, off, seed)?;
    learner.keep_trajectories = true;
    let pretrain = cfg.train.unsupervised.pretrain_steps(off.total_steps);
    let k = cfg.train.unsupervised.k;
    let mut last_update: Option<usize> = None;
    let mut relabeled_after_pretraining = false;
    while learner.steps_done() < off.total_steps {
        let pretraining = learner.steps_done() < pretrain;
        let finished = if pretraining {
            // Stored rewards are placeholders; the entropy bonus replaces them.
            learner.env_step(&mut |_, _| 0.0)?
        } else {
            let ens = &rl.ensemble;
            learner.env_step(&mut |f, _| ens.rewards(f, 1)[0])?
        };
        if let Some(t) = finished {
            rl.add(t);
        }
        if !pretraining {
            let now = learner.steps_done();
            let due = last_update.is_none_or(|s| now - s >= rl.cfg.reward_training_interval);
            let updated = due && rl.update()?;
            if updated {
                last_update = Some(now);
            }
            if updated || !relabeled_after_pretraining {
                learner.buffer.relabel(&rl.ensemble);
                relabeled_after_pretraining = true;
            }
        }
        learner.train_step(pretraining.then_some(k))?;
    }
    learner.finish_curve()?;
    let (policy, curve) = learner.into_parts();
    Ok(rl.finish(policy, curve))
}

/// Soft actor-critic on the learned reward, relabelling the whole replay
/// buffer after every reward-model update.
pub fn run_pebble(
    spec: &EnvSpec,
    teacher: &mut Teacher,
    q: usize,
    cfg: &BaselineConfig,
    seed: u64,
    ledger_path: Option<&Path>,
) -> Result<BaselineOutcome, PrefError> {
    run_offpolicy(Variant::Pebble, spec, teacher, q, cfg, seed, ledger_path)
}

/// PEBBLE plus confident pseudo labels on unlabelled pairs at every update.
pub fn run_surf(
    spec: &EnvSpec,
    teacher: &mut Teacher,
    q: usize,
    cfg: &BaselineConfig,
    seed: u64,
    ledger_path: Option<&Path>,
) -> Result<BaselineOutcome, PrefError> {
    run_offpolicy(Variant::Surf, spec, teacher, q, cfg, seed, ledger_path)
}
