use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ledger::QueryLedger;
use super::model::FeatureScaler;
use super::{LabelSource, PrefError};
use crate::envkit::{EnvId, EnvSpec, Trajectory};
use crate::rewardlang::{parse, CompiledProgram, RewardProgram};

/// Hand-written shaped reward per environment, used by the dense oracle.
///
/// * cartpole_balance: alive bonus minus squared pole angle.
/// * pointmass_run: forward velocity.
/// * hover2d: negative distance to the target minus a small thrust cost.
pub fn dense_oracle_program(env: EnvId) -> RewardProgram {
    let src = match env {
        EnvId::CartpoleBalance => {
            "component alive = 1.0;\ncomponent tilt = feature(theta) * feature(theta);\ntotal = 1.0*alive - 1.0*tilt;"
        }
        EnvId::PointmassRun => "component speed = feature(vx);\ntotal = 1.0*speed;",
        EnvId::Hover2d => {
            "component dist = feature(dist_to_target);\ncomponent effort = feature(action_l1);\ntotal = -1.0*dist - 0.01*effort;"
        }
    };
    parse(src).expect("built-in oracle programs parse")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TeacherKind {
    OracleDense,
    OracleSparse,
    Human,
}

impl TeacherKind {
    pub fn source(self) -> LabelSource {
        match self {
            TeacherKind::OracleDense => LabelSource::OracleDense,
            TeacherKind::OracleSparse => LabelSource::OracleSparse,
            TeacherKind::Human => LabelSource::Human,
        }
    }
}

/// Blocking route to a person comparing two trajectories. Returns 1 when
/// `sigma1` is preferred.
pub trait HumanChannel: Send {
    fn compare(&mut self, sigma0: &Trajectory, sigma1: &Trajectory) -> Result<u8, PrefError>;
}

pub struct Teacher {
    kind: TeacherKind,
    env: EnvId,
    dense: CompiledProgram,
    human: Option<Box<dyn HumanChannel>>,
}

impl Teacher {
    /// A deterministic oracle. `kind` must not be `Human`.
    pub fn oracle(kind: TeacherKind, spec: &EnvSpec) -> Result<Self, PrefError> {
        if kind == TeacherKind::Human {
            return Err(PrefError::ConfigInvalid("human teacher needs a channel".into()));
        }
        Ok(Teacher {
            kind,
            env: spec.id,
            dense: CompiledProgram::new(&dense_oracle_program(spec.id), spec)
                .expect("oracle programs use catalog features"),
            human: None,
        })
    }

    pub fn human(spec: &EnvSpec, channel: Box<dyn HumanChannel>) -> Self {
        Teacher {
            kind: TeacherKind::Human,
            env: spec.id,
            dense: CompiledProgram::new(&dense_oracle_program(spec.id), spec).expect("oracle programs use catalog features"),
            human: Some(channel),
        }
    }

    pub fn kind(&self) -> TeacherKind {
        self.kind
    }

    /// Trajectory return under the oracle's reward. Meaningless for humans.
    pub fn score(&self, t: &Trajectory) -> f64 {
        match self.kind {
            TeacherKind::OracleSparse => t.metric_total(),
            _ => t.steps.iter().map(|s| self.dense.total(&s.features)).sum(),
        }
    }

    fn judge(&mut self, sigma0: &Trajectory, sigma1: &Trajectory) -> Result<u8, PrefError> {
        match self.human.as_mut() {
            Some(ch) => ch.compare(sigma0, sigma1),
            // Ties go to sigma0.
            None => Ok(u8::from(self.score(sigma1) > self.score(sigma0))),
        }
    }
}

/// Stable content hash of a trajectory.
pub fn trajectory_id(t: &Trajectory) -> String {
    let mut h = Sha256::new();
    h.update(t.env_id.as_str().as_bytes());
    h.update(t.seed.to_le_bytes());
    for s in &t.steps {
        for v in &s.features {
            h.update(v.to_bits().to_le_bytes());
        }
        h.update([u8::from(s.done)]);
    }
    h.finalize()[..12].iter().map(|b| format!("{b:02x}")).collect()
}

/// A trajectory with its identity and reward-model inputs precomputed.
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub id: String,
    pub trajectory: Trajectory,
    /// Scaled feature rows, one per step.
    pub inputs: Vec<f64>,
}

impl TrajectoryRecord {
    pub fn new(trajectory: Trajectory, scaler: &FeatureScaler) -> Self {
        let inputs = trajectory.steps.iter().flat_map(|s| scaler.scale(&s.features)).collect();
        TrajectoryRecord {
            id: trajectory_id(&trajectory),
            trajectory,
            inputs,
        }
    }
}

/// Order-independent pair key; `flipped` is true when `a` sorts after `b`.
fn pair_key(a: &str, b: &str) -> (String, bool) {
    if a <= b {
        (format!("{a}|{b}"), false)
    } else {
        (format!("{b}|{a}"), true)
    }
}

/// Label for `σ1 ≻ σ0` (1) or not (0). A pair already answered in either
/// order is served from the ledger's cache without a charge.
pub fn teacher_label(
    ledger: &mut QueryLedger,
    teacher: &mut Teacher,
    sigma0: &TrajectoryRecord,
    sigma1: &TrajectoryRecord,
) -> Result<u8, PrefError> {
    if sigma0.trajectory.env_id != sigma1.trajectory.env_id || sigma0.trajectory.env_id != teacher.env {
        return Err(PrefError::EnvMismatch);
    }
    let (key, flipped) = pair_key(&sigma0.id, &sigma1.id);
    if let Some(l) = ledger.cached(&key) {
        return Ok(if flipped { 1 - l } else { l });
    }
    if ledger.remaining() == 0 {
        return Err(PrefError::BudgetExhausted { budget: ledger.budget() });
    }
    let label = teacher.judge(&sigma0.trajectory, &sigma1.trajectory)?;
    // Stored in canonical order.
    let canonical = if flipped { 1 - label } else { label };
    ledger.charge(&key, teacher.kind.source(), Some(canonical))?;
    Ok(label)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envkit::{rollout, EnvSpec, UniformRandomPolicy};

    fn records(env: EnvId, n: usize) -> (EnvSpec, Vec<TrajectoryRecord>) {
        let spec = EnvSpec::builtin(env);
        let scaler = FeatureScaler::new(&spec);
        let t = rollout(&spec, &UniformRandomPolicy::new(&spec), n, 0).unwrap();
        (spec, t.into_iter().map(|t| TrajectoryRecord::new(t, &scaler)).collect())
    }

    #[test]
    fn oracle_programs_validate() {
        for env in EnvId::ALL {
            let spec = EnvSpec::builtin(env);
            crate::rewardlang::validate(&dense_oracle_program(env), &spec).unwrap();
        }
    }

    #[test]
    fn labels_follow_strict_return_order_and_cache() {
        let (spec, r) = records(EnvId::CartpoleBalance, 4);
        let mut t = Teacher::oracle(TeacherKind::OracleSparse, &spec).unwrap();
        let mut ledger = QueryLedger::new(10);
        let l = teacher_label(&mut ledger, &mut t, &r[0], &r[1]).unwrap();
        let want = u8::from(r[1].trajectory.metric_total() > r[0].trajectory.metric_total());
        assert_eq!(l, want);
        assert_eq!(ledger.used(), 1);
        assert_eq!(teacher_label(&mut ledger, &mut t, &r[0], &r[1]).unwrap(), l);
        // The reversed question is the same comparison.
        let rev = teacher_label(&mut ledger, &mut t, &r[1], &r[0]).unwrap();
        assert_eq!(ledger.used(), 1);
        if r[0].trajectory.metric_total() != r[1].trajectory.metric_total() {
            assert_eq!(rev, 1 - l);
        }
    }

    #[test]
    fn equal_returns_prefer_sigma0() {
        let (spec, r) = records(EnvId::PointmassRun, 1);
        let mut t = Teacher::oracle(TeacherKind::OracleDense, &spec).unwrap();
        let mut copy = r[0].clone();
        copy.id.push('x');
        let mut ledger = QueryLedger::new(1);
        assert_eq!(teacher_label(&mut ledger, &mut t, &r[0], &copy).unwrap(), 0);
    }

    #[test]
    fn exhausted_budget_is_an_error_but_cache_still_answers() {
        let (spec, r) = records(EnvId::Hover2d, 3);
        let mut t = Teacher::oracle(TeacherKind::OracleDense, &spec).unwrap();
        let mut ledger = QueryLedger::new(1);
        let l = teacher_label(&mut ledger, &mut t, &r[0], &r[1]).unwrap();
        assert!(matches!(
            teacher_label(&mut ledger, &mut t, &r[0], &r[2]),
            Err(PrefError::BudgetExhausted { .. })
        ));
        assert_eq!(teacher_label(&mut ledger, &mut t, &r[0], &r[1]).unwrap(), l);
        assert_eq!(ledger.used(), 1);
    }

    #[test]
    fn cross_environment_pairs_rejected() {
        let (spec, a) = records(EnvId::PointmassRun, 1);
        let (_, b) = records(EnvId::Hover2d, 1);
        let mut t = Teacher::oracle(TeacherKind::OracleDense, &spec).unwrap();
        let mut ledger = QueryLedger::new(5);
        assert!(matches!(
            teacher_label(&mut ledger, &mut t, &a[0], &b[0]),
            Err(PrefError::EnvMismatch)
        ));
        assert_eq!(ledger.used(), 0);
    }

    #[test]
    fn ids_are_content_hashes() {
        let (_, r) = records(EnvId::CartpoleBalance, 2);
        assert_eq!(r[0].id, trajectory_id(&r[0].trajectory));
        assert_ne!(r[0].id, r[1].id);
    }
}
