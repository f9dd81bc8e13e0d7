//! Executability probe: evaluates a program on sampled and boundary
//! observations and rejects it if anything is non-finite.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ast::RewardProgram;
use super::eval::CompiledProgram;
use crate::envkit::{rollout_episode, EnvSpec, UniformRandomPolicy};

pub const DEFAULT_PROBES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Overflow,
    NotANumber,
    /// The program references something the environment does not provide.
    Unresolved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonExecutable {
    pub kind: FailureKind,
    /// Component name, or `total`.
    pub location: String,
    pub probe: String,
}

impl fmt::Display for NonExecutable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            FailureKind::Overflow => "overflow",
            FailureKind::NotANumber => "NaN",
            FailureKind::Unresolved => "unresolved feature",
        };
        write!(f, "{kind} in {} on {}", self.location, self.probe)
    }
}

/// Boundary observations: all-low, all-high, then each feature at each
/// endpoint with the rest at their midpoint. Unbounded features sit at 0.
fn boundary_observations(spec: &EnvSpec) -> Vec<(String, Vec<f64>)> {
    let bounds: Vec<(f64, f64)> = spec
        .feature_catalog
        .iter()
        .map(|f| f.bounds.unwrap_or((0.0, 0.0)))
        .collect();
    let mid: Vec<f64> = bounds.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect();
    let mut out = vec![
        ("all features at lower bound".to_string(), bounds.iter().map(|b| b.0).collect()),
        ("all features at upper bound".to_string(), bounds.iter().map(|b| b.1).collect()),
    ];
    for (i, f) in spec.feature_catalog.iter().enumerate() {
        for (end, v) in [("lower", bounds[i].0), ("upper", bounds[i].1)] {
            let mut x = mid.clone();
            x[i] = v;
            out.push((format!("{} at {end} bound", f.name), x));
        }
    }
    out
}

/// Feature vector `i` of the random stream: one uniformly chosen step of a
/// uniform-policy episode. Depends only on `(seed, i)`.
fn random_observation(spec: &EnvSpec, seed: u64, i: usize) -> Vec<f64> {
    let episode_seed = seed.wrapping_add(i as u64);
    let policy = UniformRandomPolicy::new(spec);
    let traj = rollout_episode(spec, &policy, episode_seed).expect("builtin uniform policy fits its spec");
    let mut rng = ChaCha8Rng::seed_from_u64(episode_seed ^ 0x5eed_0b5e_55ed_0001);
    traj.steps[rng.random_range(0..traj.len())].features.clone()
}

/// Every observation the probe uses, in evaluation order.
pub fn probe_observations(spec: &EnvSpec, n_probes: usize, seed: u64) -> Vec<(String, Vec<f64>)> {
    let mut out = boundary_observations(spec);
    out.extend((0..n_probes).map(|i| (format!("random probe {i}"), random_observation(spec, seed, i))));
    out
}

fn classify(v: f64) -> Option<FailureKind> {
    if v.is_nan() {
        Some(FailureKind::NotANumber)
    } else if v.is_infinite() {
        Some(FailureKind::Overflow)
    } else {
        None
    }
}

/// Ok iff every component and the total are finite on all probes. The probe
/// set for `n` is a prefix of the set for any larger `n`.
pub fn probe_executability(
    program: &RewardProgram,
    spec: &EnvSpec,
    n_probes: usize,
    seed: u64,
) -> Result<(), NonExecutable> {
    let compiled = CompiledProgram::new(program, spec).map_err(|e| NonExecutable {
        kind: FailureKind::Unresolved,
        location: e.to_string(),
        probe: "compilation".into(),
    })?;
    let mut vals = vec![0.0; compiled.n_components()];
    for (probe, x) in probe_observations(spec, n_probes, seed) {
        let total = compiled.eval_into(&x, &mut vals);
        for (name, v) in compiled.component_names().iter().zip(&vals) {
            if let Some(kind) = classify(*v) {
                return Err(NonExecutable {
                    kind,
                    location: name.clone(),
                    probe,
                });
            }
        }
        if let Some(kind) = classify(total) {
            return Err(NonExecutable {
                kind,
                location: "total".into(),
                probe,
            });
        }
    }
    Ok(())
}
