//! Deterministic stand-in for a language-model generator.
//!
//! Without a preferred program in the prompt it draws a template from a
//! per-environment library spanning good, mediocre and misleading designs.
//! With one, it returns a small mutation of that program, so feedback
//! steers what comes next.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::prompt::GOOD_MARKER;
use crate::envkit::EnvId;
use crate::rewardlang::{parse, parse_expr, Component, RewardProgram};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MutationConfig {
    /// Relative half-width of multiplicative weight noise.
    pub weight_jitter: f64,
    /// Relative half-width of noise on one constant inside a component.
    pub temperature_jitter: f64,
    pub add_probability: f64,
    pub remove_probability: f64,
    /// Edits per mutation are drawn from 1 to this bound.
    pub max_edits: usize,
    /// Relative half-width of weight noise on library draws.
    pub library_jitter: f64,
}

impl Default for MutationConfig {
    fn default() -> Self {
        MutationConfig {
            weight_jitter: 0.2,
            temperature_jitter: 0.2,
            add_probability: 0.1,
            remove_probability: 0.1,
            max_edits: 2,
            library_jitter: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockConfig {
    pub library: EnvId,
    pub mutation: MutationConfig,
}

/// Library programs for `env`, best designs first.
pub fn library(env: EnvId) -> &'static [&'static str] {
    match env {
        EnvId::PointmassRun => &[
            "component speed = feature(vx);\ncomponent effort = feature(action_sq);\ntotal = 1.0*speed - 2.0*effort;",
            "component speed = tanh(feature(vx) / 1.0);\ncomponent effort = feature(action_sq);\ntotal = 1.0*speed - 0.8*effort;",
            "component progress = feature(x) - feature(prev_x);\ncomponent effort = feature(action_l1);\ntotal = 20.0*progress - 1.0*effort;",
            "component speed = exp((feature(vx) - 4.0) / 1.0);\ncomponent effort = feature(action_sq);\ntotal = 1.0*speed - 0.3*effort;",
            "component speed = feature(vx);\ncomponent center = abs(feature(y));\ncomponent effort = feature(action_sq);\ntotal = 0.5*speed - 1.0*center - 1.5*effort;",
            "component calm = abs(feature(vx)) + abs(feature(vy));\ncomponent alive = 1.0;\ntotal = -0.5*calm + 1.0*alive;",
        ],
        EnvId::CartpoleBalance => &[
            "component alive = 1.0;\ncomponent tilt = abs(feature(theta));\ntotal = 1.0*alive - 2.0*tilt;",
            "component upright = exp((feature(upright) - 1.0) / 0.01);\ntotal = 1.0*upright;",
            "component tilt = feature(theta) * feature(theta);\ncomponent drift = abs(feature(x));\ntotal = -5.0*tilt - 0.2*drift;",
            "component spin = abs(feature(theta_dot));\ncomponent alive = 1.0;\ntotal = 0.5*alive - 0.3*spin;",
            "component motion = abs(feature(x_dot));\ntotal = 1.0*motion;",
        ],
        EnvId::Hover2d => &[
            "component dist = feature(dist_to_target);\ncomponent effort = feature(action_sq);\ntotal = -1.0*dist - 0.1*effort;",
            "component near = exp(-feature(dist_to_target) / 2.0);\ntotal = 1.0*near;",
            "component dx = abs(feature(dx));\ncomponent dy = abs(feature(dy));\ntotal = -0.5*dx - 0.5*dy;",
            "component speed = feature(vx) * feature(vx) + feature(vy) * feature(vy);\ncomponent dist = feature(dist_to_target);\ntotal = -0.5*speed - 0.2*dist;",
            "component height = feature(y);\ntotal = 1.0*height;",
        ],
    }
}

/// Components that mutations may add, with their default weights.
fn component_pool(env: EnvId) -> &'static [(&'static str, &'static str, f64)] {
    match env {
        EnvId::PointmassRun => &[
            ("speed", "feature(vx)", 1.0),
            ("effort", "feature(action_sq)", -0.5),
            ("center", "abs(feature(y))", -0.5),
            ("lateral", "abs(feature(vy))", -0.2),
            ("progress", "feature(x) - feature(prev_x)", 20.0),
        ],
        EnvId::CartpoleBalance => &[
            ("alive", "1.0", 1.0),
            ("tilt", "abs(feature(theta))", -2.0),
            ("drift", "abs(feature(x))", -0.2),
            ("spin", "abs(feature(theta_dot))", -0.1),
        ],
        EnvId::Hover2d => &[
            ("dist", "feature(dist_to_target)", -1.0),
            ("effort", "feature(action_sq)", -0.1),
            ("near", "exp(-feature(dist_to_target) / 2.0)", 1.0),
            ("speed", "feature(vx) * feature(vx) + feature(vy) * feature(vy)", -0.1),
        ],
    }
}

fn rng_for(digest: &str, seed: u64, call_index: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(call_index.to_le_bytes());
    h.update(digest.as_bytes());
    let mut key = [0u8; 32];
    key.copy_from_slice(&h.finalize()[..32]);
    ChaCha8Rng::from_seed(key)
}

fn round_sig(v: f64, digits: i32) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    let scale = 10f64.powi(digits - 1 - v.abs().log10().floor() as i32);
    (v * scale).round() / scale
}

fn jitter(rng: &mut ChaCha8Rng, v: f64, half_width: f64) -> f64 {
    round_sig(v * rng.random_range(1.0 - half_width..=1.0 + half_width), 3)
}

/// The program inside the fenced block following the last preferred-program
/// marker, if any.
fn preferred_program(digest: &str) -> Option<RewardProgram> {
    let at = digest.rfind(GOOD_MARKER)?;
    let rest = &digest[at..];
    let open = rest.find("```")?;
    let body = &rest[open + 3..];
    let body = &body[body.find('\n')? + 1..];
    let close = body.find("```")?;
    parse(&body[..close]).ok()
}

/// Program text, in a fenced block, for one generation call. A pure
/// function of its arguments.
pub fn mock_generate(cfg: &MockConfig, digest: &str, seed: u64, call_index: u64) -> String {
    let mut rng = rng_for(digest, seed, call_index);
    let program = match preferred_program(digest) {
        Some(good) => mutate(cfg, &good, &mut rng),
        None => library_draw(cfg, &mut rng),
    };
    format!("```reward\n{}```", program.unparse())
}

fn library_draw(cfg: &MockConfig, rng: &mut ChaCha8Rng) -> RewardProgram {
    let lib = library(cfg.library);
    let mut p = parse(lib[rng.random_range(0..lib.len())]).expect("library programs parse");
    let w = cfg.mutation.library_jitter;
    for c in &mut p.components {
        c.weight = jitter(rng, c.weight, w);
    }
    p.source = p.unparse();
    p
}

fn mutate(cfg: &MockConfig, good: &RewardProgram, rng: &mut ChaCha8Rng) -> RewardProgram {
    let m = &cfg.mutation;
    let mut p = good.clone();
    let mut touched: Vec<String> = Vec::new();
    let n_edits = rng.random_range(1..=m.max_edits.max(1));
    for _ in 0..n_edits {
        let roll: f64 = rng.random();
        if roll < m.remove_probability && p.components.len() > 1 {
            let i = rng.random_range(0..p.components.len());
            let name = p.components.remove(i).name;
            touched.push(name);
        } else if roll < m.remove_probability + m.add_probability {
            let pool: Vec<_> = component_pool(cfg.library)
                .iter()
                .filter(|(name, ..)| p.component(name).is_none() && !touched.iter().any(|t| t == name))
                .collect();
            if pool.is_empty() {
                continue;
            }
            let (name, expr, weight) = pool[rng.random_range(0..pool.len())];
            p.components.push(Component {
                name: name.to_string(),
                expr: parse_expr(expr).expect("pool expressions parse"),
                weight: jitter(rng, *weight, m.weight_jitter),
            });
            touched.push(name.to_string());
        } else if !p.components.is_empty() {
            let i = rng.random_range(0..p.components.len());
            let c = &mut p.components[i];
            let mut n_consts = 0;
            c.expr.map_consts(&mut |v| {
                n_consts += 1;
                v
            });
            if n_consts > 0 && rng.random_bool(0.5) {
                let target = rng.random_range(0..n_consts);
                let factor = rng.random_range(1.0 - m.temperature_jitter..=1.0 + m.temperature_jitter);
                let mut seen = 0;
                c.expr.map_consts(&mut |v| {
                    let out = if seen == target { round_sig(v * factor, 3) } else { v };
                    seen += 1;
                    out
                });
            } else {
                c.weight = jitter(rng, c.weight, m.weight_jitter);
            }
            touched.push(c.name.clone());
        }
    }
    p.source = p.unparse();
    p
}
