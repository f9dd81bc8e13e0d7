//! 2D replay documents consumed by the selection UI.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{EnvError, EnvId, EnvSpec, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Body {
    pub id: String,
    pub x: f64,
    pub y: f64,
    pub angle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Frame {
    pub t: usize,
    pub bodies: Vec<Body>,
    pub components: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayDocument {
    pub env_id: EnvId,
    pub metric_total: f64,
    pub frames: Vec<Frame>,
}

fn body(id: &str, x: f64, y: f64, angle: f64) -> Body {
    Body {
        id: id.to_string(),
        x,
        y,
        angle,
    }
}

fn bodies_of(spec: &EnvSpec, features: &[f64]) -> Vec<Body> {
    let get = |name: &str| spec.feature_index(name).map_or(0.0, |i| features[i]);
    match spec.id {
        EnvId::CartpoleBalance => {
            let (x, theta) = (get("x"), get("theta"));
            vec![
                body("cart", x, 0.0, 0.0),
                body("pole", x + 0.5 * theta.sin(), 0.5 * theta.cos(), theta),
            ]
        }
        EnvId::PointmassRun => vec![body("runner", get("x"), get("y"), 0.0)],
        EnvId::Hover2d => {
            let (x, y) = (get("x"), get("y"));
            vec![
                body("craft", x, y, 0.0),
                body("target", x + get("dx"), y + get("dy"), 0.0),
            ]
        }
    }
}

/// Builds a replay; `components` maps a step's feature vector to the reward
/// component values shown alongside the frame.
pub fn export_replay<F>(spec: &EnvSpec, trajectory: &Trajectory, components: F) -> ReplayDocument
where
    F: Fn(&[f64]) -> BTreeMap<String, f64>,
{
    ReplayDocument {
        env_id: trajectory.env_id,
        metric_total: trajectory.metric_total(),
        frames: trajectory
            .steps
            .iter()
            .enumerate()
            .map(|(t, s)| Frame {
                t,
                bodies: bodies_of(spec, &s.features),
                components: components(&s.features),
            })
            .collect(),
    }
}

/// Parses and validates a replay document.
pub fn import_replay(bytes: &[u8]) -> Result<ReplayDocument, EnvError> {
    let doc: ReplayDocument =
        serde_json::from_slice(bytes).map_err(|e| EnvError::SchemaViolation(e.to_string()))?;
    doc.validate()?;
    Ok(doc)
}

impl ReplayDocument {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("replay documents hold only finite numbers")
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: String| Err(EnvError::SchemaViolation(m));
        if self.frames.is_empty() {
            return bad("replay has no frames".into());
        }
        if !self.metric_total.is_finite() {
            return bad("metric_total is not finite".into());
        }
        for (i, f) in self.frames.iter().enumerate() {
            if f.t != i {
                return bad(format!("frame {i} carries t = {}", f.t));
            }
            for b in &f.bodies {
                if ![b.x, b.y, b.angle].iter().all(|v| v.is_finite()) {
                    return bad(format!("non-finite coordinate on {} at frame {i}", b.id));
                }
            }
            if f.components.values().any(|v| !v.is_finite()) {
                return bad(format!("non-finite component value at frame {i}"));
            }
        }
        Ok(())
    }

    /// Checks the document describes `trajectory` frame for frame.
    pub fn validate_against(&self, trajectory: &Trajectory) -> Result<(), EnvError> {
        self.validate()?;
        if self.env_id != trajectory.env_id {
            return Err(EnvError::SchemaViolation("env_id mismatch".into()));
        }
        if self.frames.len() != trajectory.len() {
            return Err(EnvError::SchemaViolation(format!(
                "{} frames for a trajectory of length {}",
                self.frames.len(),
                trajectory.len()
            )));
        }
        Ok(())
    }
}
