//! Per-component reward statistics recorded during training.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::printer::fmt_num;

pub const DEFAULT_TRACE_INTERVAL: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceCheckpoint {
    pub env_step: usize,
    pub component_means: BTreeMap<String, f64>,
    pub total_mean: f64,
    /// Mean task metric of episodes finished since the previous checkpoint.
    pub metric_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardTrace {
    pub program_id: String,
    pub checkpoints: Vec<TraceCheckpoint>,
}

impl RewardTrace {
    /// Checks strictly increasing steps and finite values.
    pub fn is_well_formed(&self) -> bool {
        self.checkpoints.windows(2).all(|w| w[0].env_step < w[1].env_step)
            && self.checkpoints.iter().all(|c| {
                c.total_mean.is_finite()
                    && c.metric_value.is_finite()
                    && c.component_means.values().all(|v| v.is_finite())
            })
    }

    /// Text for feedback prompts. Task-metric values are never included.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let names: Vec<&String> = self
            .checkpoints
            .first()
            .map(|c| c.component_means.keys().collect())
            .unwrap_or_default();
        for name in names {
            let vals: Vec<String> = self
                .checkpoints
                .iter()
                .map(|c| fmt_mean(c.component_means.get(name).copied().unwrap_or(0.0)))
                .collect();
            let _ = writeln!(out, "{name}: [{}]", vals.join(", "));
        }
        let totals: Vec<String> = self.checkpoints.iter().map(|c| fmt_mean(c.total_mean)).collect();
        let _ = writeln!(out, "total: [{}]", totals.join(", "));
        out
    }
}

fn fmt_mean(v: f64) -> String {
    // Four significant digits keep prompts short and stable.
    let r = format!("{v:.3e}").parse::<f64>().unwrap_or(v);
    fmt_num(r)
}

/// Accumulates step rewards and emits a checkpoint every `interval` steps
/// holding the means since the previous checkpoint.
#[derive(Debug, Clone)]
pub struct TraceRecorder {
    interval: usize,
    names: Vec<String>,
    sums: Vec<f64>,
    total_sum: f64,
    count: usize,
    metric_sum: f64,
    episodes: usize,
    last_metric: f64,
    trace: RewardTrace,
}

impl TraceRecorder {
    pub fn new(program_id: impl Into<String>, names: &[String], interval: usize) -> Self {
        assert!(interval > 0, "trace interval must be positive");
        TraceRecorder {
            interval,
            names: names.to_vec(),
            sums: vec![0.0; names.len()],
            total_sum: 0.0,
            count: 0,
            metric_sum: 0.0,
            episodes: 0,
            last_metric: 0.0,
            trace: RewardTrace {
                program_id: program_id.into(),
                checkpoints: Vec::new(),
            },
        }
    }

    /// Records the reward of the `env_step`-th environment step (1-based).
    /// Non-finite values are skipped so checkpoints stay finite.
    pub fn record(&mut self, env_step: usize, components: &[f64], total: f64) {
        if total.is_finite() && components.iter().all(|v| v.is_finite()) {
            for (s, v) in self.sums.iter_mut().zip(components) {
                *s += v;
            }
            self.total_sum += total;
            self.count += 1;
        }
        if env_step.is_multiple_of(self.interval) {
            self.checkpoint(env_step);
        }
    }

    pub fn end_episode(&mut self, metric_total: f64) {
        if metric_total.is_finite() {
            self.metric_sum += metric_total;
            self.episodes += 1;
        }
    }

    fn checkpoint(&mut self, env_step: usize) {
        if self.trace.checkpoints.last().is_some_and(|c| c.env_step >= env_step) {
            return;
        }
        let n = self.count.max(1) as f64;
        if self.episodes > 0 {
            self.last_metric = self.metric_sum / self.episodes as f64;
        }
        self.trace.checkpoints.push(TraceCheckpoint {
            env_step,
            component_means: self
                .names
                .iter()
                .cloned()
                .zip(self.sums.iter().map(|s| s / n))
                .collect(),
            total_mean: self.total_sum / n,
            metric_value: self.last_metric,
        });
        self.sums.iter_mut().for_each(|s| *s = 0.0);
        self.total_sum = 0.0;
        self.count = 0;
        self.metric_sum = 0.0;
        self.episodes = 0;
    }

    /// Closes a partial window, if any, at `env_step`.
    pub fn finish(mut self, env_step: usize) -> RewardTrace {
        if self.count > 0 {
            self.checkpoint(env_step);
        }
        self.trace
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoints_hold_window_means() {
        let names = vec!["a".to_string(), "b".to_string()];
        let mut r = TraceRecorder::new("0_1", &names, 4);
        for step in 1..=10 {
            let v = step as f64;
            r.record(step, &[v, 1.0], v + 1.0);
            if step == 3 {
                r.end_episode(7.0);
            }
        }
        let t = r.finish(10);
        assert_eq!(t.program_id, "0_1");
        let steps: Vec<usize> = t.checkpoints.iter().map(|c| c.env_step).collect();
        assert_eq!(steps, vec![4, 8, 10]);
        assert_eq!(t.checkpoints[0].component_means["a"], 2.5);
        assert_eq!(t.checkpoints[1].component_means["a"], 6.5);
        assert_eq!(t.checkpoints[2].total_mean, 10.5);
        assert_eq!(t.checkpoints[0].metric_value, 7.0);
        assert_eq!(t.checkpoints[2].metric_value, 7.0);
        assert!(t.is_well_formed());
    }

    #[test]
    fn non_finite_steps_are_dropped() {
        let names = vec!["a".to_string()];
        let mut r = TraceRecorder::new("x", &names, 2);
        r.record(1, &[f64::INFINITY], f64::INFINITY);
        r.record(2, &[3.0], 3.0);
        let t = r.finish(2);
        assert_eq!(t.checkpoints.len(), 1);
        assert_eq!(t.checkpoints[0].total_mean, 3.0);
        assert!(t.is_well_formed());
    }

    #[test]
    fn rendering_omits_the_metric() {
        let t = RewardTrace {
            program_id: "1_0".into(),
            checkpoints: vec![TraceCheckpoint {
                env_step: 4096,
                component_means: BTreeMap::from([("speed".to_string(), 0.123456)]),
                total_mean: 0.5,
                metric_value: 987.654,
            }],
        };
        let text = t.render();
        assert_eq!(text, "speed: [0.1235]\ntotal: [0.5]\n");
        assert!(!text.contains("987"));
    }
}
