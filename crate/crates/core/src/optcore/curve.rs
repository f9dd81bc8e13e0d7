use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveSample {
    pub env_step: usize,
    pub metric: f64,
}

/// Task metric sampled at evaluation checkpoints; serialized as a JSON array.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MetricCurve {
    pub samples: Vec<CurveSample>,
}

impl MetricCurve {
    /// Appends a sample; steps must strictly increase.
    pub fn push(&mut self, env_step: usize, metric: f64) {
        if let Some(last) = self.samples.last() {
            assert!(env_step > last.env_step, "curve steps must increase");
        }
        self.samples.push(CurveSample { env_step, metric });
    }

    /// Task score of the run: the best sampled metric.
    pub fn rts(&self) -> Option<f64> {
        self.samples.iter().map(|s| s.metric).reduce(f64::max)
    }

    pub fn final_metric(&self) -> Option<f64> {
        self.samples.last().map(|s| s.metric)
    }

    pub fn is_well_formed(&self) -> bool {
        self.samples.windows(2).all(|w| w[0].env_step < w[1].env_step)
            && self.samples.iter().all(|s| s.metric.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn serializes_as_array() {
        let mut c = MetricCurve::default();
        c.push(8192, 1.5);
        assert_eq!(serde_json::to_string(&c).unwrap(), r#"[{"env_step":8192,"metric":1.5}]"#);
    }

    proptest! {
        #[test]
        fn rts_ignores_appended_lower_values(vals in proptest::collection::vec(-100.0f64..100.0, 1..20), low in 0.0f64..50.0) {
            let mut c = MetricCurve::default();
            for (i, v) in vals.iter().enumerate() {
                c.push((i + 1) * 10, *v);
            }
            let before = c.rts().unwrap();
            c.push(10_000, before - low);
            prop_assert_eq!(c.rts().unwrap(), before);
            prop_assert!(c.is_well_formed());
        }
    }
}
