use serde::{Deserialize, Serialize};

use crate::Scalar;

/// Per-feature running mean and variance (parallel Welford merge).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStandardizer<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub count: f64,
    /// Standardized values are clipped to `[-clip, clip]`.
    pub clip: T,
}

impl<T: Scalar> RunningStandardizer<T> {
    pub fn new(dim: usize, clip: f64) -> Self {
        RunningStandardizer {
            mean: vec![T::zero(); dim],
            var: vec![T::one(); dim],
            count: 0.0,
            clip: T::of(clip),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Merges the statistics of a batch of rows.
    pub fn update(&mut self, rows: &[T]) {
        let d = self.dim();
        assert!(rows.len().is_multiple_of(d));
        let n = rows.len() / d;
        if n == 0 {
            return;
        }
        let nb = T::of(n as f64);
        for j in 0..d {
            let col = rows.iter().skip(j).step_by(d);
            let mean_b = col.clone().copied().sum::<T>() / nb;
            let var_b = col.map(|&x| (x - mean_b) * (x - mean_b)).sum::<T>() / nb;
            if self.count == 0.0 {
                self.mean[j] = mean_b;
                self.var[j] = var_b;
                continue;
            }
            let na = T::of(self.count);
            let tot = na + nb;
            let delta = mean_b - self.mean[j];
            self.mean[j] += delta * nb / tot;
            self.var[j] = (self.var[j] * na + var_b * nb + delta * delta * na * nb / tot) / tot;
        }
        self.count += n as f64;
    }

    pub fn normalize_into(&self, x: &[T], out: &mut [T]) {
        let eps = T::of(1e-8);
        for (((o, &v), &m), &s2) in out.iter_mut().zip(x).zip(&self.mean).zip(&self.var) {
            *o = ((v - m) / (s2 + eps).sqrt()).max(-self.clip).min(self.clip);
        }
    }

    pub fn normalize(&self, x: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); x.len()];
        self.normalize_into(x, &mut out);
        out
    }
}

/// Scales rewards by the running standard deviation of the discounted return.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReturnScaler {
    stats: RunningStandardizer<f64>,
    ret: f64,
    gamma: f64,
}

impl ReturnScaler {
    pub fn new(gamma: f64) -> Self {
        ReturnScaler {
            stats: RunningStandardizer::new(1, f64::INFINITY),
            ret: 0.0,
            gamma,
        }
    }

    /// Updates the statistics along the reward stream and returns scaled
    /// rewards. `dones` resets the running return.
    pub fn scale(&mut self, rewards: &[f64], dones: &[bool]) -> Vec<f64> {
        let mut rets = Vec::with_capacity(rewards.len());
        for (&r, &d) in rewards.iter().zip(dones) {
            self.ret = self.ret * self.gamma + r;
            rets.push(self.ret);
            if d {
                self.ret = 0.0;
            }
        }
        self.stats.update(&rets);
        let std = (self.stats.var[0] + 1e-8).sqrt();
        rewards.iter().map(|r| (r / std).clamp(-10.0, 10.0)).collect()
    }

    pub fn std(&self) -> f64 {
        (self.stats.var[0] + 1e-8).sqrt()
    }
}
