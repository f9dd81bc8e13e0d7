use serde::{Deserialize, Serialize};

use crate::Scalar;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Scalar> Adam<T> {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Adam {
            lr: T::of(lr),
            beta1: T::of(0.9),
            beta2: T::of(0.999),
            eps: T::of(1e-8),
            m: vec![T::zero(); n_params],
            v: vec![T::zero(); n_params],
            t: 0,
        }
    }

    /// One descent step on `params` along `grad`.
    pub fn step(&mut self, params: &mut [T], grad: &[T]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let one = T::one();
        let bc1 = one - self.beta1.powi(self.t);
        let bc2 = one - self.beta2.powi(self.t);
        let step = self.lr * bc2.sqrt() / bc1;
        for ((p, &g), (m, v)) in params.iter_mut().zip(grad).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = self.beta1 * *m + (one - self.beta1) * g;
            *v = self.beta2 * *v + (one - self.beta2) * g * g;
            *p -= step * *m / (v.sqrt() + self.eps);
        }
    }
}

/// Rescales `grad` to global L2 norm at most `max_norm`; returns the norm
/// before clipping.
pub fn clip_grad_norm<T: Scalar>(grad: &mut [T], max_norm: T) -> T {
    let norm = grad.iter().map(|g| *g * *g).sum::<T>().sqrt();
    if norm > max_norm {
        let s = max_norm / (norm + T::of(1e-12));
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}
