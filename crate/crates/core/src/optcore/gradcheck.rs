use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::Scalar;

/// Number of coordinates compared when the parameter vector is larger.
pub const GRAD_CHECK_COORDS: usize = 256;

/// Gradients below this magnitude are compared absolutely.
const GRAD_FLOOR: f64 = 1e-6;

/// Max relative error between the analytic gradient returned by `f` and
/// central differences, over a seeded random subset of coordinates.
pub fn grad_check<T, F>(mut f: F, params: &[T], eps: f64, seed: u64) -> f64
where
    T: Scalar,
    F: FnMut(&[T]) -> (T, Vec<T>),
{
    assert!((1e-6..=1e-3).contains(&eps), "eps outside [1e-6, 1e-3]");
    let (_, analytic) = f(params);
    assert_eq!(analytic.len(), params.len(), "gradient length");
    let n = params.len();
    let coords: Vec<usize> = if n <= GRAD_CHECK_COORDS {
        (0..n).collect()
    } else {
        sample(&mut ChaCha8Rng::seed_from_u64(seed), n, GRAD_CHECK_COORDS).into_vec()
    };
    let mut theta = params.to_vec();
    let mut worst = 0.0f64;
    for i in coords {
        let orig = theta[i];
        theta[i] = orig + T::of(eps);
        let up = f(&theta).0.as_f64();
        theta[i] = orig - T::of(eps);
        let down = f(&theta).0.as_f64();
        theta[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic[i].as_f64();
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_FLOOR);
        worst = worst.max(err);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_norm() {
        let theta: Vec<f64> = (0..300).map(|i| (i as f64 * 0.37).sin()).collect();
        let err = grad_check(
            |p: &[f64]| (p.iter().map(|x| x * x).sum(), p.iter().map(|x| 2.0 * x).collect()),
            &theta,
            1e-5,
            0,
        );
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let theta = vec![1.0, 2.0];
        let err = grad_check(|p: &[f64]| (p[0] * p[1], vec![p[1], 2.0 * p[0]]), &theta, 1e-5, 0);
        assert!(err > 0.1);
    }
}
