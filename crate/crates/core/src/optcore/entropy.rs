use super::OptError;
use crate::Scalar;

/// Particle-based state-entropy bonus: `ln(1 + d_k(i))`, where `d_k(i)` is
/// the Euclidean distance from row `i` to its k-th nearest other row.
/// Rows are taken as given; standardize them first for comparable scales.
pub fn state_entropy_reward<T: Scalar>(points: &[T], dim: usize, k: usize) -> Result<Vec<T>, OptError> {
    assert!(dim > 0 && points.len().is_multiple_of(dim), "points must be rows of `dim`");
    let n = points.len() / dim;
    if k == 0 || n <= k {
        return Err(OptError::BatchTooSmall { batch: n, k });
    }
    let rows: Vec<&[T]> = points.chunks_exact(dim).collect();
    let mut d2 = Vec::with_capacity(n - 1);
    Ok(rows
        .iter()
        .enumerate()
        .map(|(i, a)| {
            d2.clear();
            d2.extend(rows.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, b)| {
                a.iter().zip(*b).map(|(x, y)| (*x - *y) * (*x - *y)).sum::<T>()
            }));
            let (_, kth, _) = d2.select_nth_unstable_by(k - 1, |x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
            (T::one() + kth.sqrt()).ln()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collinear_points() {
        let r = state_entropy_reward(&[0.0, 1.0, 3.0], 1, 1).unwrap();
        let expected = [2f64.ln(), 2f64.ln(), 3f64.ln()];
        for (a, b) in r.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_points_give_zero() {
        let r = state_entropy_reward(&[1.5f32; 12], 3, 2).unwrap();
        assert!(r.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn batch_too_small() {
        assert!(matches!(
            state_entropy_reward(&[0.0, 1.0], 1, 2),
            Err(OptError::BatchTooSmall { batch: 2, k: 2 })
        ));
    }
}
