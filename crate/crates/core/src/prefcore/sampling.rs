use super::model::RewardEnsemble;
use super::PrefError;

/// Population variance of one pair's member probabilities.
fn variance(p: &[f64]) -> f64 {
    let n = p.len() as f64;
    let mean = p.iter().sum::<f64>() / n;
    p.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}

/// Indices of the `mbsize` pairs whose member probabilities vary most,
/// highest first; ties go to the lower index.
pub fn select_by_disagreement(member_probs: &[Vec<f64>], mbsize: usize) -> Result<Vec<usize>, PrefError> {
    if member_probs.len() < mbsize {
        return Err(PrefError::PoolTooSmall {
            pool: member_probs.len(),
            mbsize,
        });
    }
    let mut scored: Vec<(usize, f64)> = member_probs.iter().map(|p| variance(p)).enumerate().collect();
    // Stable sort keeps index order among equal variances.
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok(scored.into_iter().take(mbsize).map(|(i, _)| i).collect())
}

/// Disagreement sampling over a pool of `(σ0, σ1)` input pairs.
pub fn disagreement_sample(
    pool: &[(&[f64], &[f64])],
    ensemble: &RewardEnsemble,
    mbsize: usize,
) -> Result<Vec<usize>, PrefError> {
    if pool.len() < mbsize {
        return Err(PrefError::PoolTooSmall { pool: pool.len(), mbsize });
    }
    let probs: Vec<Vec<f64>> = pool.iter().map(|(a, b)| ensemble.member_probs(a, b)).collect();
    select_by_disagreement(&probs, mbsize)
}

/// `(index, label)` for every pair whose confidence `max(P, 1 - P)`
/// reaches `tau`, where `P` is the ensemble probability. Label 1 iff
/// `P > 0.5`.
pub fn pseudo_labels_from_probs(probs: &[f64], tau: f64) -> Result<Vec<(usize, u8)>, PrefError> {
    if !(tau > 0.5 && tau < 1.0) {
        return Err(PrefError::ConfigInvalid(format!("threshold {tau} outside (0.5, 1)")));
    }
    Ok(probs
        .iter()
        .enumerate()
        .filter(|(_, &p)| p.max(1.0 - p) >= tau)
        .map(|(i, &p)| (i, u8::from(p > 0.5)))
        .collect())
}

pub fn surf_pseudo_label(
    pairs: &[(&[f64], &[f64])],
    ensemble: &RewardEnsemble,
    tau: f64,
) -> Result<Vec<(usize, u8)>, PrefError> {
    let probs: Vec<f64> = pairs.iter().map(|(a, b)| ensemble.predictor_prob(a, b)).collect();
    pseudo_labels_from_probs(&probs, tau)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn only_disagreeing_pair_comes_first() {
        let mut probs = vec![vec![0.5; 3]; 5];
        probs[3] = vec![0.1, 0.9, 0.5];
        assert_eq!(select_by_disagreement(&probs, 1).unwrap(), vec![3]);
        assert_eq!(select_by_disagreement(&probs, 3).unwrap(), vec![3, 0, 1]);
    }

    #[test]
    fn whole_pool_and_too_small_pool() {
        let probs = vec![vec![0.2, 0.4, 0.6]; 4];
        assert_eq!(select_by_disagreement(&probs, 4).unwrap(), vec![0, 1, 2, 3]);
        assert!(matches!(
            select_by_disagreement(&probs, 5),
            Err(PrefError::PoolTooSmall { pool: 4, mbsize: 5 })
        ));
    }

    #[test]
    fn threshold_arithmetic() {
        let out = pseudo_labels_from_probs(&[0.96, 0.70, 0.04, 0.5], 0.95).unwrap();
        assert_eq!(out, vec![(0, 1), (2, 0)]);
        assert!(pseudo_labels_from_probs(&[0.5], 0.5 + 1e-9).unwrap().is_empty());
        assert!(pseudo_labels_from_probs(&[0.9], 0.5).is_err());
        assert!(pseudo_labels_from_probs(&[0.9], 1.0).is_err());
    }
}
