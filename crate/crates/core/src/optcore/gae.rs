use super::OptError;
use crate::Scalar;

/// Generalized advantage estimates for one contiguous stream of steps.
///
/// `values[t]` is `V(s_t)`; `dones[t]` cuts bootstrapping after step `t`;
/// `last_value` is `V` of the state following the final step. Horizon
/// truncation is the caller's job: fold `γ·V(s_T)` into the reward and mark
/// the step done.
pub fn gae_bootstrapped<T: Scalar>(
    rewards: &[T],
    values: &[T],
    dones: &[bool],
    last_value: T,
    gamma: T,
    lambda: T,
) -> Result<Vec<T>, OptError> {
    let n = rewards.len();
    if values.len() != n || dones.len() != n {
        return Err(OptError::LengthMismatch(format!(
            "{n} rewards, {} values, {} dones",
            values.len(),
            dones.len()
        )));
    }
    let mut adv = vec![T::zero(); n];
    let mut next_adv = T::zero();
    let mut next_value = last_value;
    for t in (0..n).rev() {
        let live = if dones[t] { T::zero() } else { T::one() };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    Ok(adv)
}

/// Advantages with a zero bootstrap after the final step.
pub fn gae<T: Scalar>(rewards: &[T], values: &[T], dones: &[bool], gamma: T, lambda: T) -> Result<Vec<T>, OptError> {
    gae_bootstrapped(rewards, values, dones, T::zero(), gamma, lambda)
}
