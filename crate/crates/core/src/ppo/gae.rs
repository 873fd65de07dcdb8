use crate::{Error, Result};

/// `initial · (1 − progress)`, with progress clamped to [0, 1].
pub fn linear_schedule(initial: f64, progress: f64) -> f64 {
    initial * (1.0 - progress.clamp(0.0, 1.0))
}

/// Generalized advantage estimates for one environment's step sequence.
///
/// `next_values[t]` is the value of the observation that followed step `t`
/// (ignored when `terminated[t]`). Any episode end (`terminated` or
/// `truncated`) cuts the backward recursion; truncation still bootstraps
/// from `next_values[t]`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    next_values: &[f64],
    terminated: &[bool],
    truncated: &[bool],
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    for (name, len) in [
        ("values", values.len()),
        ("next_values", next_values.len()),
        ("terminated", terminated.len()),
        ("truncated", truncated.len()),
    ] {
        if len != n {
            return Err(Error::LengthMismatch(format!("{name} has {len} entries, rewards has {n}")));
        }
    }
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let bootstrap = if terminated[t] { 0.0 } else { gamma * next_values[t] };
        let delta = rewards[t] + bootstrap - values[t];
        let carry = if terminated[t] || truncated[t] { 0.0 } else { gamma * lambda * next_adv };
        adv[t] = delta + carry;
        next_adv = adv[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Convenience form for a single trajectory: `values` has one extra entry
/// (the bootstrap value after the last step) and `dones` marks terminal
/// steps.
pub fn compute_gae_terminal(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if values.len() != rewards.len() + 1 {
        return Err(Error::LengthMismatch(format!(
            "values must have one bootstrap entry more than rewards ({} vs {})",
            values.len(),
            rewards.len()
        )));
    }
    let n = rewards.len();
    compute_gae(rewards, &values[..n], &values[1..], dones, &vec![false; dones.len()], gamma, lambda)
}

/// In-place `(a − mean) / (std + 1e-8)` with the population standard
/// deviation.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let denom = var.sqrt() + 1e-8;
    adv.iter_mut().for_each(|a| *a = (*a - mean) / denom);
}
