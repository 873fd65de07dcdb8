//! Diagonal Gaussian policy distribution.

use rand::Rng;
use rand_distr::StandardNormal;

use super::network::ACTION_DIM;
use super::real::Real;
use crate::rng;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Log density of `a` under `N(mean, exp(log_std)²)`, summed over components.
pub fn log_prob<T: Real>(mean: &[T], log_std: &[T], a: &[T]) -> T {
    let half = T::from_f64(0.5);
    let c = T::from_f64(0.5 * LN_2PI);
    mean.iter()
        .zip(log_std)
        .zip(a)
        .fold(T::zero(), |acc, ((&m, &ls), &x)| {
            let z = (x - m) / ls.exp();
            acc - half * z * z - ls - c
        })
}

/// Gradients of [`log_prob`] with respect to the mean and log-std.
pub fn log_prob_grad<T: Real>(mean: &[T], log_std: &[T], a: &[T]) -> (Vec<T>, Vec<T>) {
    let mut dm = Vec::with_capacity(mean.len());
    let mut ds = Vec::with_capacity(mean.len());
    for ((&m, &ls), &x) in mean.iter().zip(log_std).zip(a) {
        let sigma = ls.exp();
        let z = (x - m) / sigma;
        dm.push(z / sigma);
        ds.push(z * z - T::one());
    }
    (dm, ds)
}

/// Differential entropy; its gradient with respect to each log-std is 1.
pub fn entropy<T: Real>(log_std: &[T]) -> T {
    let c = T::from_f64(0.5 * (1.0 + LN_2PI));
    log_std.iter().fold(T::zero(), |acc, &ls| acc + ls + c)
}

/// Draws one action with noise from `rng`. The action is unclamped and the
/// log-probability refers to it.
pub fn sample_with<R: Rng>(mean: &[f32], log_std: &[f32], rng: &mut R) -> ([f32; ACTION_DIM], f32) {
    let mut a = [0.0f32; ACTION_DIM];
    for k in 0..ACTION_DIM {
        let eps: f64 = rng.sample(StandardNormal);
        a[k] = (f64::from(mean[k]) + f64::from(log_std[k]).exp() * eps) as f32;
    }
    let lp = log_prob::<f64>(
        &mean.iter().map(|&v| f64::from(v)).collect::<Vec<_>>(),
        &log_std.iter().map(|&v| f64::from(v)).collect::<Vec<_>>(),
        &a.iter().map(|&v| f64::from(v)).collect::<Vec<_>>(),
    );
    (a, lp as f32)
}

/// Seeded single draw.
pub fn sample_action(mean: &[f32], log_std: &[f32], seed: u64) -> ([f32; ACTION_DIM], f32) {
    sample_with(mean, log_std, &mut rng::stream(seed, &[rng::tag::POLICY]))
}
