//! Clipped-surrogate loss, its gradients, and the optimizer.

use rand::seq::SliceRandom;
use rand::Rng;

use super::buffer::RolloutBuffer;
use crate::nn::checkpoint::OptimizerState;
use crate::nn::{backward, entropy, forward, log_prob, log_prob_grad, NetInput, OutputGrads, PolicyParams, Real, Tensor};
use crate::nn::{ACTION_DIM, LOG_STD_MAX, LOG_STD_MIN};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossCoefs {
    pub clip: f64,
    pub entropy_coef: f64,
    pub vf_coef: f64,
}

/// Per-minibatch training data.
#[derive(Debug, Clone, Copy)]
pub struct Minibatch<'a> {
    pub inputs: &'a [&'a NetInput],
    pub actions: &'a [[f32; ACTION_DIM]],
    pub old_log_probs: &'a [f64],
    pub advantages: &'a [f64],
    pub returns: &'a [f64],
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossStats {
    pub total: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

/// Loss value and exact parameter gradients for one minibatch:
///
/// `L = −mean(min(ρA, clip(ρ, 1±ε)A)) + c_v·mean((V − R)²) − c_e·H`
pub fn loss_and_grads<T: Real>(
    params: &PolicyParams<T>,
    mb: &Minibatch<'_>,
    coefs: &LossCoefs,
) -> Result<(LossStats, PolicyParams<T>)> {
    let n = mb.inputs.len();
    let (out, cache) = forward(params, mb.inputs)?;
    let nf = n as f64;
    let t = |v: f64| T::from_f64(v);
    let mut grads = OutputGrads::<T>::zeros(n);
    let mut stats = LossStats::default();
    let mut clipped = 0usize;

    for i in 0..n {
        let mean = &out.mean[i * ACTION_DIM..(i + 1) * ACTION_DIM];
        let a: Vec<T> = mb.actions[i].iter().map(|&x| t(f64::from(x))).collect();
        let lp = log_prob(mean, &out.log_std, &a);
        let log_ratio = lp.as_f64() - mb.old_log_probs[i];
        let ratio = log_ratio.exp();
        let adv = mb.advantages[i];
        let surr1 = ratio * adv;
        let clipped_ratio = ratio.clamp(1.0 - coefs.clip, 1.0 + coefs.clip);
        let surr2 = clipped_ratio * adv;
        let objective = surr1.min(surr2);
        debug_assert!(objective <= surr1.max(surr2));
        stats.policy_loss -= objective / nf;
        stats.approx_kl += ((ratio - 1.0) - log_ratio) / nf;
        if (ratio - 1.0).abs() > coefs.clip {
            clipped += 1;
        }
        // Only the unclipped branch depends on the parameters.
        let dlp = if surr1 <= surr2 { -adv * ratio / nf } else { 0.0 };
        if dlp != 0.0 {
            let (dm, ds) = log_prob_grad(mean, &out.log_std, &a);
            for k in 0..ACTION_DIM {
                grads.mean[i * ACTION_DIM + k] = t(dlp) * dm[k];
                grads.log_std[k] += t(dlp) * ds[k];
            }
        }
        let err = out.value[i].as_f64() - mb.returns[i];
        stats.value_loss += err * err / nf;
        grads.value[i] = t(coefs.vf_coef * 2.0 * err / nf);
    }
    let h = entropy(&out.log_std).as_f64();
    stats.entropy = h;
    for g in &mut grads.log_std {
        *g -= t(coefs.entropy_coef);
    }
    stats.clip_fraction = clipped as f64 / nf;
    stats.total = stats.policy_loss + coefs.vf_coef * stats.value_loss - coefs.entropy_coef * h;
    if !stats.total.is_finite() {
        return Err(Error::NonFiniteLoss(format!(
            "policy {} value {} entropy {} (log_std {:?}, first mean {:?})",
            stats.policy_loss,
            stats.value_loss,
            h,
            out.log_std.iter().map(|v| v.as_f64()).collect::<Vec<_>>(),
            out.mean.iter().take(ACTION_DIM).map(|v| v.as_f64()).collect::<Vec<_>>(),
        )));
    }
    Ok((stats, backward(params, &cache, &grads)))
}

/// Scales `grads` so their global L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm(grads: &mut PolicyParams<f32>, max_norm: f64) -> f64 {
    let norm = grads.sum_sq().sqrt();
    if norm > max_norm {
        grads.scale((max_norm / (norm + 1e-6)) as f32);
    }
    norm
}

/// Adaptive-moment optimizer with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(params: &PolicyParams<f32>, eps: f64) -> Self {
        let zeros: Vec<Vec<f32>> = params.tensors.iter().map(|t| vec![0.0; t.len()]).collect();
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn apply(&mut self, params: &mut PolicyParams<f32>, grads: &PolicyParams<f32>, lr: f64) {
        self.step += 1;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let step_size = (lr / bc1) as f32;
        let bc2_sqrt = bc2.sqrt() as f32;
        let eps = self.eps as f32;
        for (i, (p, g)) in params.tensors.iter_mut().zip(&grads.tensors).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.data.len() {
                let gj = g.data[j];
                m[j] = b1 * m[j] + (1.0 - b1) * gj;
                v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
                p.data[j] -= step_size * m[j] / (v[j].sqrt() / bc2_sqrt + eps);
            }
        }
        params.clamp_log_std();
    }

    pub fn state(&self, params: &PolicyParams<f32>) -> OptimizerState {
        let wrap = |bufs: &[Vec<f32>]| {
            bufs.iter()
                .zip(&params.tensors)
                .map(|(b, t)| Tensor::from_vec(&t.shape, b.clone()))
                .collect()
        };
        OptimizerState {
            step: self.step,
            m: wrap(&self.m),
            v: wrap(&self.v),
        }
    }

    pub fn from_state(state: &OptimizerState, eps: f64) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps,
            step: state.step,
            m: state.m.iter().map(|t| t.data.clone()).collect(),
            v: state.v.iter().map(|t| t.data.clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateConfig {
    pub coefs: LossCoefs,
    pub lr: f64,
    pub n_epochs: usize,
    pub minibatch_size: usize,
    pub max_grad_norm: f64,
}

/// Mean statistics over all minibatches of an update.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UpdateStats {
    pub loss: LossStats,
    pub grad_norm: f64,
    pub minibatches: usize,
}

/// `n_epochs` passes over the buffer in shuffled minibatches. The buffer's
/// advantages must already be computed; they are normalized here.
pub fn ppo_update<R: Rng>(
    params: &mut PolicyParams<f32>,
    adam: &mut Adam,
    buffer: &RolloutBuffer,
    config: &UpdateConfig,
    rng: &mut R,
) -> Result<UpdateStats> {
    let n = buffer.len();
    if config.minibatch_size == 0 || n % config.minibatch_size != 0 {
        return Err(Error::Config(format!(
            "minibatch size {} does not divide the buffer size {n}",
            config.minibatch_size
        )));
    }
    let mut adv = buffer.advantages().to_vec();
    super::gae::normalize_advantages(&mut adv);
    let returns = buffer.returns();
    let old_lp: Vec<f64> = buffer.log_probs.iter().map(|&v| f64::from(v)).collect();

    let mut idx: Vec<usize> = (0..n).collect();
    let mut stats = UpdateStats::default();
    for _ in 0..config.n_epochs {
        idx.shuffle(rng);
        for chunk in idx.chunks(config.minibatch_size) {
            let inputs: Vec<&NetInput> = chunk.iter().map(|&i| &buffer.inputs[i]).collect();
            let actions: Vec<[f32; ACTION_DIM]> = chunk.iter().map(|&i| buffer.actions[i]).collect();
            let olp: Vec<f64> = chunk.iter().map(|&i| old_lp[i]).collect();
            let a: Vec<f64> = chunk.iter().map(|&i| adv[i]).collect();
            let r: Vec<f64> = chunk.iter().map(|&i| returns[i]).collect();
            let mb = Minibatch {
                inputs: &inputs,
                actions: &actions,
                old_log_probs: &olp,
                advantages: &a,
                returns: &r,
            };
            let (ls, mut grads) = loss_and_grads(params, &mb, &config.coefs)?;
            let norm = clip_grad_norm(&mut grads, config.max_grad_norm);
            adam.apply(params, &grads, config.lr);
            if !params.is_finite() {
                return Err(Error::NonFiniteLoss("parameters became non-finite after the optimizer step".into()));
            }
            let k = stats.minibatches as f64;
            let avg = |old: f64, new: f64| (old * k + new) / (k + 1.0);
            stats.loss = LossStats {
                total: avg(stats.loss.total, ls.total),
                policy_loss: avg(stats.loss.policy_loss, ls.policy_loss),
                value_loss: avg(stats.loss.value_loss, ls.value_loss),
                entropy: avg(stats.loss.entropy, ls.entropy),
                approx_kl: avg(stats.loss.approx_kl, ls.approx_kl),
                clip_fraction: avg(stats.loss.clip_fraction, ls.clip_fraction),
            };
            stats.grad_norm = avg(stats.grad_norm, norm);
            stats.minibatches += 1;
        }
    }
    debug_assert!(params.log_std().iter().all(|&v| (LOG_STD_MIN as f32..=LOG_STD_MAX as f32).contains(&v)));
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_moves_by_lr() {
        let spec = crate::nn::NetSpec {
            in_channels: 1,
            resolution: 8,
            flat_goal: 0,
            convs: vec![],
            width: 2,
            trunk_layers: 1,
        };
        let mut p = PolicyParams::<f32>::zeros(&spec);
        let mut g = PolicyParams::<f32>::zeros(&spec);
        g.tensors[0].data[0] = 0.3;
        g.tensors[0].data[1] = -2.0;
        let mut adam = Adam::new(&p, 1e-8);
        adam.apply(&mut p, &g, 1e-3);
        // Bias-corrected first step is lr · sign(g).
        assert!((p.tensors[0].data[0] + 1e-3).abs() < 1e-7);
        assert!((p.tensors[0].data[1] - 1e-3).abs() < 1e-7);
        assert_eq!(p.tensors[0].data[2], 0.0);
        let restored = Adam::from_state(&adam.state(&p), 1e-8);
        assert_eq!(restored, adam);
    }

    #[test]
    fn grad_clip_scales_to_bound() {
        let spec = crate::nn::NetSpec {
            in_channels: 1,
            resolution: 8,
            flat_goal: 0,
            convs: vec![],
            width: 2,
            trunk_layers: 1,
        };
        let mut g = PolicyParams::<f32>::zeros(&spec);
        g.tensors[0].data[0] = 3.0;
        g.tensors[0].data[1] = 4.0;
        assert!((clip_grad_norm(&mut g, 0.5) - 5.0).abs() < 1e-9);
        assert!((g.sum_sq().sqrt() - 0.5).abs() < 1e-5);
        let before = g.clone();
        clip_grad_norm(&mut g, 1.0);
        assert_eq!(g, before);
    }
}
