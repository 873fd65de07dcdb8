use super::gae::compute_gae;
use crate::nn::{NetInput, ACTION_DIM};
use crate::{Error, Result};

/// One iteration of experience from `n_envs` workers, stored step-major
/// (`index = t · n_envs + env`).
#[derive(Debug, Clone, Default)]
pub struct RolloutBuffer {
    pub n_steps: usize,
    pub n_envs: usize,
    pub inputs: Vec<NetInput>,
    pub actions: Vec<[f32; ACTION_DIM]>,
    pub log_probs: Vec<f32>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub terminated: Vec<bool>,
    pub truncated: Vec<bool>,
    /// Value of the observation that followed each step; only meaningful
    /// for truncated steps and the final row.
    pub next_values: Vec<f64>,
    advantages: Vec<f64>,
    returns: Vec<f64>,
}

/// Data of one environment step.
#[derive(Debug, Clone)]
pub struct Transition {
    pub input: NetInput,
    pub action: [f32; ACTION_DIM],
    pub log_prob: f32,
    pub reward: f64,
    pub value: f64,
    pub terminated: bool,
    pub truncated: bool,
    pub next_value: f64,
}

impl RolloutBuffer {
    pub fn new(n_steps: usize, n_envs: usize) -> Self {
        RolloutBuffer {
            n_steps,
            n_envs,
            ..Default::default()
        }
    }

    pub fn capacity(&self) -> usize {
        self.n_steps * self.n_envs
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.len() == self.capacity()
    }

    pub fn clear(&mut self) {
        let (n_steps, n_envs) = (self.n_steps, self.n_envs);
        *self = RolloutBuffer::new(n_steps, n_envs);
    }

    pub fn push(&mut self, t: Transition) {
        assert!(!self.is_full(), "rollout buffer overflow");
        self.inputs.push(t.input);
        self.actions.push(t.action);
        self.log_probs.push(t.log_prob);
        self.rewards.push(t.reward);
        self.values.push(t.value);
        self.terminated.push(t.terminated);
        self.truncated.push(t.truncated);
        self.next_values.push(t.next_value);
        self.advantages.clear();
        self.returns.clear();
    }

    /// Sets the bootstrap values of the final row (values of the observations
    /// the workers are left in).
    pub fn set_last_values(&mut self, last: &[f64]) -> Result<()> {
        if !self.is_full() || last.len() != self.n_envs {
            return Err(Error::LengthMismatch(format!(
                "{} bootstrap values for {} workers (buffer {} of {})",
                last.len(),
                self.n_envs,
                self.len(),
                self.capacity()
            )));
        }
        let base = (self.n_steps - 1) * self.n_envs;
        for (e, &v) in last.iter().enumerate() {
            if !self.truncated[base + e] {
                self.next_values[base + e] = v;
            }
        }
        Ok(())
    }

    /// Per-worker GAE over the full buffer.
    pub fn compute_advantages(&mut self, gamma: f64, lambda: f64) -> Result<()> {
        if !self.is_full() {
            return Err(Error::LengthMismatch(format!(
                "buffer holds {} of {} steps",
                self.len(),
                self.capacity()
            )));
        }
        let (ns, ne) = (self.n_steps, self.n_envs);
        self.advantages = vec![0.0; ns * ne];
        self.returns = vec![0.0; ns * ne];
        for e in 0..ne {
            let pick = |v: &[f64]| (0..ns).map(|t| v[t * ne + e]).collect::<Vec<_>>();
            let pickb = |v: &[bool]| (0..ns).map(|t| v[t * ne + e]).collect::<Vec<_>>();
            let values = pick(&self.values);
            // The next value of step t is V(input t+1) unless the episode
            // ended there; truncated steps carry their own bootstrap.
            let next: Vec<f64> = (0..ns)
                .map(|t| {
                    let i = t * ne + e;
                    if self.truncated[i] || t + 1 == ns {
                        self.next_values[i]
                    } else {
                        values[t + 1]
                    }
                })
                .collect();
            let (adv, ret) = compute_gae(
                &pick(&self.rewards),
                &values,
                &next,
                &pickb(&self.terminated),
                &pickb(&self.truncated),
                gamma,
                lambda,
            )?;
            for t in 0..ns {
                self.advantages[t * ne + e] = adv[t];
                self.returns[t * ne + e] = ret[t];
            }
        }
        Ok(())
    }

    pub fn advantages(&self) -> &[f64] {
        &self.advantages
    }

    pub fn returns(&self) -> &[f64] {
        &self.returns
    }
}
