//! The training loop: collect, estimate advantages, update, log.

use std::collections::VecDeque;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::buffer::{RolloutBuffer, Transition};
use super::env::{GoalEnv, Variant};
use super::gae::linear_schedule;
use super::update::{ppo_update, Adam, LossCoefs, UpdateConfig, UpdateStats};
use crate::nn::{forward, sample_with, Checkpoint, NetInput, NetSpec, PolicyParams, ACTION_DIM};
use crate::ppo::env::DetectorSetup;
use crate::rng::{self, tag};
use crate::sim::{Action, ObjectSet, SimConfig};
use crate::{Error, Result};

pub const METRICS_HEADER: &str =
    "iteration,timesteps,variant,seed,mean_return,mean_ep_len,success_rate,lr,clip,entropy,policy_loss,value_loss";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub variant: Variant,
    pub seed: u64,
    pub total_timesteps: usize,
    pub n_envs: usize,
    pub n_steps: usize,
    pub minibatch_size: usize,
    pub n_epochs: usize,
    /// Initial learning rate; `None` uses the variant's default.
    pub lr: Option<f64>,
    pub lr_schedule: bool,
    pub clip: f64,
    pub clip_schedule: bool,
    pub entropy_coef: f64,
    pub vf_coef: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub max_grad_norm: f64,
    pub adam_eps: f64,
    /// Trunk width; `None` uses the variant's default.
    pub width: Option<usize>,
    /// Objects on the table during training (goal included).
    pub n_objects: usize,
    /// Write `checkpoints/iter_{n}.bin` every this many iterations (0 = only the final one).
    pub checkpoint_every: usize,
    /// Completed episodes averaged into the logged return, length and success.
    pub metrics_window: usize,
    pub sim: SimConfig,
    pub detector: DetectorSetup,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: Variant::MaskGt,
            seed: 0,
            total_timesteps: 300_000,
            n_envs: 8,
            n_steps: 256,
            minibatch_size: 256,
            n_epochs: 10,
            lr: None,
            lr_schedule: true,
            clip: 0.1,
            clip_schedule: true,
            entropy_coef: 0.01,
            vf_coef: 0.5,
            gamma: 0.99,
            gae_lambda: 0.95,
            max_grad_norm: 0.5,
            adam_eps: 1e-5,
            width: None,
            n_objects: 5,
            checkpoint_every: 10,
            metrics_window: 100,
            sim: SimConfig::default(),
            detector: DetectorSetup::default(),
        }
    }
}

impl TrainConfig {
    pub fn buffer_size(&self) -> usize {
        self.n_steps * self.n_envs
    }

    pub fn iterations(&self) -> usize {
        self.total_timesteps.div_ceil(self.buffer_size()).max(1)
    }

    pub fn initial_lr(&self) -> f64 {
        self.lr.unwrap_or_else(|| self.variant.default_lr())
    }

    pub fn net_spec(&self) -> NetSpec {
        let width = self.width.unwrap_or_else(|| self.variant.default_width());
        self.variant.net_spec(self.sim.policy_resolution, width)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("ppo.gamma = {} must lie in (0, 1]", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad(format!("ppo.gae_lambda = {} must lie in [0, 1]", self.gae_lambda));
        }
        if self.n_envs == 0 || self.n_steps == 0 || self.n_epochs == 0 || self.total_timesteps == 0 {
            return bad("ppo.n_envs, ppo.n_steps, ppo.n_epochs and ppo.total_timesteps must be positive".into());
        }
        if self.minibatch_size == 0 || self.buffer_size() % self.minibatch_size != 0 {
            return bad(format!(
                "ppo.minibatch_size = {} must divide the buffer size n_steps * n_envs = {}",
                self.minibatch_size,
                self.buffer_size()
            ));
        }
        if !(self.initial_lr() > 0.0) || !(self.clip > 0.0) {
            return bad("ppo.lr and ppo.clip must be positive".into());
        }
        if self.entropy_coef < 0.0 || self.vf_coef < 0.0 || !(self.max_grad_norm > 0.0) {
            return bad("ppo.entropy_coef and ppo.vf_coef must be >= 0, ppo.max_grad_norm > 0".into());
        }
        if self.metrics_window == 0 {
            return bad("train.metrics_window must be positive".into());
        }
        if self.n_objects == 0 || self.n_objects > ObjectSet::InDistribution.entries().len() {
            return bad(format!("train.n_objects = {} must be in 1..=5", self.n_objects));
        }
        if self.sim.policy_resolution < 8 {
            return bad("sim.policy_resolution must be at least 8".into());
        }
        self.net_spec().conv_geoms().map_err(|e| Error::Config(e.to_string()))?;
        self.detector.noise.validate()
    }
}

/// One row of the metrics log.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub timesteps: usize,
    pub variant: Variant,
    pub seed: u64,
    pub mean_return: f64,
    pub mean_ep_len: f64,
    pub success_rate: f64,
    pub lr: f64,
    pub clip: f64,
    pub entropy: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
}

impl IterationMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.iteration,
            self.timesteps,
            self.variant,
            self.seed,
            self.mean_return,
            self.mean_ep_len,
            self.success_rate,
            self.lr,
            self.clip,
            self.entropy,
            self.policy_loss,
            self.value_loss
        )
    }

    pub fn parse_row(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 12 {
            return Err(Error::InvalidValue(format!("metrics row with {} fields: `{line}`", f.len())));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::InvalidValue(format!("number `{s}` in metrics row")))
        };
        let int = |s: &str| {
            s.parse::<u64>()
                .map_err(|_| Error::InvalidValue(format!("integer `{s}` in metrics row")))
        };
        Ok(IterationMetrics {
            iteration: int(f[0])? as usize,
            timesteps: int(f[1])? as usize,
            variant: f[2].parse()?,
            seed: int(f[3])?,
            mean_return: num(f[4])?,
            mean_ep_len: num(f[5])?,
            success_rate: num(f[6])?,
            lr: num(f[7])?,
            clip: num(f[8])?,
            entropy: num(f[9])?,
            policy_loss: num(f[10])?,
            value_loss: num(f[11])?,
        })
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<IterationMetrics>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == METRICS_HEADER => {}
        _ => return Err(Error::InvalidValue(format!("{} lacks the metrics header", path.display()))),
    }
    lines.filter(|l| !l.trim().is_empty()).map(IterationMetrics::parse_row).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeRecord {
    pub ret: f64,
    pub len: u32,
    pub success: bool,
}

struct Worker {
    env: GoalEnv,
    input: NetInput,
    ep_return: f64,
    ep_len: u32,
    episodes: u64,
}

/// Stateful trainer; [`Trainer::run`] drives it to completion.
pub struct Trainer {
    config: TrainConfig,
    params: PolicyParams<f32>,
    adam: Adam,
    workers: Vec<Worker>,
    buffer: RolloutBuffer,
    window: VecDeque<EpisodeRecord>,
    iteration: usize,
    timesteps: usize,
    /// Iteration the run started (or resumed) at; part of episode seeds.
    start_iteration: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let spec = config.net_spec();
        let params = PolicyParams::init(&spec, &mut rng::stream(config.seed, &[tag::INIT]));
        let adam = Adam::new(&params, config.adam_eps);
        Self::assemble(config, params, adam, 0, 0)
    }

    /// Continue from a checkpoint written by an earlier run with the same
    /// configuration. Parameters, optimizer moments and counters are
    /// restored; workers begin fresh episodes.
    pub fn resume(config: TrainConfig, checkpoint: Checkpoint) -> Result<Self> {
        config.validate()?;
        if checkpoint.variant != config.variant.as_str() {
            return Err(Error::CheckpointVariantMismatch {
                expected: config.variant.to_string(),
                found: checkpoint.variant,
            });
        }
        if checkpoint.params.spec != config.net_spec() {
            return Err(Error::Config("checkpoint architecture differs from the configured network".into()));
        }
        let adam = match &checkpoint.optimizer {
            Some(s) => Adam::from_state(s, config.adam_eps),
            None => Adam::new(&checkpoint.params, config.adam_eps),
        };
        Self::assemble(
            config,
            checkpoint.params,
            adam,
            checkpoint.iteration as usize,
            checkpoint.timesteps as usize,
        )
    }

    fn assemble(
        config: TrainConfig,
        params: PolicyParams<f32>,
        adam: Adam,
        iteration: usize,
        timesteps: usize,
    ) -> Result<Self> {
        let mut workers = Vec::with_capacity(config.n_envs);
        for _ in 0..config.n_envs {
            let pipeline = match config.variant.backend() {
                Some(kind) => Some(config.detector.pipeline(kind)?),
                None => None,
            };
            let env = GoalEnv::new(config.sim.clone(), config.variant.conditioning(), pipeline)?;
            workers.push(Worker {
                env,
                input: NetInput {
                    image: Vec::new(),
                    channels: 0,
                    resolution: 0,
                    proprio: [0.0; 7],
                    flat_goal: Vec::new(),
                },
                ep_return: 0.0,
                ep_len: 0,
                episodes: 0,
            });
        }
        let mut t = Trainer {
            buffer: RolloutBuffer::new(config.n_steps, config.n_envs),
            config,
            params,
            adam,
            workers,
            window: VecDeque::new(),
            iteration,
            timesteps,
            start_iteration: iteration,
        };
        for e in 0..t.workers.len() {
            t.reset_worker(e)?;
        }
        Ok(t)
    }

    fn reset_worker(&mut self, e: usize) -> Result<()> {
        let w = &mut self.workers[e];
        let seed = rng::derive_seed(
            self.config.seed,
            &[tag::EPISODE, e as u64, self.start_iteration as u64, w.episodes],
        );
        w.episodes += 1;
        w.input = w.env.reset_random_goal(seed, ObjectSet::InDistribution, self.config.n_objects)?;
        w.ep_return = 0.0;
        w.ep_len = 0;
        Ok(())
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn params(&self) -> &PolicyParams<f32> {
        &self.params
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn is_done(&self) -> bool {
        self.iteration >= self.config.iterations()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            variant: self.config.variant.to_string(),
            params: self.params.clone(),
            iteration: self.iteration as u64,
            timesteps: self.timesteps as u64,
            optimizer: Some(self.adam.state(&self.params)),
        }
    }

    /// Fill the buffer with `n_steps` steps from every worker.
    fn collect(&mut self) -> Result<()> {
        self.buffer.clear();
        let n_envs = self.workers.len();
        let mut rngs: Vec<_> = (0..n_envs)
            .map(|e| rng::stream(self.config.seed, &[tag::POLICY, self.iteration as u64, e as u64]))
            .collect();
        for _ in 0..self.config.n_steps {
            let inputs: Vec<&NetInput> = self.workers.iter().map(|w| &w.input).collect();
            let (out, _) = forward(&self.params, &inputs)?;
            let mut actions = Vec::with_capacity(n_envs);
            for (e, rng) in rngs.iter_mut().enumerate() {
                actions.push(sample_with(&out.mean[e * ACTION_DIM..(e + 1) * ACTION_DIM], &out.log_std, rng));
            }
            let steps: Vec<_> = self
                .workers
                .par_iter_mut()
                .zip(&actions)
                .map(|(w, (a, _))| w.env.step(Action::from_slice(a)))
                .collect::<Result<_>>()?;

            // Bootstrap values for time-limit endings.
            let trunc: Vec<usize> = (0..n_envs).filter(|&e| steps[e].truncated).collect();
            let mut next_values = vec![0.0; n_envs];
            if !trunc.is_empty() {
                let finals: Vec<&NetInput> = trunc.iter().map(|&e| &steps[e].input).collect();
                let (v, _) = forward(&self.params, &finals)?;
                for (k, &e) in trunc.iter().enumerate() {
                    next_values[e] = f64::from(v.value[k]);
                }
            }

            for (e, step) in steps.into_iter().enumerate() {
                let done = step.terminated || step.truncated;
                let w = &mut self.workers[e];
                w.ep_return += step.reward;
                w.ep_len += 1;
                let input = std::mem::replace(&mut w.input, step.input);
                self.buffer.push(Transition {
                    input,
                    action: actions[e].0,
                    log_prob: actions[e].1,
                    reward: step.reward,
                    value: f64::from(out.value[e]),
                    terminated: step.terminated,
                    truncated: step.truncated,
                    next_value: next_values[e],
                });
                if done {
                    self.window.push_back(EpisodeRecord {
                        ret: w.ep_return,
                        len: w.ep_len,
                        success: step.terminated,
                    });
                    if self.window.len() > self.config.metrics_window {
                        self.window.pop_front();
                    }
                    self.reset_worker(e)?;
                }
            }
        }
        let inputs: Vec<&NetInput> = self.workers.iter().map(|w| &w.input).collect();
        let (out, _) = forward(&self.params, &inputs)?;
        let last: Vec<f64> = out.value.iter().map(|&v| f64::from(v)).collect();
        self.buffer.set_last_values(&last)?;
        self.buffer.compute_advantages(self.config.gamma, self.config.gae_lambda)
    }

    /// One collection + update cycle.
    pub fn step_iteration(&mut self) -> Result<IterationMetrics> {
        let c = &self.config;
        let progress = self.timesteps as f64 / c.total_timesteps as f64;
        let lr = if c.lr_schedule { linear_schedule(c.initial_lr(), progress) } else { c.initial_lr() };
        let clip = if c.clip_schedule { linear_schedule(c.clip, progress) } else { c.clip };
        let update = UpdateConfig {
            coefs: LossCoefs {
                clip,
                entropy_coef: c.entropy_coef,
                vf_coef: c.vf_coef,
            },
            lr,
            n_epochs: c.n_epochs,
            minibatch_size: c.minibatch_size,
            max_grad_norm: c.max_grad_norm,
        };
        self.collect()?;
        let mut shuffle = rng::stream(self.config.seed, &[tag::SHUFFLE, self.iteration as u64]);
        let stats: UpdateStats = ppo_update(&mut self.params, &mut self.adam, &self.buffer, &update, &mut shuffle)?;
        self.iteration += 1;
        self.timesteps += self.buffer.len();

        let n = self.window.len() as f64;
        let mean = |f: &dyn Fn(&EpisodeRecord) -> f64| {
            if self.window.is_empty() {
                f64::NAN
            } else {
                self.window.iter().map(f).sum::<f64>() / n
            }
        };
        let metrics = IterationMetrics {
            iteration: self.iteration,
            timesteps: self.timesteps,
            variant: self.config.variant,
            seed: self.config.seed,
            mean_return: mean(&|r| r.ret),
            mean_ep_len: mean(&|r| f64::from(r.len)),
            success_rate: mean(&|r| f64::from(u8::from(r.success))),
            lr,
            clip,
            entropy: stats.loss.entropy,
            policy_loss: stats.loss.policy_loss,
            value_loss: stats.loss.value_loss,
        };
        log::info!(
            "{} seed {} iter {}/{} steps {} return {:.3} len {:.1} success {:.2} kl {:.4} clipfrac {:.3}",
            self.config.variant,
            self.config.seed,
            self.iteration,
            self.config.iterations(),
            self.timesteps,
            metrics.mean_return,
            metrics.mean_ep_len,
            metrics.success_rate,
            stats.loss.approx_kl,
            stats.loss.clip_fraction
        );
        Ok(metrics)
    }

    /// Train to completion. With an output directory, the metrics log is
    /// written (appended to when resuming) and checkpoints are saved under
    /// `checkpoints/` plus `final.bin`.
    pub fn run(mut self, out_dir: Option<&Path>) -> Result<TrainOutcome> {
        let mut log = match out_dir {
            Some(dir) => Some(MetricsLog::open(&dir.join("metrics.csv"), self.iteration > 0)?),
            None => None,
        };
        let mut metrics = Vec::new();
        let mut checkpoints = Vec::new();
        while !self.is_done() {
            let m = self.step_iteration()?;
            if let Some(log) = &mut log {
                log.append(&m)?;
            }
            metrics.push(m);
            let every = self.config.checkpoint_every;
            if let Some(dir) = out_dir {
                if every > 0 && self.iteration % every == 0 {
                    let path = dir.join("checkpoints").join(format!("iter_{}.bin", self.iteration));
                    self.checkpoint().save(&path)?;
                    checkpoints.push(path);
                }
            }
        }
        let final_ck = self.checkpoint();
        if let Some(dir) = out_dir {
            let path = dir.join("final.bin");
            final_ck.save(&path)?;
            checkpoints.push(path);
        }
        Ok(TrainOutcome {
            checkpoint: final_ck,
            metrics,
            checkpoints,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<IterationMetrics>,
    pub checkpoints: Vec<PathBuf>,
}

/// Train from scratch.
pub fn train(config: TrainConfig, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    Trainer::new(config)?.run(out_dir)
}

/// Append-only metrics CSV, flushed after every row.
pub struct MetricsLog {
    out: BufWriter<File>,
    path: PathBuf,
}

impl MetricsLog {
    pub fn open(path: &Path, append: bool) -> Result<Self> {
        let ctx = |e| Error::io(format!("opening {}", path.display()), e);
        let existing = append && path.exists();
        let file = if existing {
            OpenOptions::new().append(true).open(path).map_err(ctx)?
        } else {
            File::create(path).map_err(ctx)?
        };
        let mut log = MetricsLog {
            out: BufWriter::new(file),
            path: path.to_path_buf(),
        };
        if !existing {
            log.line(METRICS_HEADER)?;
        }
        Ok(log)
    }

    fn line(&mut self, s: &str) -> Result<()> {
        writeln!(self.out, "{s}")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(format!("writing {}", self.path.display()), e))
    }

    pub fn append(&mut self, m: &IterationMetrics) -> Result<()> {
        self.line(&m.csv_row())
    }
}
