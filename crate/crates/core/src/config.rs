//! Run configuration in a flat `section.key = value` text format.
//!
//! ```text
//! # comments run to the end of the line
//! ppo.entropy_coef = 0.01
//! train.variant = mask-gt
//! ```
//!
//! Unknown keys are rejected. [`RunConfig::reference`] renders every key
//! with its default and a one-line description.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use crate::detector::ScoreDist;
use crate::eval::EvalSpec;
use crate::ppo::{BackendKind, TrainConfig, Variant};
use crate::sim::{ObjectSet, SuccessCriterion};
use crate::{Error, Result};

/// Every setting of a run. Training, evaluation and sweeps share the
/// simulator, camera and detector sections.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub eval: EvalSpec,
    pub sweep_variants: Vec<Variant>,
    pub sweep_seeds: Vec<u64>,
    pub out_dir: Option<PathBuf>,
    pub log_level: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            eval: EvalSpec::default(),
            sweep_variants: vec![Variant::OneHot, Variant::GoalImage, Variant::MaskGt, Variant::MaskSim],
            sweep_seeds: (0..10).collect(),
            out_dir: None,
            log_level: "info".into(),
        }
    }
}

/// `(key, description)` for every accepted key, in reference order.
pub const KEYS: &[(&str, &str)] = &[
    ("run.out_dir", "output directory (empty: must be given on the command line)"),
    ("run.log_level", "error, warn, info, debug or trace"),
    ("train.variant", "onehot, goalimage, mask-gt, mask-sim or mask-ext"),
    ("train.seed", "training seed; `mgrl train` requires it on the command line"),
    ("train.total_timesteps", "environment steps per run"),
    ("train.n_objects", "objects on the table during training, goal included"),
    ("train.width", "trunk width; 0 selects 1024 for goalimage and 512 otherwise"),
    ("train.checkpoint_every", "iterations between checkpoints (0: final only)"),
    ("train.metrics_window", "completed episodes averaged into each metrics row"),
    ("ppo.lr", "initial learning rate; 0 selects the variant default (3e-4 or 2e-4)"),
    ("ppo.lr_schedule", "decay the learning rate linearly to 0"),
    ("ppo.clip", "initial clip range"),
    ("ppo.clip_schedule", "decay the clip range linearly to 0"),
    ("ppo.entropy_coef", "entropy bonus coefficient"),
    ("ppo.vf_coef", "value loss coefficient"),
    ("ppo.gamma", "discount factor, in (0, 1]"),
    ("ppo.gae_lambda", "advantage estimation lambda, in [0, 1]"),
    ("ppo.n_envs", "parallel environments"),
    ("ppo.n_steps", "steps per environment per iteration"),
    ("ppo.minibatch_size", "must divide n_envs * n_steps"),
    ("ppo.n_epochs", "passes over each rollout buffer"),
    ("ppo.max_grad_norm", "global gradient norm clip"),
    ("ppo.adam_eps", "optimizer epsilon"),
    ("sim.max_episode_length", "steps before truncation"),
    ("sim.action_scale", "meters moved per step by a unit action"),
    ("sim.translate_bound", "bound of the shared random slot-row offset, meters"),
    ("sim.grip_rate", "aperture change per step by a unit grip command"),
    ("sim.criterion", "training success criterion: both_pads or single_pad"),
    ("sim.policy_resolution", "policy image side length, pixels"),
    ("sim.reward.progress_scale", "reward per meter of approach to the goal"),
    ("sim.reward.contact_bonus", "reward per pad touching the goal, per step"),
    ("sim.reward.success_bonus", "reward when the criterion is met"),
    ("sim.reward.time_penalty", "cost per step"),
    ("camera.mount_forward", "camera offset ahead of the end effector, meters"),
    ("camera.pitch_deg", "downward pitch, degrees"),
    ("camera.fov_deg", "field of view, degrees"),
    ("detector.threshold", "score threshold for non-oracle detectors"),
    ("detector.resolution", "side length of the frame the detector sees"),
    ("detector.command", "external detector command (newline-delimited JSON on stdio)"),
    ("detector.url", "external detector base URL (POST {url}/detect)"),
    ("detector.timeout_s", "external detector reply timeout, seconds"),
    ("detector.noise.miss_base", "simulated detector: base miss probability"),
    ("detector.noise.distance_decay", "simulated detector: miss probability added per meter"),
    ("detector.noise.jitter_sigma", "simulated detector: box corner noise, image units"),
    ("detector.noise.fp_per_distractor", "simulated detector: false-positive probability per distractor"),
    ("detector.noise.score_true_alpha", "true-detection score Beta alpha (0 with beta 0: score 1)"),
    ("detector.noise.score_true_beta", "true-detection score Beta beta"),
    ("detector.noise.score_fp_alpha", "false-positive score Beta alpha"),
    ("detector.noise.score_fp_beta", "false-positive score Beta beta"),
    ("eval.checkpoints", "comma-separated checkpoint paths (one, or one per seed)"),
    ("eval.episodes", "episodes per cell and seed"),
    ("eval.object_sets", "comma-separated: in, ood"),
    ("eval.n_objects", "comma-separated object counts, goal included"),
    ("eval.backend", "mask detector during evaluation: oracle, simulated or external"),
    ("eval.criterion", "evaluation success criterion: single_pad or both_pads"),
    ("eval.seeds", "comma-separated evaluation seeds"),
    ("eval.batch", "episodes stepped together"),
    ("sweep.variants", "comma-separated variants trained by sweep"),
    ("sweep.seeds", "comma-separated training seeds used by sweep"),
];

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse `{v}` as a number")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got `{v}`"))),
    }
}

fn parse_list<T>(key: &str, v: &str, f: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| f(s).map_err(|e| Error::Config(format!("{key}: {e}"))))
        .collect()
}

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn reparse<T: std::str::FromStr<Err = Error>>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|e: Error| Error::Config(format!("{key}: {e}")))
}

impl RunConfig {
    /// Set one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let t = &mut self.train;
        let n = &mut t.detector.noise;
        match key {
            "run.out_dir" => self.out_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
            "run.log_level" => match v {
                "error" | "warn" | "info" | "debug" | "trace" => self.log_level = v.into(),
                _ => return Err(Error::Config(format!("{key}: unknown level `{v}`"))),
            },
            "train.variant" => t.variant = reparse(key, v)?,
            "train.seed" => t.seed = parse_num(key, v)?,
            "train.total_timesteps" => t.total_timesteps = parse_num(key, v)?,
            "train.n_objects" => t.n_objects = parse_num(key, v)?,
            "train.width" => t.width = Some(parse_num::<usize>(key, v)?).filter(|&w| w > 0),
            "train.checkpoint_every" => t.checkpoint_every = parse_num(key, v)?,
            "train.metrics_window" => t.metrics_window = parse_num(key, v)?,
            "ppo.lr" => t.lr = Some(parse_num::<f64>(key, v)?).filter(|&x| x > 0.0),
            "ppo.lr_schedule" => t.lr_schedule = parse_bool(key, v)?,
            "ppo.clip" => t.clip = parse_num(key, v)?,
            "ppo.clip_schedule" => t.clip_schedule = parse_bool(key, v)?,
            "ppo.entropy_coef" => t.entropy_coef = parse_num(key, v)?,
            "ppo.vf_coef" => t.vf_coef = parse_num(key, v)?,
            "ppo.gamma" => t.gamma = parse_num(key, v)?,
            "ppo.gae_lambda" => t.gae_lambda = parse_num(key, v)?,
            "ppo.n_envs" => t.n_envs = parse_num(key, v)?,
            "ppo.n_steps" => t.n_steps = parse_num(key, v)?,
            "ppo.minibatch_size" => t.minibatch_size = parse_num(key, v)?,
            "ppo.n_epochs" => t.n_epochs = parse_num(key, v)?,
            "ppo.max_grad_norm" => t.max_grad_norm = parse_num(key, v)?,
            "ppo.adam_eps" => t.adam_eps = parse_num(key, v)?,
            "sim.max_episode_length" => t.sim.max_episode_length = parse_num(key, v)?,
            "sim.action_scale" => t.sim.action_scale = parse_num(key, v)?,
            "sim.translate_bound" => t.sim.translate_bound = parse_num(key, v)?,
            "sim.grip_rate" => t.sim.grip_rate = parse_num(key, v)?,
            "sim.criterion" => t.sim.criterion = reparse(key, v)?,
            "sim.policy_resolution" => t.sim.policy_resolution = parse_num(key, v)?,
            "sim.reward.progress_scale" => t.sim.reward.progress_scale = parse_num(key, v)?,
            "sim.reward.contact_bonus" => t.sim.reward.contact_bonus = parse_num(key, v)?,
            "sim.reward.success_bonus" => t.sim.reward.success_bonus = parse_num(key, v)?,
            "sim.reward.time_penalty" => t.sim.reward.time_penalty = parse_num(key, v)?,
            "camera.mount_forward" => t.sim.camera.mount_forward = parse_num(key, v)?,
            "camera.pitch_deg" => t.sim.camera.pitch = parse_num::<f64>(key, v)?.to_radians(),
            "camera.fov_deg" => t.sim.camera.fov = parse_num::<f64>(key, v)?.to_radians(),
            "detector.threshold" => t.detector.threshold = parse_num(key, v)?,
            "detector.resolution" => t.detector.resolution = parse_num(key, v)?,
            "detector.command" => t.detector.command = (!v.is_empty()).then(|| v.to_string()),
            "detector.url" => t.detector.url = (!v.is_empty()).then(|| v.to_string()),
            "detector.timeout_s" => t.detector.timeout = Duration::from_secs_f64(parse_num(key, v)?),
            "detector.noise.miss_base" => n.miss_base = parse_num(key, v)?,
            "detector.noise.distance_decay" => n.distance_decay = parse_num(key, v)?,
            "detector.noise.jitter_sigma" => n.jitter_sigma = parse_num(key, v)?,
            "detector.noise.fp_per_distractor" => n.fp_per_distractor = parse_num(key, v)?,
            "detector.noise.score_true_alpha" => n.score_true.alpha = parse_num(key, v)?,
            "detector.noise.score_true_beta" => n.score_true.beta = parse_num(key, v)?,
            "detector.noise.score_fp_alpha" => n.score_fp.alpha = parse_num(key, v)?,
            "detector.noise.score_fp_beta" => n.score_fp.beta = parse_num(key, v)?,
            "eval.checkpoints" => self.eval.checkpoints = parse_list(key, v, |s| Ok(PathBuf::from(s)))?,
            "eval.episodes" => self.eval.episodes = parse_num(key, v)?,
            "eval.object_sets" => self.eval.object_sets = parse_list(key, v, str::parse::<ObjectSet>)?,
            "eval.n_objects" => self.eval.n_objects = parse_list(key, v, |s| parse_num(key, s))?,
            "eval.backend" => self.eval.backend = reparse::<BackendKind>(key, v)?,
            "eval.criterion" => self.eval.criterion = reparse::<SuccessCriterion>(key, v)?,
            "eval.seeds" => self.eval.seeds = parse_list(key, v, |s| parse_num(key, s))?,
            "eval.batch" => self.eval.batch = parse_num(key, v)?,
            "sweep.variants" => self.sweep_variants = parse_list(key, v, str::parse::<Variant>)?,
            "sweep.seeds" => self.sweep_seeds = parse_list(key, v, |s| parse_num(key, s))?,
            other => {
                return Err(Error::Config(format!(
                    "unknown configuration key `{other}` (run `mgrl config-dump --reference` for the list)"
                )))
            }
        }
        Ok(())
    }

    /// Textual value of one key, in the form [`RunConfig::set`] accepts.
    pub fn get(&self, key: &str) -> Option<String> {
        let t = &self.train;
        let n = &t.detector.noise;
        let opt = |o: &Option<String>| o.clone().unwrap_or_default();
        Some(match key {
            "run.out_dir" => self.out_dir.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            "run.log_level" => self.log_level.clone(),
            "train.variant" => t.variant.to_string(),
            "train.seed" => t.seed.to_string(),
            "train.total_timesteps" => t.total_timesteps.to_string(),
            "train.n_objects" => t.n_objects.to_string(),
            "train.width" => t.width.unwrap_or(0).to_string(),
            "train.checkpoint_every" => t.checkpoint_every.to_string(),
            "train.metrics_window" => t.metrics_window.to_string(),
            "ppo.lr" => t.lr.unwrap_or(0.0).to_string(),
            "ppo.lr_schedule" => t.lr_schedule.to_string(),
            "ppo.clip" => t.clip.to_string(),
            "ppo.clip_schedule" => t.clip_schedule.to_string(),
            "ppo.entropy_coef" => t.entropy_coef.to_string(),
            "ppo.vf_coef" => t.vf_coef.to_string(),
            "ppo.gamma" => t.gamma.to_string(),
            "ppo.gae_lambda" => t.gae_lambda.to_string(),
            "ppo.n_envs" => t.n_envs.to_string(),
            "ppo.n_steps" => t.n_steps.to_string(),
            "ppo.minibatch_size" => t.minibatch_size.to_string(),
            "ppo.n_epochs" => t.n_epochs.to_string(),
            "ppo.max_grad_norm" => t.max_grad_norm.to_string(),
            "ppo.adam_eps" => t.adam_eps.to_string(),
            "sim.max_episode_length" => t.sim.max_episode_length.to_string(),
            "sim.action_scale" => t.sim.action_scale.to_string(),
            "sim.translate_bound" => t.sim.translate_bound.to_string(),
            "sim.grip_rate" => t.sim.grip_rate.to_string(),
            "sim.criterion" => t.sim.criterion.as_str().to_string(),
            "sim.policy_resolution" => t.sim.policy_resolution.to_string(),
            "sim.reward.progress_scale" => t.sim.reward.progress_scale.to_string(),
            "sim.reward.contact_bonus" => t.sim.reward.contact_bonus.to_string(),
            "sim.reward.success_bonus" => t.sim.reward.success_bonus.to_string(),
            "sim.reward.time_penalty" => t.sim.reward.time_penalty.to_string(),
            "camera.mount_forward" => t.sim.camera.mount_forward.to_string(),
            "camera.pitch_deg" => round_deg(t.sim.camera.pitch),
            "camera.fov_deg" => round_deg(t.sim.camera.fov),
            "detector.threshold" => t.detector.threshold.to_string(),
            "detector.resolution" => t.detector.resolution.to_string(),
            "detector.command" => opt(&t.detector.command),
            "detector.url" => opt(&t.detector.url),
            "detector.timeout_s" => t.detector.timeout.as_secs_f64().to_string(),
            "detector.noise.miss_base" => n.miss_base.to_string(),
            "detector.noise.distance_decay" => n.distance_decay.to_string(),
            "detector.noise.jitter_sigma" => n.jitter_sigma.to_string(),
            "detector.noise.fp_per_distractor" => n.fp_per_distractor.to_string(),
            "detector.noise.score_true_alpha" => n.score_true.alpha.to_string(),
            "detector.noise.score_true_beta" => n.score_true.beta.to_string(),
            "detector.noise.score_fp_alpha" => n.score_fp.alpha.to_string(),
            "detector.noise.score_fp_beta" => n.score_fp.beta.to_string(),
            "eval.checkpoints" => join(&self.eval.checkpoints.iter().map(|p| p.display()).collect::<Vec<_>>()),
            "eval.episodes" => self.eval.episodes.to_string(),
            "eval.object_sets" => self.eval.object_sets.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(","),
            "eval.n_objects" => join(&self.eval.n_objects),
            "eval.backend" => self.eval.backend.to_string(),
            "eval.criterion" => self.eval.criterion.as_str().to_string(),
            "eval.seeds" => join(&self.eval.seeds),
            "eval.batch" => self.eval.batch.to_string(),
            "sweep.variants" => join(&self.sweep_variants),
            "sweep.seeds" => join(&self.sweep_seeds),
            _ => return None,
        })
    }

    /// Apply a config file's text on top of the current values.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("{origin}:{}: expected `key = value`, got `{}`", i + 1, raw.trim()))
            })?;
            let value = value.trim().trim_matches('"');
            self.set(key.trim(), value)
                .map_err(|e| Error::Config(format!("{origin}:{}: {}", i + 1, strip_prefix(&e))))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading config {}", path.display()), e))?;
        let mut c = RunConfig::default();
        c.apply_text(&text, &path.display().to_string())?;
        Ok(c)
    }

    /// Apply a `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{kv}` is not of the form key=value")))?;
        self.set(k.trim(), v)
    }

    /// The effective configuration as a config file.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let mut section = "";
        for (key, _) in KEYS {
            let sec = key.split('.').next().unwrap_or("");
            if sec != section {
                if !section.is_empty() {
                    s.push('\n');
                }
                section = sec;
            }
            let _ = writeln!(s, "{key} = {}", self.get(key).expect("every listed key has a value"));
        }
        s
    }

    /// Defaults of every key with descriptions.
    pub fn reference() -> String {
        let d = RunConfig::default();
        let mut s = String::from("# Every configuration key with its default value.\n");
        let mut section = "";
        for (key, doc) in KEYS {
            let sec = key.split('.').next().unwrap_or("");
            if sec != section {
                let _ = writeln!(s, "\n# [{sec}]");
                section = sec;
            }
            let _ = writeln!(s, "# {doc}\n{key} = {}", d.get(key).expect("every listed key has a value"));
        }
        s
    }

    /// Evaluation protocol with the shared simulator and detector settings.
    pub fn eval_spec(&self) -> EvalSpec {
        EvalSpec {
            sim: self.train.sim.clone(),
            detector: self.train.detector.clone(),
            ..self.eval.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.eval_spec().validate()?;
        let ScoreDist { alpha, beta } = self.train.detector.noise.score_true;
        if alpha.is_nan() || beta.is_nan() {
            return Err(Error::Config("detector.noise.score_true parameters are NaN".into()));
        }
        if !(0.0..=1.0).contains(&self.train.detector.threshold) {
            return Err(Error::Config("detector.threshold must lie in [0, 1]".into()));
        }
        if self.train.detector.resolution < 8 {
            return Err(Error::Config("detector.resolution must be at least 8".into()));
        }
        let rig = &self.train.sim.camera;
        if !(rig.fov > 0.0 && rig.fov < std::f64::consts::PI) {
            return Err(Error::Config("camera.fov_deg must lie in (0, 180)".into()));
        }
        if self.sweep_variants.is_empty() || self.sweep_seeds.is_empty() {
            return Err(Error::Config("sweep.variants and sweep.seeds must be non-empty".into()));
        }
        Ok(())
    }
}

fn round_deg(rad: f64) -> String {
    let d = rad.to_degrees();
    let r = (d * 1e9).round() / 1e9;
    r.to_string()
}

fn strip_prefix(e: &Error) -> String {
    let s = e.to_string();
    s.strip_prefix("configuration error: ").map(str::to_string).unwrap_or(s)
}
