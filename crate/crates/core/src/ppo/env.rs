//! Environment wrapper that turns simulator observations plus goal
//! conditioning into network inputs.

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use rand::seq::IteratorRandom;

use crate::detector::external::{DetectorClient, HttpDetector, ProcessDetector};
use crate::detector::{NoiseProfile, DEFAULT_THRESHOLD};
use crate::goal::{
    encode_goal_image, encode_onehot, DetectorBackend, GoalConditioning, GoalSpec, MaskPipeline, ONE_HOT_SLOTS,
};
use crate::nn::{NetInput, NetSpec, PROPRIO_DIM};
use crate::rng;
use crate::sim::{Action, ObjectSet, Observation, SimConfig, StepInfo, TabletopEnv};
use crate::{Error, Result};

/// What the policy is told about the goal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Conditioning {
    OneHot,
    GoalImage,
    Mask,
}

impl Conditioning {
    pub fn as_str(self) -> &'static str {
        match self {
            Conditioning::OneHot => "onehot",
            Conditioning::GoalImage => "goalimage",
            Conditioning::Mask => "mask",
        }
    }

    pub fn in_channels(self) -> usize {
        match self {
            Conditioning::OneHot => 3,
            Conditioning::GoalImage => 6,
            Conditioning::Mask => 4,
        }
    }

    pub fn flat_goal(self) -> usize {
        match self {
            Conditioning::OneHot => ONE_HOT_SLOTS,
            _ => 0,
        }
    }
}

/// Training variant: conditioning plus, for masks, the detector backend
/// used during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    OneHot,
    GoalImage,
    MaskGt,
    MaskSim,
    MaskExternal,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::OneHot,
        Variant::GoalImage,
        Variant::MaskGt,
        Variant::MaskSim,
        Variant::MaskExternal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::OneHot => "onehot",
            Variant::GoalImage => "goalimage",
            Variant::MaskGt => "mask-gt",
            Variant::MaskSim => "mask-sim",
            Variant::MaskExternal => "mask-ext",
        }
    }

    pub fn conditioning(self) -> Conditioning {
        match self {
            Variant::OneHot => Conditioning::OneHot,
            Variant::GoalImage => Conditioning::GoalImage,
            _ => Conditioning::Mask,
        }
    }

    pub fn backend(self) -> Option<BackendKind> {
        match self {
            Variant::MaskGt => Some(BackendKind::Oracle),
            Variant::MaskSim => Some(BackendKind::Simulated),
            Variant::MaskExternal => Some(BackendKind::External),
            _ => None,
        }
    }

    /// Initial learning rate of the linear schedule.
    pub fn default_lr(self) -> f64 {
        match self {
            Variant::OneHot | Variant::MaskGt => 3e-4,
            Variant::GoalImage | Variant::MaskSim | Variant::MaskExternal => 2e-4,
        }
    }

    pub fn default_width(self) -> usize {
        match self {
            Variant::GoalImage => 1024,
            _ => 512,
        }
    }

    pub fn net_spec(self, resolution: usize, width: usize) -> NetSpec {
        let c = self.conditioning();
        NetSpec::standard(c.in_channels(), c.flat_goal(), resolution, width)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::InvalidValue(format!("variant `{s}` (expected onehot, goalimage, mask-gt, mask-sim or mask-ext)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BackendKind {
    Oracle,
    Simulated,
    External,
}

impl BackendKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::Oracle => "oracle",
            BackendKind::Simulated => "simulated",
            BackendKind::External => "external",
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" | "gt" => Ok(BackendKind::Oracle),
            "simulated" | "sim" => Ok(BackendKind::Simulated),
            "external" => Ok(BackendKind::External),
            other => Err(Error::InvalidValue(format!(
                "detector backend `{other}` (expected oracle, simulated or external)"
            ))),
        }
    }
}

/// Everything needed to construct mask pipelines.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorSetup {
    pub noise: NoiseProfile,
    pub threshold: f64,
    pub resolution: usize,
    /// Shell command of a newline-delimited JSON detector process.
    pub command: Option<String>,
    /// Base URL of an HTTP detector; used when no command is given.
    pub url: Option<String>,
    pub timeout: Duration,
}

impl Default for DetectorSetup {
    fn default() -> Self {
        DetectorSetup {
            noise: NoiseProfile::default(),
            threshold: DEFAULT_THRESHOLD,
            resolution: 128,
            command: None,
            url: None,
            timeout: crate::detector::external::DEFAULT_TIMEOUT,
        }
    }
}

impl DetectorSetup {
    /// A fresh pipeline. External backends get their own connection, so
    /// call once per worker.
    pub fn pipeline(&self, kind: BackendKind) -> Result<MaskPipeline> {
        let backend = match kind {
            BackendKind::Oracle => DetectorBackend::Oracle,
            BackendKind::Simulated => {
                self.noise.validate()?;
                DetectorBackend::Simulated(self.noise.clone())
            }
            BackendKind::External => {
                let client: Box<dyn DetectorClient> = match (&self.command, &self.url) {
                    (Some(cmd), _) => Box::new(ProcessDetector::spawn(cmd, self.timeout)?),
                    (None, Some(url)) => Box::new(HttpDetector::new(url, self.timeout)),
                    (None, None) => {
                        return Err(Error::Config(
                            "external detector selected but neither detector.command nor detector.url is set".into(),
                        ))
                    }
                };
                DetectorBackend::External(client)
            }
        };
        let mut p = MaskPipeline::new(backend, self.resolution);
        p.threshold = self.threshold;
        Ok(p)
    }
}

/// Result of one wrapped step.
#[derive(Debug, Clone)]
pub struct GoalStep {
    pub input: NetInput,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
    pub info: StepInfo,
}

/// Simulator plus goal conditioning for one worker.
#[derive(Debug)]
pub struct GoalEnv {
    env: TabletopEnv,
    conditioning: Conditioning,
    pipeline: Option<MaskPipeline>,
    goal: Option<GoalSpec>,
    episode_seed: u64,
    /// Per-episode conditioning that does not change between steps.
    fixed: Vec<f32>,
}

impl GoalEnv {
    /// `pipeline` is required for mask conditioning and ignored otherwise.
    pub fn new(sim: SimConfig, conditioning: Conditioning, pipeline: Option<MaskPipeline>) -> Result<Self> {
        if conditioning == Conditioning::Mask && pipeline.is_none() {
            return Err(Error::Config("mask conditioning needs a detector pipeline".into()));
        }
        Ok(GoalEnv {
            env: TabletopEnv::new(sim),
            conditioning,
            pipeline: if conditioning == Conditioning::Mask { pipeline } else { None },
            goal: None,
            episode_seed: 0,
            fixed: Vec::new(),
        })
    }

    pub fn sim(&self) -> &TabletopEnv {
        &self.env
    }

    pub fn goal(&self) -> Option<&GoalSpec> {
        self.goal.as_ref()
    }

    pub fn conditioning(&self) -> Conditioning {
        self.conditioning
    }

    /// Reset with a goal drawn uniformly from `object_set` using the
    /// episode seed.
    pub fn reset_random_goal(&mut self, seed: u64, object_set: ObjectSet, n_objects: usize) -> Result<NetInput> {
        let label = object_set
            .labels()
            .choose(&mut rng::stream(seed, &[rng::tag::GOAL]))
            .expect("object sets are non-empty");
        self.reset(seed, object_set, n_objects, label)
    }

    pub fn reset(&mut self, seed: u64, object_set: ObjectSet, n_objects: usize, goal_label: &str) -> Result<NetInput> {
        let (obs, goal) = self.env.reset(seed, object_set, n_objects, goal_label)?;
        self.episode_seed = seed;
        self.fixed = match self.conditioning {
            Conditioning::OneHot => match encode_onehot(&goal)? {
                GoalConditioning::OneHot(v) => v.to_vec(),
                _ => unreachable!(),
            },
            Conditioning::GoalImage => match encode_goal_image(&goal) {
                GoalConditioning::GoalImage(f) => channel_major(&f.pixels, f.width * f.height),
                _ => unreachable!(),
            },
            Conditioning::Mask => Vec::new(),
        };
        self.goal = Some(goal);
        self.build_input(&obs, true)
    }

    pub fn step(&mut self, action: Action) -> Result<GoalStep> {
        let out = self.env.step(action)?;
        let input = self.build_input(&out.observation, false)?;
        Ok(GoalStep {
            input,
            reward: out.reward,
            terminated: out.terminated,
            truncated: out.truncated,
            info: out.info,
        })
    }

    /// Current goal conditioning, recomputed for masks.
    pub fn conditioning_now(&mut self, episode_start: bool) -> Result<GoalConditioning> {
        let goal = self.goal.as_ref().ok_or(Error::EpisodeFinished)?;
        match self.conditioning {
            Conditioning::OneHot => encode_onehot(goal),
            Conditioning::GoalImage => Ok(encode_goal_image(goal)),
            Conditioning::Mask => {
                let state = self.env.state().expect("reset before use");
                let camera = self.env.camera(self.env.config().policy_resolution);
                let seed = rng::derive_seed(self.episode_seed, &[rng::tag::DETECTOR, u64::from(state.step_count)]);
                let pipeline = self.pipeline.as_mut().expect("checked in new");
                pipeline.goal_mask(state, &camera, &goal.label_text, seed, episode_start)
            }
        }
    }

    fn build_input(&mut self, obs: &Observation, episode_start: bool) -> Result<NetInput> {
        let res = obs.frame.width;
        let plane = res * obs.frame.height;
        let mut image = channel_major(&obs.frame.pixels, plane);
        let mut flat_goal = Vec::new();
        match self.conditioning {
            Conditioning::OneHot => flat_goal = self.fixed.clone(),
            Conditioning::GoalImage => image.extend_from_slice(&self.fixed),
            Conditioning::Mask => match self.conditioning_now(episode_start)? {
                GoalConditioning::GoalMask(m) => image.extend(m.data.iter().map(|&v| f32::from(v))),
                _ => unreachable!(),
            },
        }
        let scale = self.env.config().action_scale;
        let mut proprio = [0.0f32; PROPRIO_DIM];
        for k in 0..PROPRIO_DIM {
            let v = obs.proprio[k];
            // Velocities are per-step displacements; express them in action units.
            proprio[k] = if (3..6).contains(&k) { v / scale } else { v } as f32;
        }
        Ok(NetInput {
            image,
            channels: self.conditioning.in_channels(),
            resolution: res,
            proprio,
            flat_goal,
        })
    }
}

/// Interleaved `H × W × 3` to channel-major `3 × H × W`.
fn channel_major(pixels: &[f32], plane: usize) -> Vec<f32> {
    let mut out = vec![0.0; 3 * plane];
    for (i, px) in pixels.chunks_exact(3).enumerate() {
        out[i] = px[0];
        out[plane + i] = px[1];
        out[2 * plane + i] = px[2];
    }
    out
}
