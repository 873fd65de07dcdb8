//! Planar tabletop reach-and-grasp environment.
//!
//! The arm is abstracted to a kinematic end effector moving in a
//! 1.0 × 1.0 × 0.5 m workspace box plus a one-dimensional gripper
//! aperture. Objects are flat-topped prisms standing on the table; a
//! gripper pad touches an object when the pad's (x, y) lies inside the
//! object's footprint and the end effector is no higher than the object.

pub mod catalog;
pub mod shape;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::camera::{self, CameraModel, CameraRig, Frame};
use crate::goal::GoalSpec;
use crate::{rng, Error, Result};

pub use catalog::{lookup, CatalogEntry, ObjectSet, CATALOG};
pub use shape::{Footprint, Shape};

pub const WORKSPACE_MIN: [f64; 3] = [-0.5, 0.0, 0.0];
pub const WORKSPACE_MAX: [f64; 3] = [0.5, 1.0, 0.5];
pub const HOME: [f64; 3] = [0.0, 0.05, 0.45];

/// Slot row at table depth y = 0.5 m, spaced 0.15 m.
pub const SLOTS: [[f64; 2]; 5] = [[-0.3, 0.5], [-0.15, 0.5], [0.0, 0.5], [0.15, 0.5], [0.3, 0.5]];

/// Pad offset from the gripper center at full aperture, along world x.
pub const PAD_HALF_WIDTH: f64 = 0.06;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SuccessCriterion {
    /// Both pads touch the goal (training criterion).
    BothPads,
    /// Either pad touches the goal (evaluation criterion).
    SinglePad,
}

impl SuccessCriterion {
    pub fn satisfied(self, contact: (bool, bool)) -> bool {
        match self {
            SuccessCriterion::BothPads => contact.0 && contact.1,
            SuccessCriterion::SinglePad => contact.0 || contact.1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SuccessCriterion::BothPads => "both_pads",
            SuccessCriterion::SinglePad => "single_pad",
        }
    }
}

impl std::str::FromStr for SuccessCriterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both" | "both_pads" => Ok(SuccessCriterion::BothPads),
            "single" | "single_pad" => Ok(SuccessCriterion::SinglePad),
            other => Err(Error::InvalidValue(format!(
                "success criterion `{other}` (expected `both_pads` or `single_pad`)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardConfig {
    pub progress_scale: f64,
    pub contact_bonus: f64,
    pub success_bonus: f64,
    pub time_penalty: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            progress_scale: 1.0,
            contact_bonus: 0.25,
            success_bonus: 10.0,
            time_penalty: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub max_episode_length: u32,
    /// Meters per step for a unit action component.
    pub action_scale: f64,
    /// Bound of the shared random translation applied to the slot row.
    pub translate_bound: f64,
    /// Aperture change per step for a unit grip command.
    pub grip_rate: f64,
    pub criterion: SuccessCriterion,
    pub reward: RewardConfig,
    pub camera: CameraRig,
    pub policy_resolution: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            max_episode_length: 250,
            action_scale: 0.02,
            translate_bound: 0.05,
            grip_rate: 0.1,
            criterion: SuccessCriterion::BothPads,
            reward: RewardConfig::default(),
            camera: CameraRig::default(),
            policy_resolution: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectInstance {
    pub object_id: usize,
    pub center: [f64; 2],
    pub footprint: Footprint,
    pub height: f64,
    pub color: [f32; 3],
    pub label_text: &'static str,
}

impl ObjectInstance {
    pub fn from_catalog(entry: &CatalogEntry, center: [f64; 2]) -> Self {
        ObjectInstance {
            object_id: entry.index,
            center,
            footprint: entry.footprint,
            height: entry.height,
            color: entry.color,
            label_text: entry.label,
        }
    }

    /// Grasp point: center of the top face.
    pub fn grasp_point(&self) -> [f64; 3] {
        [self.center[0], self.center[1], self.height]
    }

    pub fn contains_xy(&self, p: [f64; 2]) -> bool {
        self.footprint
            .contains([p[0] - self.center[0], p[1] - self.center[1]])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub ee_pos: [f64; 3],
    pub ee_vel: [f64; 3],
    pub gripper_aperture: f64,
    pub objects: Vec<ObjectInstance>,
    pub step_count: u32,
    pub goal_index: usize,
}

impl WorldState {
    pub fn goal(&self) -> &ObjectInstance {
        &self.objects[self.goal_index]
    }

    pub fn goal_distance(&self) -> f64 {
        distance(self.ee_pos, self.goal().grasp_point())
    }

    /// Flat text record, one line per object: `id x y shape radius`.
    pub fn snapshot(&self) -> String {
        let mut out = String::new();
        for o in &self.objects {
            let _ = writeln!(
                out,
                "{} {:.6} {:.6} {} {:.6}",
                o.object_id, o.center[0], o.center[1], o.footprint.shape, o.footprint.radius
            );
        }
        out
    }
}

/// One parsed line of [`WorldState::snapshot`].
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotRecord {
    pub object_id: usize,
    pub x: f64,
    pub y: f64,
    pub shape: Shape,
    pub radius: f64,
}

pub fn parse_snapshot(text: &str) -> Result<Vec<SnapshotRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let bad = || Error::InvalidValue(format!("snapshot line `{line}`"));
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 5 {
                return Err(bad());
            }
            Ok(SnapshotRecord {
                object_id: f[0].parse().map_err(|_| bad())?,
                x: f[1].parse().map_err(|_| bad())?,
                y: f[2].parse().map_err(|_| bad())?,
                shape: f[3].parse().map_err(|_| bad())?,
                radius: f[4].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Action {
    pub delta: [f64; 3],
    pub grip_cmd: f64,
}

impl Action {
    pub fn new(delta: [f64; 3], grip_cmd: f64) -> Self {
        Action { delta, grip_cmd }
    }

    pub fn from_slice(v: &[f32]) -> Self {
        Action {
            delta: [f64::from(v[0]), f64::from(v[1]), f64::from(v[2])],
            grip_cmd: f64::from(v[3]),
        }
    }

    /// Clamp every component to [-1, 1]; non-finite components become 0.
    pub fn clamped(self) -> Self {
        let c = |x: f64| if x.is_finite() { x.clamp(-1.0, 1.0) } else { 0.0 };
        Action {
            delta: self.delta.map(c),
            grip_cmd: c(self.grip_cmd),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub frame: Frame,
    /// `[ee_pos(3), ee_vel(3), aperture]`.
    pub proprio: [f64; 7],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub pad_left: bool,
    pub pad_right: bool,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
    pub info: StepInfo,
}

pub fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Pad points sit at `ee ± aperture · PAD_HALF_WIDTH` along world x. A pad
/// touches the object iff its (x, y) is inside the footprint and the end
/// effector is not above the object's top face.
pub fn pad_contact(state: &WorldState, object: &ObjectInstance) -> (bool, bool) {
    if state.ee_pos[2] > object.height {
        return (false, false);
    }
    let offset = state.gripper_aperture * PAD_HALF_WIDTH;
    let [x, y, _] = state.ee_pos;
    (
        object.contains_xy([x - offset, y]),
        object.contains_xy([x + offset, y]),
    )
}

/// Sample the episode layout: which objects, which slots, and the shared
/// translation. Returns the objects in catalog order and the goal's index.
pub fn sample_layout(
    seed: u64,
    object_set: ObjectSet,
    n_objects: usize,
    goal_label: &str,
    translate_bound: f64,
) -> Result<(Vec<ObjectInstance>, usize)> {
    let entries = object_set.entries();
    let goal = object_set.find(goal_label)?;
    let available = entries.len().min(SLOTS.len());
    if n_objects == 0 || n_objects > available {
        return Err(Error::TooManyObjects {
            requested: n_objects,
            available,
        });
    }

    let mut rng = rng::stream(seed, &[rng::tag::EPISODE]);
    let mut others: Vec<&CatalogEntry> = entries.iter().filter(|e| e.index != goal.index).collect();
    others.shuffle(&mut rng);
    let mut chosen: Vec<&CatalogEntry> = others.into_iter().take(n_objects - 1).collect();
    chosen.push(goal);
    chosen.sort_by_key(|e| e.index);

    let mut slots: Vec<usize> = (0..SLOTS.len()).collect();
    slots.shuffle(&mut rng);
    let dx = rng.gen_range(-translate_bound..=translate_bound);
    let dy = rng.gen_range(-translate_bound..=translate_bound);

    let objects: Vec<ObjectInstance> = chosen
        .iter()
        .zip(&slots)
        .map(|(e, &s)| ObjectInstance::from_catalog(e, [SLOTS[s][0] + dx, SLOTS[s][1] + dy]))
        .collect();
    let goal_index = objects
        .iter()
        .position(|o| o.object_id == goal.index)
        .expect("goal is among the chosen objects");
    Ok((objects, goal_index))
}

#[derive(Debug, Clone)]
pub struct TabletopEnv {
    config: SimConfig,
    state: Option<WorldState>,
    finished: bool,
    prev_distance: f64,
}

impl TabletopEnv {
    pub fn new(config: SimConfig) -> Self {
        TabletopEnv {
            config,
            state: None,
            finished: true,
            prev_distance: 0.0,
        }
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn state(&self) -> Option<&WorldState> {
        self.state.as_ref()
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn reset(
        &mut self,
        seed: u64,
        object_set: ObjectSet,
        n_objects: usize,
        goal_label: &str,
    ) -> Result<(Observation, GoalSpec)> {
        let (objects, goal_index) = sample_layout(
            seed,
            object_set,
            n_objects,
            goal_label,
            self.config.translate_bound,
        )?;
        let state = WorldState {
            ee_pos: HOME,
            ee_vel: [0.0; 3],
            gripper_aperture: 1.0,
            objects,
            step_count: 0,
            goal_index,
        };
        self.prev_distance = state.goal_distance();
        self.state = Some(state);
        self.finished = false;
        let goal = GoalSpec::new(goal_label, self.config.policy_resolution)?;
        Ok((self.observe(), goal))
    }

    pub fn step(&mut self, action: Action) -> Result<StepOutcome> {
        if self.finished {
            return Err(Error::EpisodeFinished);
        }
        let config = &self.config;
        let state = self.state.as_mut().ok_or(Error::EpisodeFinished)?;
        let action = action.clamped();

        let before = state.ee_pos;
        for k in 0..3 {
            state.ee_pos[k] = (state.ee_pos[k] + config.action_scale * action.delta[k])
                .clamp(WORKSPACE_MIN[k], WORKSPACE_MAX[k]);
            state.ee_vel[k] = state.ee_pos[k] - before[k];
        }
        state.gripper_aperture =
            (state.gripper_aperture - config.grip_rate * action.grip_cmd).clamp(0.0, 1.0);
        state.step_count += 1;

        let contact = pad_contact(state, state.goal());
        let d = state.goal_distance();
        let terminated = config.criterion.satisfied(contact);
        let truncated = !terminated && state.step_count >= config.max_episode_length;

        let r = &config.reward;
        let pads = u8::from(contact.0) + u8::from(contact.1);
        let reward = r.progress_scale * (self.prev_distance - d)
            + r.contact_bonus * f64::from(pads)
            + if terminated { r.success_bonus } else { 0.0 }
            - r.time_penalty;
        self.prev_distance = d;
        self.finished = terminated || truncated;

        Ok(StepOutcome {
            observation: self.observe(),
            reward,
            terminated,
            truncated,
            info: StepInfo {
                pad_left: contact.0,
                pad_right: contact.1,
                distance: d,
            },
        })
    }

    pub fn camera(&self, resolution: usize) -> CameraModel {
        let state = self.state.as_ref().expect("camera requested before reset");
        CameraModel::egocentric(state.ee_pos, &self.config.camera, resolution)
    }

    pub fn observe(&self) -> Observation {
        let state = self.state.as_ref().expect("observe called before reset");
        let cam = self.camera(self.config.policy_resolution);
        let mut proprio = [0.0; 7];
        proprio[..3].copy_from_slice(&state.ee_pos);
        proprio[3..6].copy_from_slice(&state.ee_vel);
        proprio[6] = state.gripper_aperture;
        Observation {
            frame: camera::render(state, &cam),
            proprio,
        }
    }
}
