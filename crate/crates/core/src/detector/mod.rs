//! Grounded detectors: map a text prompt and the current view to labeled
//! boxes.
//!
//! Three backends share the [`Detection`] output type:
//!
//! - [`detect_oracle`]: the goal's exact projected box, score 1.
//! - [`detect_simulated`]: oracle geometry corrupted by a seeded noise model
//!   (misses that grow with distance, corner jitter, goal-phrase false
//!   positives on distractors, Beta-distributed scores).
//! - [`external`]: a client for an out-of-process detector speaking
//!   newline-delimited JSON (or HTTP).

pub mod external;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal};

use crate::camera::{project_bbox, CameraModel};
use crate::sim::{self, ObjectInstance, WorldState};
use crate::{rng, Error, Result};

/// Inference threshold applied to non-oracle detectors.
pub const DEFAULT_THRESHOLD: f64 = 0.55;

/// Axis-aligned box in normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(unit(x0) && unit(y0) && unit(x1) && unit(y1)) || x0 >= x1 || y0 >= y1 {
            return Err(Error::InvalidValue(format!(
                "bbox [{x0}, {y0}, {x1}, {y1}] must satisfy 0 <= x0 < x1 <= 1 and 0 <= y0 < y1 <= 1"
            )));
        }
        Ok(BBox { x0, y0, x1, y1 })
    }

    pub fn full() -> Self {
        BBox {
            x0: 0.0,
            y0: 0.0,
            x1: 1.0,
            y1: 1.0,
        }
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub score: f64,
    pub phrase: String,
}

/// Beta(alpha, beta) score distribution. `alpha == beta == 0` denotes the
/// degenerate point mass at 1, which is what the oracle reports.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreDist {
    pub alpha: f64,
    pub beta: f64,
}

impl ScoreDist {
    pub const CERTAIN: ScoreDist = ScoreDist {
        alpha: 0.0,
        beta: 0.0,
    };

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.alpha == 0.0 && self.beta == 0.0 {
            return 1.0;
        }
        Beta::new(self.alpha, self.beta)
            .expect("validated beta parameters")
            .sample(rng)
    }

    fn validate(&self, name: &str) -> Result<()> {
        let degenerate = self.alpha == 0.0 && self.beta == 0.0;
        if degenerate || (self.alpha > 0.0 && self.beta > 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidValue(format!(
                "{name} Beta parameters must both be positive or both zero"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseProfile {
    pub miss_base: f64,
    /// Per-corner Gaussian std, normalized image units.
    pub jitter_sigma: f64,
    pub fp_per_distractor: f64,
    pub score_true: ScoreDist,
    pub score_fp: ScoreDist,
    /// Miss-probability growth per meter of camera-object distance.
    pub distance_decay: f64,
}

impl Default for NoiseProfile {
    fn default() -> Self {
        NoiseProfile {
            miss_base: 0.05,
            jitter_sigma: 0.01,
            fp_per_distractor: 0.15,
            score_true: ScoreDist {
                alpha: 8.0,
                beta: 2.0,
            },
            score_fp: ScoreDist {
                alpha: 4.0,
                beta: 3.0,
            },
            distance_decay: 0.1,
        }
    }
}

impl NoiseProfile {
    /// No misses, no jitter, no false positives, certain scores.
    pub fn zero() -> Self {
        NoiseProfile {
            miss_base: 0.0,
            jitter_sigma: 0.0,
            fp_per_distractor: 0.0,
            score_true: ScoreDist::CERTAIN,
            score_fp: ScoreDist::CERTAIN,
            distance_decay: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |v: f64, name: &str| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidValue(format!("{name} = {v} is not a probability")))
            }
        };
        prob(self.miss_base, "noise.miss_base")?;
        prob(self.fp_per_distractor, "noise.fp_per_distractor")?;
        if !(self.jitter_sigma >= 0.0) || !(self.distance_decay >= 0.0) {
            return Err(Error::InvalidValue(
                "noise.jitter_sigma and noise.distance_decay must be non-negative".into(),
            ));
        }
        self.score_true.validate("noise.score_true")?;
        self.score_fp.validate("noise.score_fp")
    }
}

fn find_prompted<'a>(state: &'a WorldState, prompt: &str) -> Result<Option<&'a ObjectInstance>> {
    let entry = sim::lookup(prompt)?;
    Ok(state.objects.iter().find(|o| o.object_id == entry.index))
}

/// Ground-truth detector: the prompted object's projected box with score 1,
/// or nothing when it is out of view (or absent from the table).
pub fn detect_oracle(state: &WorldState, camera: &CameraModel, prompt: &str) -> Result<Vec<Detection>> {
    let Some(object) = find_prompted(state, prompt)? else {
        return Ok(Vec::new());
    };
    Ok(project_bbox(object, camera)
        .map(|bbox| Detection {
            bbox,
            score: 1.0,
            phrase: prompt.to_string(),
        })
        .into_iter()
        .collect())
}

fn jittered(b: BBox, sigma: f64, rng: &mut ChaCha8Rng) -> Option<BBox> {
    if sigma == 0.0 {
        return Some(b);
    }
    let n = Normal::new(0.0, sigma).expect("finite sigma");
    let mut c = b.to_array().map(|v| (v + n.sample(rng)).clamp(0.0, 1.0));
    if c[0] > c[2] {
        c.swap(0, 2);
    }
    if c[1] > c[3] {
        c.swap(1, 3);
    }
    BBox::new(c[0], c[1], c[2], c[3]).ok()
}

/// Noisy detector seeded by `rng_seed`. The goal detection (if it survives)
/// comes first, followed by false positives in scene order. Every object
/// draws from its own stream, so adding a distractor never changes what
/// happens to the others.
pub fn detect_simulated(
    state: &WorldState,
    camera: &CameraModel,
    prompt: &str,
    noise: &NoiseProfile,
    rng_seed: u64,
) -> Result<Vec<Detection>> {
    let Some(target) = find_prompted(state, prompt)? else {
        return Ok(Vec::new());
    };
    let mut out = Vec::new();
    for object in &state.objects {
        let Some(bbox) = project_bbox(object, camera) else {
            continue;
        };
        let mut rng = rng::stream(rng_seed, &[rng::tag::DETECTOR, object.object_id as u64]);
        let is_target = object.object_id == target.object_id;
        let u: f64 = rng.gen();
        let scores = if is_target {
            let dist = sim::distance(camera.position, object.grasp_point());
            let miss = (noise.miss_base + noise.distance_decay * dist).clamp(0.0, 1.0);
            if u < miss {
                continue;
            }
            &noise.score_true
        } else {
            if u >= noise.fp_per_distractor {
                continue;
            }
            &noise.score_fp
        };
        let Some(bbox) = jittered(bbox, noise.jitter_sigma, &mut rng) else {
            continue;
        };
        let det = Detection {
            bbox,
            score: scores.sample(&mut rng),
            phrase: prompt.to_string(),
        };
        if is_target {
            out.insert(0, det);
        } else {
            out.push(det);
        }
    }
    Ok(out)
}

pub fn filter_threshold(detections: Vec<Detection>, threshold: f64) -> Vec<Detection> {
    detections.into_iter().filter(|d| d.score >= threshold).collect()
}

/// Highest score; ties go to the larger box, then to the earlier detection.
pub fn select_target(detections: &[Detection]) -> Option<&Detection> {
    let mut best: Option<&Detection> = None;
    for d in detections {
        best = match best {
            None => Some(d),
            Some(b) if d.score > b.score || (d.score == b.score && d.bbox.area() > b.bbox.area()) => {
                Some(d)
            }
            keep => keep,
        };
    }
    best
}
