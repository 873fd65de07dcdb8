//! Goal conditioning: what the policy is told about the target each step.
//!
//! - one-hot: 8-slot catalog index, fixed for the episode;
//! - goal image: the catalog's canonical picture of the object, fixed for
//!   the episode;
//! - goal mask: a binary image, white inside the selected detection's box,
//!   recomputed from the current egocentric view every step.

use crate::camera::{render, CameraModel, Frame};
use crate::detector::external::DetectorClient;
use crate::detector::{
    detect_oracle, detect_simulated, filter_threshold, select_target, BBox, NoiseProfile,
    DEFAULT_THRESHOLD,
};
use crate::sim::{self, Footprint, WorldState};
use crate::{Error, Result};

pub const ONE_HOT_SLOTS: usize = 8;

/// Background of the canonical goal pictures; deliberately different from
/// the table so a goal image never looks like a scene view.
pub const REFERENCE_BACKGROUND: [f32; 3] = [1.0, 1.0, 1.0];

#[derive(Debug, Clone, PartialEq)]
pub struct GoalSpec {
    pub label_text: String,
    pub catalog_index: usize,
    pub reference_image: Frame,
}

impl GoalSpec {
    pub fn new(label: &str, resolution: usize) -> Result<Self> {
        let entry = sim::lookup(label)?;
        Ok(GoalSpec {
            label_text: entry.label.to_string(),
            catalog_index: entry.index,
            reference_image: reference_image(&entry.footprint, entry.color, resolution),
        })
    }
}

/// Object-centric picture: the footprint seen from straight above, centered
/// and scaled to fill most of the frame, on a plain background.
pub fn reference_image(footprint: &Footprint, color: [f32; 3], resolution: usize) -> Frame {
    let mut f = Frame::filled(resolution, resolution, REFERENCE_BACKGROUND);
    // The characteristic radius maps to 35% of the frame width; squares use
    // it as half side, so leave room for their corners.
    let span = footprint.radius / 0.35;
    for py in 0..resolution {
        for px in 0..resolution {
            let u = (px as f64 + 0.5) / resolution as f64 - 0.5;
            let v = (py as f64 + 0.5) / resolution as f64 - 0.5;
            if footprint.contains([u * span, -v * span]) {
                f.set_pixel(px, py, color);
            }
        }
    }
    f
}

/// One-channel binary image, row-major, values in {0, 1}.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Mask {
    pub fn zeros(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn ones(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    /// Mean pixel position of the ones, in pixels.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let mut n = 0usize;
        let (mut sx, mut sy) = (0.0, 0.0);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) == 1 {
                    n += 1;
                    sx += x as f64;
                    sy += y as f64;
                }
            }
        }
        (n > 0).then(|| (sx / n as f64, sy / n as f64))
    }

    pub fn write_png(&self, path: &std::path::Path) -> Result<()> {
        let bytes: Vec<u8> = self.data.iter().map(|&v| v * 255).collect();
        crate::camera::write_png(path, self.width, self.height, png::ColorType::Grayscale, &bytes)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GoalConditioning {
    OneHot([f32; ONE_HOT_SLOTS]),
    GoalImage(Frame),
    GoalMask(Mask),
}

pub fn encode_onehot(goal: &GoalSpec) -> Result<GoalConditioning> {
    if goal.catalog_index >= ONE_HOT_SLOTS {
        return Err(Error::IndexOutOfRange(goal.catalog_index));
    }
    let mut v = [0.0; ONE_HOT_SLOTS];
    v[goal.catalog_index] = 1.0;
    Ok(GoalConditioning::OneHot(v))
}

pub fn encode_goal_image(goal: &GoalSpec) -> GoalConditioning {
    GoalConditioning::GoalImage(goal.reference_image.clone())
}

/// Rasterize a box: a pixel is 1 iff its center lies in `[x0, x1) × [y0, y1)`
/// (the right/bottom edge is inclusive at 1.0 so full-frame boxes cover
/// every pixel). `None` gives the all-zero mask.
pub fn mask_from_bbox(bbox: Option<&BBox>, width: usize, height: usize) -> Mask {
    let mut m = Mask::zeros(width, height);
    let Some(b) = bbox else {
        return m;
    };
    let inside = |c: f64, lo: f64, hi: f64| c >= lo && (c < hi || hi >= 1.0);
    for y in 0..height {
        let cy = (y as f64 + 0.5) / height as f64;
        if !inside(cy, b.y0, b.y1) {
            continue;
        }
        for x in 0..width {
            let cx = (x as f64 + 0.5) / width as f64;
            if inside(cx, b.x0, b.x1) {
                m.data[y * width + x] = 1;
            }
        }
    }
    m
}

pub enum DetectorBackend {
    Oracle,
    Simulated(NoiseProfile),
    External(Box<dyn DetectorClient>),
}

impl DetectorBackend {
    pub fn name(&self) -> &'static str {
        match self {
            DetectorBackend::Oracle => "oracle",
            DetectorBackend::Simulated(_) => "simulated",
            DetectorBackend::External(_) => "external",
        }
    }
}

impl std::fmt::Debug for DetectorBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Detector → threshold → target selection → mask, evaluated on the current
/// view.
#[derive(Debug)]
pub struct MaskPipeline {
    pub backend: DetectorBackend,
    /// Applied to every non-oracle backend.
    pub threshold: f64,
    /// Resolution of the frame the detector sees.
    pub detector_resolution: usize,
}

impl MaskPipeline {
    pub fn new(backend: DetectorBackend, detector_resolution: usize) -> Self {
        MaskPipeline {
            backend,
            threshold: DEFAULT_THRESHOLD,
            detector_resolution,
        }
    }

    pub fn oracle() -> Self {
        MaskPipeline::new(DetectorBackend::Oracle, 128)
    }

    /// Selected box for this step, before rasterization.
    pub fn target_box(
        &mut self,
        state: &WorldState,
        camera: &CameraModel,
        prompt: &str,
        seed: u64,
    ) -> Result<Option<BBox>> {
        let hi_res = camera.with_resolution(self.detector_resolution, self.detector_resolution);
        let detections = match &mut self.backend {
            DetectorBackend::Oracle => detect_oracle(state, &hi_res, prompt)?,
            DetectorBackend::Simulated(noise) => filter_threshold(
                detect_simulated(state, &hi_res, prompt, noise, seed)?,
                self.threshold,
            ),
            DetectorBackend::External(client) => {
                let frame = render(state, &hi_res);
                filter_threshold(client.detect(&frame, prompt, self.threshold)?, self.threshold)
            }
        };
        Ok(select_target(&detections).map(|d| d.bbox))
    }

    /// Goal mask at the camera's (policy) resolution. External failures are
    /// returned at episode start; later in the episode they degrade to the
    /// all-zero mask with a warning.
    pub fn goal_mask(
        &mut self,
        state: &WorldState,
        camera: &CameraModel,
        prompt: &str,
        seed: u64,
        episode_start: bool,
    ) -> Result<GoalConditioning> {
        let bbox = match self.target_box(state, camera, prompt, seed) {
            Ok(b) => b,
            Err(e @ Error::UnknownLabel(_)) => return Err(e),
            Err(e) if episode_start => return Err(e),
            Err(e) => {
                log::warn!("detector failed mid-episode, using empty mask: {e}");
                None
            }
        };
        Ok(GoalConditioning::GoalMask(mask_from_bbox(
            bbox.as_ref(),
            camera.width,
            camera.height,
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{project_bbox, CameraRig};
    use crate::sim::{ObjectInstance, ObjectSet, SimConfig, TabletopEnv, CATALOG};

    #[test]
    fn onehot_slots() {
        let g = GoalSpec::new("apple", 16).unwrap();
        assert_eq!(encode_onehot(&g).unwrap(), GoalConditioning::OneHot([1., 0., 0., 0., 0., 0., 0., 0.]));
        let g = GoalSpec::new("star", 16).unwrap();
        assert_eq!(encode_onehot(&g).unwrap(), GoalConditioning::OneHot([0., 0., 0., 0., 0., 0., 0., 1.]));
        let bad = GoalSpec {
            catalog_index: 8,
            ..g
        };
        assert!(matches!(encode_onehot(&bad), Err(Error::IndexOutOfRange(8))));
    }

    #[test]
    fn goal_image_is_object_centric_lookup() {
        let g = GoalSpec::new("apple", 32).unwrap();
        let a = encode_goal_image(&g);
        assert_eq!(a, encode_goal_image(&g));
        let GoalConditioning::GoalImage(f) = a else { panic!() };
        assert_eq!(f.pixel(16, 16), CATALOG[0].color);
        assert_eq!(f.pixel(0, 0), REFERENCE_BACKGROUND);
        assert_eq!(f, GoalSpec::new("apple", 32).unwrap().reference_image);
        assert_ne!(f, GoalSpec::new("ball", 32).unwrap().reference_image);
        // Not the live scene: the scene background never appears.
        assert!(f.pixels.chunks(3).all(|p| p != crate::camera::BACKGROUND));
    }

    #[test]
    fn mask_cases() {
        assert_eq!(mask_from_bbox(Some(&BBox::full()), 8, 8).ones(), 64);
        assert_eq!(mask_from_bbox(None, 8, 8).ones(), 0);
        let m = mask_from_bbox(Some(&BBox::new(0.25, 0.25, 0.75, 0.75).unwrap()), 8, 8);
        assert_eq!(m.ones(), 16);
        for y in 0..8 {
            for x in 0..8 {
                let expect = (2..=5).contains(&x) && (2..=5).contains(&y);
                assert_eq!(m.get(x, y) == 1, expect);
            }
        }
    }

    #[test]
    fn oracle_pipeline_rasterizes_gt_box() {
        let mut env = TabletopEnv::new(SimConfig::default());
        env.reset(2, ObjectSet::InDistribution, 5, "cube").unwrap();
        let s = env.state().unwrap();
        let cam = env.camera(64);
        let mut p = MaskPipeline::oracle();
        let GoalConditioning::GoalMask(m) = p.goal_mask(s, &cam, "cube", 0, true).unwrap() else {
            panic!()
        };
        let b = project_bbox(s.goal(), &cam).unwrap();
        assert_eq!(m, mask_from_bbox(Some(&b), 64, 64));
        assert!(m.ones() > 0);
    }

    #[test]
    fn simulated_total_miss_gives_empty_mask() {
        let mut env = TabletopEnv::new(SimConfig::default());
        env.reset(2, ObjectSet::InDistribution, 1, "cube").unwrap();
        let noise = NoiseProfile {
            miss_base: 1.0,
            ..NoiseProfile::default()
        };
        let mut p = MaskPipeline::new(DetectorBackend::Simulated(noise), 128);
        let cam = env.camera(64);
        let GoalConditioning::GoalMask(m) = p.goal_mask(env.state().unwrap(), &cam, "cube", 5, true).unwrap()
        else {
            panic!()
        };
        assert_eq!(m.ones(), 0);
    }

    #[test]
    fn mask_carries_no_identity() {
        // Two different objects with the same footprint radius and height at
        // the same place project to the same box and hence the same mask.
        let cam = CameraModel::egocentric([0.0, 0.1, 0.35], &CameraRig::default(), 64);
        let a = ObjectInstance::from_catalog(&CATALOG[0], [0.0, 0.5]);
        let b = ObjectInstance {
            color: [0.0, 1.0, 0.0],
            object_id: 4,
            label_text: "ball",
            ..a.clone()
        };
        let ma = mask_from_bbox(project_bbox(&a, &cam).as_ref(), 64, 64);
        let mb = mask_from_bbox(project_bbox(&b, &cam).as_ref(), 64, 64);
        assert_eq!(ma, mb);
    }
}
