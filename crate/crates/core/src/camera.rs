//! Egocentric camera: a pinhole camera rigidly mounted on the end effector,
//! a scanline rasterizer for the observation image, and exact projection of
//! object footprints to normalized bounding boxes.
//!
//! Objects are drawn as their top faces (the footprint lifted to the object
//! height). Image coordinates are normalized: u grows to the right, v grows
//! downward, both in [0, 1] across the frame.

use std::f64::consts::PI;
use std::io::BufWriter;
use std::path::Path;

use crate::detector::BBox;
use crate::sim::{ObjectInstance, WorldState};
use crate::{Error, Result};

pub const BACKGROUND: [f32; 3] = [0.5, 0.5, 0.5];

/// Points closer than this along the optical axis count as behind the camera.
const NEAR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraRig {
    /// Mount offset forward (+y) of the end effector, meters.
    pub mount_forward: f64,
    /// Downward pitch of the optical axis below horizontal, radians.
    pub pitch: f64,
    /// Full field of view (square frames, so horizontal = vertical), radians.
    pub fov: f64,
}

impl Default for CameraRig {
    fn default() -> Self {
        CameraRig {
            mount_forward: 0.05,
            pitch: 60f64.to_radians(),
            fov: 90f64.to_radians(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel {
    pub position: [f64; 3],
    pub right: [f64; 3],
    pub up: [f64; 3],
    pub forward: [f64; 3],
    pub fov: f64,
    pub width: usize,
    pub height: usize,
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

impl CameraModel {
    pub fn new(position: [f64; 3], pitch: f64, fov: f64, width: usize, height: usize) -> Self {
        assert!(fov > 0.0 && fov < PI, "field of view must be in (0, pi)");
        assert!(width >= 8 && height >= 8, "frames must be at least 8x8");
        let (s, c) = pitch.sin_cos();
        CameraModel {
            position,
            right: [1.0, 0.0, 0.0],
            up: [0.0, s, c],
            forward: [0.0, c, -s],
            fov,
            width,
            height,
        }
    }

    pub fn egocentric(ee_pos: [f64; 3], rig: &CameraRig, resolution: usize) -> Self {
        let position = [ee_pos[0], ee_pos[1] + rig.mount_forward, ee_pos[2]];
        CameraModel::new(position, rig.pitch, rig.fov, resolution, resolution)
    }

    /// Same pose and optics at a different resolution.
    pub fn with_resolution(&self, width: usize, height: usize) -> Self {
        CameraModel {
            width,
            height,
            ..*self
        }
    }

    fn tan_half(&self) -> f64 {
        (self.fov / 2.0).tan()
    }

    /// World point to camera coordinates `(right, up, depth)`.
    pub fn to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        let rel = [
            p[0] - self.position[0],
            p[1] - self.position[1],
            p[2] - self.position[2],
        ];
        [dot(rel, self.right), dot(rel, self.up), dot(rel, self.forward)]
    }

    /// Camera coordinates to normalized image coordinates.
    fn image_of(&self, c: [f64; 3]) -> [f64; 2] {
        let k = 2.0 * self.tan_half() * c[2];
        [0.5 + c[0] / k, 0.5 - c[1] / k]
    }

    /// Project a world point; `None` if it is behind the camera.
    pub fn project(&self, p: [f64; 3]) -> Option<[f64; 2]> {
        let c = self.to_camera(p);
        (c[2] > NEAR).then(|| self.image_of(c))
    }

    /// Direction of the ray through normalized image point (u, v).
    pub fn ray(&self, u: f64, v: f64) -> [f64; 3] {
        let t = self.tan_half();
        let a = (2.0 * u - 1.0) * t;
        let b = (1.0 - 2.0 * v) * t;
        [
            self.forward[0] + a * self.right[0] + b * self.up[0],
            self.forward[1] + a * self.right[1] + b * self.up[1],
            self.forward[2] + a * self.right[2] + b * self.up[2],
        ]
    }
}

/// RGB image, row-major `H × W × 3`, values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f32>,
}

impl Frame {
    pub fn filled(width: usize, height: usize, color: [f32; 3]) -> Self {
        let mut pixels = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            pixels.extend_from_slice(&color);
        }
        Frame {
            width,
            height,
            pixels,
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, c: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&c);
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn from_rgb8(width: usize, height: usize, data: &[u8]) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::ShapeMismatch(format!(
                "rgb8 buffer of {} bytes for {width}x{height}",
                data.len()
            )));
        }
        Ok(Frame {
            width,
            height,
            pixels: data.iter().map(|&b| f32::from(b) / 255.0).collect(),
        })
    }

    /// Nearest-neighbour resample.
    pub fn resized(&self, width: usize, height: usize) -> Frame {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let mut out = Frame::filled(width, height, [0.0; 3]);
        for y in 0..height {
            let sy = (y * self.height + self.height / 2) / height;
            for x in 0..width {
                let sx = (x * self.width + self.width / 2) / width;
                out.set_pixel(x, y, self.pixel(sx.min(self.width - 1), sy.min(self.height - 1)));
            }
        }
        out
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        write_png(path, self.width, self.height, png::ColorType::Rgb, &self.to_rgb8())
    }
}

pub(crate) fn write_png(
    path: &Path,
    width: usize,
    height: usize,
    color: png::ColorType,
    data: &[u8],
) -> Result<()> {
    let ctx = || format!("writing {}", path.display());
    let file = std::fs::File::create(path).map_err(|e| Error::io(ctx(), e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let to_io = |e: png::EncodingError| Error::io(ctx(), std::io::Error::other(e.to_string()));
    let mut w = enc.write_header().map_err(to_io)?;
    w.write_image_data(data).map_err(to_io)
}

/// Rasterize the scene seen by `camera`. Each pixel center casts a ray that
/// is intersected with every object's top face; the nearest hit wins.
pub fn render(state: &WorldState, camera: &CameraModel) -> Frame {
    let (w, h) = (camera.width, camera.height);
    let mut frame = Frame::filled(w, h, BACKGROUND);
    let mut depth = vec![f64::INFINITY; w * h];
    for object in &state.objects {
        let Some(b) = project_bbox(object, camera) else {
            continue;
        };
        let (px0, px1) = pixel_span(b.x0, b.x1, w);
        let (py0, py1) = pixel_span(b.y0, b.y1, h);
        for py in py0..py1 {
            let v = (py as f64 + 0.5) / h as f64;
            for px in px0..px1 {
                let u = (px as f64 + 0.5) / w as f64;
                let d = camera.ray(u, v);
                if d[2].abs() < 1e-12 {
                    continue;
                }
                let t = (object.height - camera.position[2]) / d[2];
                if t <= 0.0 || t >= depth[py * w + px] {
                    continue;
                }
                let hit = [camera.position[0] + t * d[0], camera.position[1] + t * d[1]];
                if object.contains_xy(hit) {
                    depth[py * w + px] = t;
                    frame.set_pixel(px, py, object.color);
                }
            }
        }
    }
    frame
}

/// Pixel index range whose centers may fall inside [lo, hi] (one pixel slack).
fn pixel_span(lo: f64, hi: f64, n: usize) -> (usize, usize) {
    let a = ((lo * n as f64).floor() as isize - 1).max(0) as usize;
    let b = ((hi * n as f64).ceil() as isize + 1).clamp(0, n as isize) as usize;
    (a, b)
}

/// Tight axis-aligned box of the object's projected top face, clipped to the
/// frame. `None` when nothing of it lands inside the frame or it is entirely
/// behind the camera.
pub fn project_bbox(object: &ObjectInstance, camera: &CameraModel) -> Option<BBox> {
    let lift = |p: [f64; 2]| {
        camera.to_camera([object.center[0] + p[0], object.center[1] + p[1], object.height])
    };
    let extent = match object.footprint.vertices() {
        Some(verts) => {
            let cam: Vec<[f64; 3]> = verts.into_iter().map(lift).collect();
            polygon_extent(camera, &cam)
        }
        None => circle_extent(camera, object).or_else(|| {
            // Circle straddles the near plane: fall back to a fine polygon.
            let cam: Vec<[f64; 3]> = object
                .footprint
                .boundary_points(720)
                .into_iter()
                .map(lift)
                .collect();
            polygon_extent(camera, &cam)
        }),
    }?;
    let [x0, y0, x1, y1] = extent;
    let (x0, x1) = (x0.clamp(0.0, 1.0), x1.clamp(0.0, 1.0));
    let (y0, y1) = (y0.clamp(0.0, 1.0), y1.clamp(0.0, 1.0));
    BBox::new(x0, y0, x1, y1).ok()
}

/// Image-space extent of a planar polygon given in camera coordinates,
/// after clipping it against the near plane.
fn polygon_extent(camera: &CameraModel, poly: &[[f64; 3]]) -> Option<[f64; 4]> {
    let mut clipped = Vec::with_capacity(poly.len() + 4);
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        let (ina, inb) = (a[2] > NEAR, b[2] > NEAR);
        if ina {
            clipped.push(a);
        }
        if ina != inb {
            let t = (NEAR - a[2]) / (b[2] - a[2]);
            let mut p = [0.0; 3];
            for k in 0..3 {
                p[k] = a[k] + t * (b[k] - a[k]);
            }
            p[2] = p[2].max(NEAR * (1.0 + 1e-9));
            clipped.push(p);
        }
    }
    if clipped.is_empty() {
        return None;
    }
    let mut e = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
    for c in clipped {
        let [u, v] = camera.image_of(c);
        e[0] = e[0].min(u);
        e[1] = e[1].min(v);
        e[2] = e[2].max(u);
        e[3] = e[3].max(v);
    }
    Some(e)
}

/// Exact extent of a projected circle that lies fully in front of the
/// camera. The circle is `c + r(cos t, sin t)` on the plane z = height; each
/// image coordinate is a ratio of affine functions of (cos t, sin t) whose
/// stationary points solve `A cos t + B sin t + K = 0`.
fn circle_extent(camera: &CameraModel, object: &ObjectInstance) -> Option<[f64; 4]> {
    let r = object.footprint.radius;
    let c0 = camera.to_camera([object.center[0], object.center[1], object.height]);
    let o = camera.to_camera([0.0; 3]);
    let ex = camera.to_camera([1.0, 0.0, 0.0]);
    let ey = camera.to_camera([0.0, 1.0, 0.0]);
    // Camera-frame images of the world x / y unit vectors (linear part).
    let dx = [r * (ex[0] - o[0]), r * (ex[1] - o[1]), r * (ex[2] - o[2])];
    let dy = [r * (ey[0] - o[0]), r * (ey[1] - o[1]), r * (ey[2] - o[2])];

    let (b0, b1, b2) = (c0[2], dx[2], dy[2]);
    if b0 - (b1 * b1 + b2 * b2).sqrt() <= NEAR {
        return None;
    }
    let k = 2.0 * camera.tan_half();
    let extremes = |a0: f64, a1: f64, a2: f64| -> Option<(f64, f64)> {
        let big_a = a2 * b0 - a0 * b2;
        let big_b = a0 * b1 - a1 * b0;
        let big_k = a2 * b1 - a1 * b2;
        let rr = big_a.hypot(big_b);
        if rr < 1e-15 || big_k.abs() > rr {
            return None;
        }
        let phi = big_b.atan2(big_a);
        let delta = (-big_k / rr).acos();
        let f = |t: f64| {
            let (s, c) = t.sin_cos();
            (a0 + a1 * c + a2 * s) / (b0 + b1 * c + b2 * s)
        };
        let (p, q) = (f(phi + delta), f(phi - delta));
        Some((p.min(q), p.max(q)))
    };
    let (xmin, xmax) = extremes(c0[0], dx[0], dy[0])?;
    let (ymin, ymax) = extremes(c0[1], dx[1], dy[1])?;
    Some([0.5 + xmin / k, 0.5 - ymax / k, 0.5 + xmax / k, 0.5 - ymin / k])
}
