//! Binary parameter container.
//!
//! Layout (all integers little-endian `u32` unless noted):
//!
//! ```text
//! "MGRL" | version | variant tag (len + utf8)
//! | in_channels resolution flat_goal width trunk_layers n_convs
//! | n_convs × (out_channels kernel stride)
//! | iteration (u64) | timesteps (u64) | optimizer step (u64, 0 = no optimizer state)
//! | n_tensors | n_tensors × (ndim dims…)
//! | tensor data as f32, in declaration order; then Adam first and second
//!   moments in the same order when the optimizer step is non-zero
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::network::{ConvSpec, NetSpec, PolicyParams};
use super::tensor::Tensor;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MGRL";
pub const FORMAT_VERSION: u32 = 1;

/// Adam moments saved alongside the parameters for resuming.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<Tensor<f32>>,
    pub v: Vec<Tensor<f32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub variant: String,
    pub params: PolicyParams<f32>,
    pub iteration: u64,
    pub timesteps: u64,
    pub optimizer: Option<OptimizerState>,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_usize(out: &mut Vec<u8>, v: usize) {
    put_u32(out, u32::try_from(v).expect("dimension fits in u32"));
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_data(out: &mut Vec<u8>, tensors: &[Tensor<f32>]) {
    for t in tensors {
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

impl Checkpoint {
    pub fn new(variant: &str, params: PolicyParams<f32>) -> Self {
        Checkpoint {
            variant: variant.to_string(),
            params,
            iteration: 0,
            timesteps: 0,
            optimizer: None,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let spec = &self.params.spec;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        put_usize(&mut out, self.variant.len());
        out.extend_from_slice(self.variant.as_bytes());
        for v in [spec.in_channels, spec.resolution, spec.flat_goal, spec.width, spec.trunk_layers, spec.convs.len()] {
            put_usize(&mut out, v);
        }
        for c in &spec.convs {
            for v in [c.out_channels, c.kernel, c.stride] {
                put_usize(&mut out, v);
            }
        }
        put_u64(&mut out, self.iteration);
        put_u64(&mut out, self.timesteps);
        put_u64(&mut out, self.optimizer.as_ref().map_or(0, |o| o.step.max(1)));
        put_usize(&mut out, self.params.tensors.len());
        for t in &self.params.tensors {
            put_usize(&mut out, t.shape.len());
            for &d in &t.shape {
                put_usize(&mut out, d);
            }
        }
        put_data(&mut out, &self.params.tensors);
        if let Some(o) = &self.optimizer {
            put_data(&mut out, &o.m);
            put_data(&mut out, &o.v);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Checkpoint {
            path: path.to_path_buf(),
            reason,
        };
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4).map_err(&bad)? != MAGIC {
            return Err(bad("missing MGRL magic".into()));
        }
        let version = r.u32().map_err(&bad)?;
        if version != FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {version}")));
        }
        let len = r.u32().map_err(&bad)? as usize;
        let variant = String::from_utf8(r.take(len).map_err(&bad)?.to_vec())
            .map_err(|_| bad("variant tag is not UTF-8".into()))?;
        let mut head = [0usize; 6];
        for h in &mut head {
            *h = r.u32().map_err(&bad)? as usize;
        }
        let [in_channels, resolution, flat_goal, width, trunk_layers, n_convs] = head;
        if n_convs > 64 || trunk_layers > 64 {
            return Err(bad("implausible layer count".into()));
        }
        let mut convs = Vec::with_capacity(n_convs);
        for _ in 0..n_convs {
            convs.push(ConvSpec {
                out_channels: r.u32().map_err(&bad)? as usize,
                kernel: r.u32().map_err(&bad)? as usize,
                stride: r.u32().map_err(&bad)? as usize,
            });
        }
        let spec = NetSpec {
            in_channels,
            resolution,
            flat_goal,
            convs,
            width,
            trunk_layers,
        };
        spec.conv_geoms().map_err(|e| bad(e.to_string()))?;
        let iteration = r.u64().map_err(&bad)?;
        let timesteps = r.u64().map_err(&bad)?;
        let opt_step = r.u64().map_err(&bad)?;

        let expected = spec.param_shapes();
        let n = r.u32().map_err(&bad)? as usize;
        if n != expected.len() {
            return Err(bad(format!("{n} tensors stored, architecture has {}", expected.len())));
        }
        for (name, shape) in &expected {
            let ndim = r.u32().map_err(&bad)? as usize;
            if ndim > 8 {
                return Err(bad(format!("tensor {name}: implausible rank {ndim}")));
            }
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(r.u32().map_err(&bad)? as usize);
            }
            if &dims != shape {
                return Err(bad(format!("tensor {name}: stored shape {dims:?}, expected {shape:?}")));
            }
        }
        let read_group = |r: &mut Reader<'_>| -> Result<Vec<Tensor<f32>>> {
            expected
                .iter()
                .map(|(_, shape)| {
                    let len: usize = shape.iter().product();
                    let raw = r.take(len * 4).map_err(&bad)?;
                    let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
                    Ok(Tensor::from_vec(shape, data))
                })
                .collect()
        };
        let tensors = read_group(&mut r)?;
        let optimizer = if opt_step > 0 {
            let m = read_group(&mut r)?;
            let v = read_group(&mut r)?;
            Some(OptimizerState { step: opt_step, m, v })
        } else {
            None
        };
        if r.pos != bytes.len() {
            return Err(bad(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let params = PolicyParams { spec, tensors };
        if !params.is_finite() {
            return Err(bad("non-finite parameter values".into()));
        }
        Ok(Checkpoint {
            variant,
            params,
            iteration,
            timesteps,
            optimizer,
        })
    }

    /// Writes atomically via a sibling temporary file.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
            }
        }
        let tmp = path.with_extension("bin.tmp");
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(format!("creating {}", tmp.display()), e))?;
        f.write_all(&self.to_bytes())
            .and_then(|_| f.sync_all())
            .map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(format!("renaming to {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(format!("reading checkpoint {}", path.display()), e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Loads and checks the variant tag.
    pub fn load_expecting(path: &Path, variant: &str) -> Result<Self> {
        let ck = Self::load(path)?;
        if ck.variant != variant {
            return Err(Error::CheckpointVariantMismatch {
                expected: variant.to_string(),
                found: ck.variant,
            });
        }
        Ok(ck)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(e) => {
                let s = &self.bytes[self.pos..e];
                self.pos = e;
                Ok(s)
            }
            None => Err(format!("truncated at byte {}", self.pos)),
        }
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }
}
