//! Actor-critic network: conv encoder over the stacked image channels,
//! flatten, concatenation with proprioception and the flat goal vector, a
//! ReLU trunk, a Gaussian mean head with a global learned log-std, and a
//! value head.

use rand::Rng;

use super::init::orthogonal;
use super::layers::{
    conv_backward, conv_forward, linear_backward, linear_forward, relu_backward, relu_inplace, ConvGeom,
};
use super::real::Real;
use super::tensor::Tensor;
use crate::{Error, Result};

pub const ACTION_DIM: usize = 4;
pub const PROPRIO_DIM: usize = 7;
pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetSpec {
    pub in_channels: usize,
    pub resolution: usize,
    pub flat_goal: usize,
    pub convs: Vec<ConvSpec>,
    pub width: usize,
    pub trunk_layers: usize,
}

impl NetSpec {
    /// conv(C→16, 5×5, /2) → conv(16→32, 5×5, /2) → conv(32→32, 3×3, /2),
    /// then two trunk layers of `width`.
    pub fn standard(in_channels: usize, flat_goal: usize, resolution: usize, width: usize) -> Self {
        NetSpec {
            in_channels,
            resolution,
            flat_goal,
            convs: vec![
                ConvSpec { out_channels: 16, kernel: 5, stride: 2 },
                ConvSpec { out_channels: 32, kernel: 5, stride: 2 },
                ConvSpec { out_channels: 32, kernel: 3, stride: 2 },
            ],
            width,
            trunk_layers: 2,
        }
    }

    pub fn conv_geoms(&self) -> Result<Vec<ConvGeom>> {
        let mut geoms = Vec::with_capacity(self.convs.len());
        let (mut c, mut h) = (self.in_channels, self.resolution);
        for cs in &self.convs {
            let g = ConvGeom::new(c, cs.out_channels, cs.kernel, cs.stride, h, h)?;
            c = g.out_ch;
            h = g.out_h;
            geoms.push(g);
        }
        Ok(geoms)
    }

    pub fn conv_features(&self) -> usize {
        match self.conv_geoms().ok().and_then(|g| g.last().copied()) {
            Some(g) => g.out_ch * g.positions(),
            None => self.in_channels * self.resolution * self.resolution,
        }
    }

    /// Width of the trunk input.
    pub fn flat_features(&self) -> usize {
        self.conv_features() + PROPRIO_DIM + self.flat_goal
    }

    /// Tensor names and shapes in declaration (checkpoint) order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut c = self.in_channels;
        for (i, cs) in self.convs.iter().enumerate() {
            out.push((format!("conv{i}.weight"), vec![cs.out_channels, c, cs.kernel, cs.kernel]));
            out.push((format!("conv{i}.bias"), vec![cs.out_channels]));
            c = cs.out_channels;
        }
        let mut fan_in = self.flat_features();
        for i in 0..self.trunk_layers {
            out.push((format!("trunk{i}.weight"), vec![self.width, fan_in]));
            out.push((format!("trunk{i}.bias"), vec![self.width]));
            fan_in = self.width;
        }
        out.push(("mean.weight".into(), vec![ACTION_DIM, fan_in]));
        out.push(("mean.bias".into(), vec![ACTION_DIM]));
        out.push(("log_std".into(), vec![ACTION_DIM]));
        out.push(("value.weight".into(), vec![1, fan_in]));
        out.push(("value.bias".into(), vec![1]));
        out
    }

    fn trunk_fan_in(&self) -> usize {
        if self.trunk_layers == 0 {
            self.flat_features()
        } else {
            self.width
        }
    }
}

/// All trainable tensors, in [`NetSpec::param_shapes`] order. Gradients use
/// the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams<T: Real = f32> {
    pub spec: NetSpec,
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Real> PolicyParams<T> {
    pub fn zeros(spec: &NetSpec) -> Self {
        PolicyParams {
            spec: spec.clone(),
            tensors: spec.param_shapes().iter().map(|(_, s)| Tensor::zeros(s)).collect(),
        }
    }

    /// Orthogonal init: gain √2 for conv and trunk layers, 0.01 for the mean
    /// head, 1 for the value head; zero biases and log-std.
    pub fn init<R: Rng>(spec: &NetSpec, rng: &mut R) -> Self {
        let mut p = Self::zeros(spec);
        let shapes = spec.param_shapes();
        let hidden = 2f64.sqrt();
        for (i, (name, shape)) in shapes.iter().enumerate() {
            if !name.ends_with(".weight") {
                continue;
            }
            let gain = match name.as_str() {
                "mean.weight" => 0.01,
                "value.weight" => 1.0,
                _ => hidden,
            };
            let rows = shape[0];
            let cols: usize = shape[1..].iter().product();
            let w = orthogonal(rows, cols, gain, rng);
            p.tensors[i].data = w.into_iter().map(T::from_f64).collect();
        }
        p
    }

    pub fn cast<U: Real>(&self) -> PolicyParams<U> {
        PolicyParams {
            spec: self.spec.clone(),
            tensors: self.tensors.iter().map(|t| t.cast()).collect(),
        }
    }

    pub fn n_params(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    fn conv_idx(&self, i: usize) -> usize {
        2 * i
    }

    fn trunk_idx(&self, i: usize) -> usize {
        2 * self.spec.convs.len() + 2 * i
    }

    pub fn mean_idx(&self) -> usize {
        self.trunk_idx(self.spec.trunk_layers)
    }

    pub fn log_std_idx(&self) -> usize {
        self.mean_idx() + 2
    }

    pub fn value_idx(&self) -> usize {
        self.mean_idx() + 3
    }

    /// Log-std as used by the policy (clamped to its valid range).
    pub fn log_std(&self) -> Vec<T> {
        let (lo, hi) = (T::from_f64(LOG_STD_MIN), T::from_f64(LOG_STD_MAX));
        self.tensors[self.log_std_idx()].data.iter().map(|&v| v.max(lo).min(hi)).collect()
    }

    pub fn clamp_log_std(&mut self) {
        let clamped = self.log_std();
        let i = self.log_std_idx();
        self.tensors[i].data = clamped;
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    pub fn sum_sq(&self) -> f64 {
        self.tensors.iter().map(Tensor::sum_sq).sum()
    }

    pub fn scale(&mut self, k: T) {
        for t in &mut self.tensors {
            t.data.iter_mut().for_each(|v| *v *= k);
        }
    }
}

/// Network input for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct NetInput {
    /// `C × H × W`, channel-major.
    pub image: Vec<f32>,
    pub channels: usize,
    pub resolution: usize,
    pub proprio: [f32; PROPRIO_DIM],
    /// One-hot goal for the one-hot variant, empty otherwise.
    pub flat_goal: Vec<f32>,
}

impl NetInput {
    fn check(&self, spec: &NetSpec) -> Result<()> {
        let expect = spec.in_channels * spec.resolution * spec.resolution;
        if self.channels != spec.in_channels || self.resolution != spec.resolution || self.image.len() != expect {
            return Err(Error::ShapeMismatch(format!(
                "input image {}x{}x{} ({} values), network expects {}x{}x{}",
                self.channels,
                self.resolution,
                self.resolution,
                self.image.len(),
                spec.in_channels,
                spec.resolution,
                spec.resolution
            )));
        }
        if self.flat_goal.len() != spec.flat_goal {
            return Err(Error::ShapeMismatch(format!(
                "flat goal has {} values, network expects {}",
                self.flat_goal.len(),
                spec.flat_goal
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutput<T> {
    /// `[B, ACTION_DIM]`.
    pub mean: Vec<T>,
    pub log_std: Vec<T>,
    pub value: Vec<T>,
}

/// Activations kept for the backward pass.
#[derive(Debug)]
pub struct ForwardCache<T> {
    batch: usize,
    geoms: Vec<ConvGeom>,
    /// Network image input followed by each conv layer's output.
    conv_acts: Vec<Vec<T>>,
    trunk_in: Vec<Vec<T>>,
    trunk_out: Vec<T>,
}

/// Gradients of the scalar loss with respect to the network outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputGrads<T> {
    pub mean: Vec<T>,
    pub log_std: Vec<T>,
    pub value: Vec<T>,
}

impl<T: Real> OutputGrads<T> {
    pub fn zeros(batch: usize) -> Self {
        OutputGrads {
            mean: vec![T::zero(); batch * ACTION_DIM],
            log_std: vec![T::zero(); ACTION_DIM],
            value: vec![T::zero(); batch],
        }
    }
}

fn debug_finite<T: Real>(what: &str, v: &[T]) {
    debug_assert!(v.iter().all(|x| x.is_finite()), "non-finite values after {what}");
}

pub fn forward<T: Real>(params: &PolicyParams<T>, inputs: &[&NetInput]) -> Result<(BatchOutput<T>, ForwardCache<T>)> {
    let spec = &params.spec;
    let batch = inputs.len();
    for inp in inputs {
        inp.check(spec)?;
    }
    let geoms = spec.conv_geoms()?;

    // [C, B, H, W]
    let plane = spec.resolution * spec.resolution;
    let mut x = vec![T::zero(); spec.in_channels * batch * plane];
    for (b, inp) in inputs.iter().enumerate() {
        for c in 0..spec.in_channels {
            let dst = &mut x[(c * batch + b) * plane..(c * batch + b + 1) * plane];
            for (d, &s) in dst.iter_mut().zip(&inp.image[c * plane..(c + 1) * plane]) {
                *d = T::from_f64(f64::from(s));
            }
        }
    }

    let mut conv_acts = Vec::with_capacity(geoms.len() + 1);
    conv_acts.push(x);
    for (i, g) in geoms.iter().enumerate() {
        let w = &params.tensors[params.conv_idx(i)].data;
        let bias = &params.tensors[params.conv_idx(i) + 1].data;
        let mut y = conv_forward(w, bias, conv_acts.last().expect("input present"), g, batch);
        relu_inplace(&mut y);
        debug_finite("conv", &y);
        conv_acts.push(y);
    }

    // Flatten per sample, then append proprio and flat goal.
    let feat = spec.flat_features();
    let conv_feat = spec.conv_features();
    let mut flat = vec![T::zero(); batch * feat];
    let last = conv_acts.last().expect("input present");
    let (oc, pos) = match geoms.last() {
        Some(g) => (g.out_ch, g.positions()),
        None => (spec.in_channels, plane),
    };
    for b in 0..batch {
        let row = &mut flat[b * feat..(b + 1) * feat];
        for c in 0..oc {
            row[c * pos..(c + 1) * pos].copy_from_slice(&last[(c * batch + b) * pos..(c * batch + b + 1) * pos]);
        }
        for (k, &v) in inputs[b].proprio.iter().chain(&inputs[b].flat_goal).enumerate() {
            row[conv_feat + k] = T::from_f64(f64::from(v));
        }
    }

    let mut trunk_in = Vec::with_capacity(spec.trunk_layers);
    let mut h = flat;
    let mut fan_in = feat;
    for i in 0..spec.trunk_layers {
        let w = &params.tensors[params.trunk_idx(i)].data;
        let bias = &params.tensors[params.trunk_idx(i) + 1].data;
        let mut y = linear_forward(w, bias, &h, batch, fan_in);
        relu_inplace(&mut y);
        debug_finite("trunk", &y);
        trunk_in.push(h);
        h = y;
        fan_in = spec.width;
    }

    let mi = params.mean_idx();
    let mean = linear_forward(&params.tensors[mi].data, &params.tensors[mi + 1].data, &h, batch, fan_in);
    let vi = params.value_idx();
    let value = linear_forward(&params.tensors[vi].data, &params.tensors[vi + 1].data, &h, batch, fan_in);
    debug_finite("heads", &mean);
    debug_finite("heads", &value);

    Ok((
        BatchOutput {
            mean,
            log_std: params.log_std(),
            value,
        },
        ForwardCache {
            batch,
            geoms,
            conv_acts,
            trunk_in,
            trunk_out: h,
        },
    ))
}

/// Single-sample convenience wrapper: `(mean, log_std, value)`.
pub fn forward_one(params: &PolicyParams<f32>, input: &NetInput) -> Result<([f32; ACTION_DIM], [f32; ACTION_DIM], f32)> {
    let (out, _) = forward(params, &[input])?;
    let mut mean = [0.0; ACTION_DIM];
    mean.copy_from_slice(&out.mean);
    let mut log_std = [0.0; ACTION_DIM];
    log_std.copy_from_slice(&out.log_std);
    Ok((mean, log_std, out.value[0]))
}

/// Exact gradients of the loss with respect to every parameter, given the
/// loss gradients with respect to the outputs of the matching [`forward`].
pub fn backward<T: Real>(params: &PolicyParams<T>, cache: &ForwardCache<T>, grads: &OutputGrads<T>) -> PolicyParams<T> {
    let spec = &params.spec;
    let batch = cache.batch;
    let mut out = PolicyParams::<T>::zeros(spec);
    let fan_in = spec.trunk_fan_in();

    // Heads.
    let mut dh = vec![T::zero(); batch * fan_in];
    let mut dh_v = vec![T::zero(); batch * fan_in];
    let mi = params.mean_idx();
    let vi = params.value_idx();
    {
        let (head, rest) = out.tensors.split_at_mut(mi + 1);
        linear_backward(
            &params.tensors[mi].data,
            &cache.trunk_out,
            &grads.mean,
            batch,
            fan_in,
            &mut head[mi].data,
            &mut rest[0].data,
            Some(&mut dh),
        );
    }
    {
        let (head, rest) = out.tensors.split_at_mut(vi + 1);
        linear_backward(
            &params.tensors[vi].data,
            &cache.trunk_out,
            &grads.value,
            batch,
            fan_in,
            &mut head[vi].data,
            &mut rest[0].data,
            Some(&mut dh_v),
        );
    }
    for (a, b) in dh.iter_mut().zip(&dh_v) {
        *a += *b;
    }

    // Log-std passes through its clamp only inside the valid range.
    let li = params.log_std_idx();
    let (lo, hi) = (T::from_f64(LOG_STD_MIN), T::from_f64(LOG_STD_MAX));
    for (k, &raw) in params.tensors[li].data.iter().enumerate() {
        out.tensors[li].data[k] = if raw >= lo && raw <= hi { grads.log_std[k] } else { T::zero() };
    }

    // Trunk, last to first.
    let mut dy = dh;
    let mut post = &cache.trunk_out;
    for i in (0..spec.trunk_layers).rev() {
        relu_backward(post, &mut dy);
        let x = &cache.trunk_in[i];
        let layer_in = if i == 0 { spec.flat_features() } else { spec.width };
        let mut dx = vec![T::zero(); batch * layer_in];
        let wi = params.trunk_idx(i);
        let (head, rest) = out.tensors.split_at_mut(wi + 1);
        linear_backward(
            &params.tensors[wi].data,
            x,
            &dy,
            batch,
            layer_in,
            &mut head[wi].data,
            &mut rest[0].data,
            Some(&mut dx),
        );
        dy = dx;
        post = x;
    }

    if cache.geoms.is_empty() {
        return out;
    }

    // Un-flatten the conv part of the trunk input gradient to [C, B, P].
    let feat = spec.flat_features();
    let g_last = *cache.geoms.last().expect("non-empty");
    let pos = g_last.positions();
    let mut dconv = vec![T::zero(); g_last.out_ch * batch * pos];
    for b in 0..batch {
        for c in 0..g_last.out_ch {
            dconv[(c * batch + b) * pos..(c * batch + b + 1) * pos]
                .copy_from_slice(&dy[b * feat + c * pos..b * feat + (c + 1) * pos]);
        }
    }

    for i in (0..cache.geoms.len()).rev() {
        let g = &cache.geoms[i];
        relu_backward(&cache.conv_acts[i + 1], &mut dconv);
        let wi = params.conv_idx(i);
        let mut dx = (i > 0).then(|| vec![T::zero(); g.in_ch * batch * g.in_h * g.in_w]);
        let (head, rest) = out.tensors.split_at_mut(wi + 1);
        conv_backward(
            &params.tensors[wi].data,
            &cache.conv_acts[i],
            &dconv,
            g,
            batch,
            &mut head[wi].data,
            &mut rest[0].data,
            dx.as_deref_mut(),
        );
        match dx {
            Some(d) => dconv = d,
            None => break,
        }
    }
    out
}
