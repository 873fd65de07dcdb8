//! Layer primitives on flat buffers.
//!
//! Convolution activations use a channel-major batch layout `[C, B, H, W]`;
//! convolutions run as one im2col + GEMM per sample. Linear activations are
//! row-major `[B, F]`.

use super::real::{gemm, gemm_into, Mat, Real};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    /// Valid (unpadded) convolution geometry.
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, in_h: usize, in_w: usize) -> Result<Self> {
        if kernel == 0 || stride == 0 || in_h < kernel || in_w < kernel {
            return Err(Error::ShapeMismatch(format!(
                "{kernel}x{kernel}/{stride} convolution does not fit a {in_h}x{in_w} input"
            )));
        }
        Ok(ConvGeom {
            in_ch,
            out_ch,
            kernel,
            stride,
            in_h,
            in_w,
            out_h: (in_h - kernel) / stride + 1,
            out_w: (in_w - kernel) / stride + 1,
        })
    }

    /// Rows of the im2col matrix.
    pub fn patch(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    /// Output positions per sample.
    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Patch matrix of sample `b`: `x: [C, B, H, W]` → `col: [C·K·K, OH·OW]`.
pub fn im2col<T: Real>(x: &[T], g: &ConvGeom, batch: usize, b: usize, col: &mut Vec<T>) {
    let (k, s) = (g.kernel, g.stride);
    let n = g.positions();
    col.clear();
    col.resize(g.patch() * n, T::zero());
    let plane = g.in_h * g.in_w;
    for c in 0..g.in_ch {
        let src = &x[(c * batch + b) * plane..(c * batch + b + 1) * plane];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut col[row * n..(row + 1) * n];
                for oy in 0..g.out_h {
                    let base = (oy * s + ky) * g.in_w + kx;
                    let d = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    for (ox, v) in d.iter_mut().enumerate() {
                        *v = src[base + ox * s];
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add `dcol` into sample `b` of `dx`.
pub fn col2im<T: Real>(dcol: &[T], g: &ConvGeom, batch: usize, b: usize, dx: &mut [T]) {
    let (k, s) = (g.kernel, g.stride);
    let n = g.positions();
    let plane = g.in_h * g.in_w;
    for c in 0..g.in_ch {
        let dst = &mut dx[(c * batch + b) * plane..(c * batch + b + 1) * plane];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &dcol[row * n..(row + 1) * n];
                for oy in 0..g.out_h {
                    let base = (oy * s + ky) * g.in_w + kx;
                    for ox in 0..g.out_w {
                        dst[base + ox * s] += src[oy * g.out_w + ox];
                    }
                }
            }
        }
    }
}

/// Columns `b·P .. (b+1)·P` of a row-major `[rows, B·P]` buffer.
fn sample_block<T>(data: &[T], rows: usize, batch: usize, p: usize, b: usize) -> Mat<'_, T> {
    Mat {
        data: &data[b * p..],
        rows,
        cols: p,
        rs: batch * p,
        cs: 1,
    }
}

/// Pre-activation output `[OC, B·OH·OW]`. Patches are built one sample at a
/// time so the patch matrix stays cache-resident.
pub fn conv_forward<T: Real>(w: &[T], bias: &[T], x: &[T], g: &ConvGeom, batch: usize) -> Vec<T> {
    let p = g.positions();
    let n = batch * p;
    let mut y = vec![T::zero(); g.out_ch * n];
    for (o, row) in y.chunks_mut(n).enumerate() {
        row.iter_mut().for_each(|v| *v = bias[o]);
    }
    let mut col = Vec::new();
    for b in 0..batch {
        im2col(x, g, batch, b, &mut col);
        gemm_into(
            T::one(),
            Mat::rm(w, g.out_ch, g.patch()),
            Mat::rm(&col, g.patch(), p),
            T::one(),
            &mut y[b * p..],
            n,
        );
    }
    y
}

/// Given the layer input `x` and `dy` (`[OC, B·P]`, gradient w.r.t. the
/// pre-activation), writes the weight and bias gradients and, if requested,
/// the input gradient.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward<T: Real>(
    w: &[T],
    x: &[T],
    dy: &[T],
    g: &ConvGeom,
    batch: usize,
    dw: &mut [T],
    db: &mut [T],
    mut dx: Option<&mut [T]>,
) {
    let p = g.positions();
    let n = batch * p;
    dw.iter_mut().for_each(|v| *v = T::zero());
    for (o, row) in dy.chunks(n).enumerate() {
        db[o] = row.iter().fold(T::zero(), |a, &v| a + v);
    }
    if let Some(dx) = dx.as_deref_mut() {
        dx.iter_mut().for_each(|v| *v = T::zero());
    }
    let mut col = Vec::new();
    let mut dcol = vec![T::zero(); g.patch() * p];
    for b in 0..batch {
        im2col(x, g, batch, b, &mut col);
        let dy_b = sample_block(dy, g.out_ch, batch, p, b);
        gemm(T::one(), dy_b, Mat::rm_t(&col, g.patch(), p), T::one(), dw);
        if let Some(dx) = dx.as_deref_mut() {
            gemm(T::one(), Mat::rm_t(w, g.out_ch, g.patch()), dy_b, T::zero(), &mut dcol);
            col2im(&dcol, g, batch, b, dx);
        }
    }
}

/// `y = x · wᵀ + b` with `w: [O, F]`, `x: [B, F]`, `y: [B, O]`.
pub fn linear_forward<T: Real>(w: &[T], bias: &[T], x: &[T], batch: usize, fan_in: usize) -> Vec<T> {
    let out = bias.len();
    let mut y = Vec::with_capacity(batch * out);
    for _ in 0..batch {
        y.extend_from_slice(bias);
    }
    gemm(T::one(), Mat::rm(x, batch, fan_in), Mat::rm_t(w, out, fan_in), T::one(), &mut y);
    y
}

#[allow(clippy::too_many_arguments)]
pub fn linear_backward<T: Real>(
    w: &[T],
    x: &[T],
    dy: &[T],
    batch: usize,
    fan_in: usize,
    dw: &mut [T],
    db: &mut [T],
    dx: Option<&mut [T]>,
) {
    let out = db.len();
    gemm(T::one(), Mat::rm_t(dy, batch, out), Mat::rm(x, batch, fan_in), T::zero(), dw);
    db.iter_mut().for_each(|v| *v = T::zero());
    for row in dy.chunks(out) {
        for (d, &v) in db.iter_mut().zip(row) {
            *d += v;
        }
    }
    if let Some(dx) = dx {
        gemm(T::one(), Mat::rm(dy, batch, out), Mat::rm(w, out, fan_in), T::zero(), dx);
    }
}

pub fn relu_inplace<T: Real>(y: &mut [T]) {
    for v in y {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Zero the gradient where the (post-activation) output is not positive.
pub fn relu_backward<T: Real>(y: &[T], dy: &mut [T]) {
    for (d, &v) in dy.iter_mut().zip(y) {
        if v <= T::zero() {
            *d = T::zero();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct convolution on a single-sample `[C, H, W]` input.
    fn naive_conv(w: &[f64], b: &[f64], x: &[f64], g: &ConvGeom) -> Vec<f64> {
        let mut y = vec![0.0; g.out_ch * g.positions()];
        for o in 0..g.out_ch {
            for oy in 0..g.out_h {
                for ox in 0..g.out_w {
                    let mut acc = b[o];
                    for c in 0..g.in_ch {
                        for ky in 0..g.kernel {
                            for kx in 0..g.kernel {
                                let xi = (c * g.in_h + oy * g.stride + ky) * g.in_w + ox * g.stride + kx;
                                let wi = ((o * g.in_ch + c) * g.kernel + ky) * g.kernel + kx;
                                acc += w[wi] * x[xi];
                            }
                        }
                    }
                    y[(o * g.out_h + oy) * g.out_w + ox] = acc;
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_direct_loop() {
        let g = ConvGeom::new(2, 3, 3, 2, 7, 7).unwrap();
        let w: Vec<f64> = (0..g.out_ch * g.patch()).map(|i| ((i * 7) % 11) as f64 * 0.1 - 0.5).collect();
        let b = vec![0.1, -0.2, 0.3];
        let x: Vec<f64> = (0..2 * 49).map(|i| ((i * 5) % 13) as f64 * 0.1).collect();
        let y = conv_forward(&w, &b, &x, &g, 1);
        let want = naive_conv(&w, &b, &x, &g);
        for (a, e) in y.iter().zip(&want) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)> for arbitrary x, c.
        let g = ConvGeom::new(2, 1, 3, 2, 6, 6).unwrap();
        let batch = 2;
        let x: Vec<f64> = (0..2 * batch * 36).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut col = Vec::new();
        for b in 0..batch {
            im2col(&x, &g, batch, b, &mut col);
            let c: Vec<f64> = (0..col.len()).map(|i| (i as f64 * 0.11 + b as f64).cos()).collect();
            let mut back = vec![0.0; x.len()];
            col2im(&c, &g, batch, b, &mut back);
            let lhs: f64 = col.iter().zip(&c).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10);
        }
    }

    #[test]
    fn geometry() {
        let g = ConvGeom::new(4, 16, 5, 2, 64, 64).unwrap();
        assert_eq!((g.out_h, g.out_w), (30, 30));
        assert!(ConvGeom::new(4, 16, 5, 2, 4, 4).is_err());
    }
}
