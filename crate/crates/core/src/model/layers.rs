//! Convolution, batch normalization, ReLU and fully-connected layers with
//! explicit backward passes. Activations are stored frame-major as
//! `[n, channels, height, width]` in flat slices.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub height: usize,
    pub width: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn in_len(&self) -> usize {
        self.cin * self.height * self.width
    }

    pub fn out_len(&self) -> usize {
        self.cout * self.out_height() * self.out_width()
    }

    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.kernel * self.kernel
    }

    /// Output index range along one axis whose input tap `o*stride + k - pad`
    /// lies inside `[0, size)`.
    #[inline]
    fn valid(&self, k: usize, size: usize, out: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = if k >= self.pad { 0 } else { (self.pad - k).div_ceil(s) };
        // largest o with o*s + k - pad <= size - 1
        let limit = size + self.pad;
        let hi = if limit > k { ((limit - 1 - k) / s + 1).min(out) } else { 0 };
        (lo.min(hi), hi)
    }
}

/// `c = beta * c + a * b` with `a` m x k and `b` k x n. A transposed operand
/// is stored row-major in its transposed shape (`a_t`: k x m, `b_t`: n x k).
#[allow(clippy::too_many_arguments)]
pub fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, c: &mut [f64], beta: f64) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm operand too short");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the length assertion above covers every index the strides reach.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl ConvGeometry {
    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }

    fn col_rows(&self) -> usize {
        self.cin * self.kernel * self.kernel
    }
}

/// Unfolds one frame into `[cin*k*k, oh*ow]` patch columns (zero padded).
fn im2col(g: &ConvGeometry, x: &[f64], col: &mut [f64]) {
    let (oh, ow) = (g.out_height(), g.out_width());
    let (h, w, k, s, p) = (g.height, g.width, g.kernel, g.stride, g.pad);
    let plane = oh * ow;
    for ci in 0..g.cin {
        let src = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            let (oy0, oy1) = g.valid(ky, h, oh);
            for kx in 0..k {
                let (ox0, ox1) = g.valid(kx, w, ow);
                let row = &mut col[((ci * k + ky) * k + kx) * plane..((ci * k + ky) * k + kx + 1) * plane];
                row.iter_mut().for_each(|v| *v = 0.0);
                for oy in oy0..oy1 {
                    let iy = oy * s + ky - p;
                    let srow = &src[iy * w..(iy + 1) * w];
                    let drow = &mut row[oy * ow..(oy + 1) * ow];
                    for ox in ox0..ox1 {
                        drow[ox] = srow[ox * s + kx - p];
                    }
                }
            }
        }
    }
}

/// Adds patch-column gradients back onto the frame gradient.
fn col2im(g: &ConvGeometry, col: &[f64], dx: &mut [f64]) {
    let (oh, ow) = (g.out_height(), g.out_width());
    let (h, w, k, s, p) = (g.height, g.width, g.kernel, g.stride, g.pad);
    let plane = oh * ow;
    for ci in 0..g.cin {
        let dst = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            let (oy0, oy1) = g.valid(ky, h, oh);
            for kx in 0..k {
                let (ox0, ox1) = g.valid(kx, w, ow);
                let row = &col[((ci * k + ky) * k + kx) * plane..((ci * k + ky) * k + kx + 1) * plane];
                for oy in oy0..oy1 {
                    let iy = oy * s + ky - p;
                    let srow = &row[oy * ow..(oy + 1) * ow];
                    let drow = &mut dst[iy * w..(iy + 1) * w];
                    for ox in ox0..ox1 {
                        drow[ox * s + kx - p] += srow[ox];
                    }
                }
            }
        }
    }
}

fn conv_frame_forward(g: &ConvGeometry, input: &[f64], weight: &[f64], bias: &[f64], out: &mut [f64], col: &mut Vec<f64>) {
    let plane = g.out_height() * g.out_width();
    for (co, chunk) in out.chunks_mut(plane).enumerate() {
        chunk.iter_mut().for_each(|v| *v = bias[co]);
    }
    let cols: &[f64] = if g.is_pointwise() {
        input
    } else {
        col.resize(g.col_rows() * plane, 0.0);
        im2col(g, input, col);
        col
    };
    gemm(g.cout, g.col_rows(), plane, weight, false, cols, false, out, 1.0);
}

/// Forward convolution over `n` frames.
pub fn conv2d_forward(g: &ConvGeometry, input: &[f64], weight: &[f64], bias: &[f64], n: usize) -> Vec<f64> {
    debug_assert_eq!(input.len(), n * g.in_len());
    let mut out = vec![0.0; n * g.out_len()];
    out.par_chunks_mut(g.out_len())
        .zip(input.par_chunks(g.in_len()))
        .for_each_init(Vec::new, |col, (o, i)| conv_frame_forward(g, i, weight, bias, o, col));
    out
}

/// Accumulates weight and bias gradients and, when `grad_in` is given, the
/// input gradient (overwritten).
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward(
    g: &ConvGeometry,
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    n: usize,
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    mut grad_in: Option<&mut [f64]>,
) {
    let plane = g.out_height() * g.out_width();
    let rows = g.col_rows();
    let mut col = vec![0.0; if g.is_pointwise() { 0 } else { rows * plane }];
    let mut dcol = vec![0.0; rows * plane];
    for frame in 0..n {
        let x = &input[frame * g.in_len()..(frame + 1) * g.in_len()];
        let go = &grad_out[frame * g.out_len()..(frame + 1) * g.out_len()];
        for (co, gplane) in go.chunks(plane).enumerate() {
            grad_b[co] += gplane.iter().sum::<f64>();
        }
        let cols: &[f64] = if g.is_pointwise() {
            x
        } else {
            im2col(g, x, &mut col);
            &col
        };
        gemm(g.cout, plane, rows, go, false, cols, true, grad_w, 1.0);
        if let Some(gi) = grad_in.as_deref_mut() {
            let dx = &mut gi[frame * g.in_len()..(frame + 1) * g.in_len()];
            if g.is_pointwise() {
                gemm(rows, g.cout, plane, weight, true, go, false, dx, 0.0);
            } else {
                gemm(rows, g.cout, plane, weight, true, go, false, &mut dcol, 0.0);
                dx.iter_mut().for_each(|v| *v = 0.0);
                col2im(g, &dcol, dx);
            }
        }
    }
}

/// Per-channel statistics of one training batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance, as used for the running estimate.
    pub var_unbiased: Vec<f64>,
}

pub struct BatchNormCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub train: bool,
}

/// Batch normalization over `[n, channels, plane]`. In training mode the
/// batch statistics are used and returned; otherwise the running ones.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm_forward(
    x: &[f64],
    n: usize,
    channels: usize,
    plane: usize,
    gamma: &[f64],
    beta: &[f64],
    running: Option<(&[f64], &[f64])>,
) -> (Vec<f64>, BatchNormCache, Option<BatchStats>) {
    let m = (n * plane) as f64;
    let train = running.is_none();
    let (mean, var) = match running {
        None => {
            let mut mean = vec![0.0; channels];
            for (i, s) in x.chunks_exact(plane).enumerate() {
                mean[i % channels] += s.iter().sum::<f64>();
            }
            mean.iter_mut().for_each(|v| *v /= m);
            let mut var = vec![0.0; channels];
            for (i, s) in x.chunks_exact(plane).enumerate() {
                let mu = mean[i % channels];
                var[i % channels] += s.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>();
            }
            var.iter_mut().for_each(|v| *v /= m);
            (mean, var)
        }
        Some((rm, rv)) => (rm.to_vec(), rv.to_vec()),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut xhat = vec![0.0; x.len()];
    let mut y = vec![0.0; x.len()];
    for (i, ((s, xh), out)) in
        x.chunks_exact(plane).zip(xhat.chunks_exact_mut(plane)).zip(y.chunks_exact_mut(plane)).enumerate()
    {
        let c = i % channels;
        let (mu, is, g, b) = (mean[c], inv_std[c], gamma[c], beta[c]);
        for ((v, h), o) in s.iter().zip(xh.iter_mut()).zip(out.iter_mut()) {
            *h = (v - mu) * is;
            *o = g * *h + b;
        }
    }
    let stats = train.then(|| BatchStats {
        var_unbiased: var.iter().map(|v| if m > 1.0 { v * m / (m - 1.0) } else { *v }).collect(),
        mean,
    });
    (y, BatchNormCache { xhat, inv_std, train }, stats)
}

/// Accumulates `grad_gamma`/`grad_beta` and returns the input gradient.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm_backward(
    dy: &[f64],
    cache: &BatchNormCache,
    n: usize,
    channels: usize,
    plane: usize,
    gamma: &[f64],
    grad_gamma: &mut [f64],
    grad_beta: &mut [f64],
) -> Vec<f64> {
    let m = (n * plane) as f64;
    let mut sum_dy = vec![0.0; channels];
    let mut sum_dy_xhat = vec![0.0; channels];
    for (i, (d, xh)) in dy.chunks_exact(plane).zip(cache.xhat.chunks_exact(plane)).enumerate() {
        sum_dy[i % channels] += d.iter().sum::<f64>();
        sum_dy_xhat[i % channels] += d.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>();
    }
    for c in 0..channels {
        grad_gamma[c] += sum_dy_xhat[c];
        grad_beta[c] += sum_dy[c];
    }
    let mut dx = vec![0.0; dy.len()];
    for (i, ((d, xh), out)) in
        dy.chunks_exact(plane).zip(cache.xhat.chunks_exact(plane)).zip(dx.chunks_exact_mut(plane)).enumerate()
    {
        let c = i % channels;
        let k = gamma[c] * cache.inv_std[c];
        if cache.train {
            let (a, b) = (sum_dy[c] / m, sum_dy_xhat[c] / m);
            for ((o, dv), xv) in out.iter_mut().zip(d).zip(xh) {
                *o = k * (dv - a - xv * b);
            }
        } else {
            for (o, dv) in out.iter_mut().zip(d) {
                *o = k * dv;
            }
        }
    }
    dx
}

pub fn update_running(running_mean: &mut [f64], running_var: &mut [f64], stats: &BatchStats) {
    for c in 0..running_mean.len() {
        running_mean[c] = (1.0 - BN_MOMENTUM) * running_mean[c] + BN_MOMENTUM * stats.mean[c];
        running_var[c] = (1.0 - BN_MOMENTUM) * running_var[c] + BN_MOMENTUM * stats.var_unbiased[c];
    }
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

/// Input gradient of ReLU given its output.
pub fn relu_backward(dy: &[f64], y: &[f64]) -> Vec<f64> {
    dy.iter().zip(y).map(|(&d, &v)| if v > 0.0 { d } else { 0.0 }).collect()
}

/// `y = W x + b` for a single vector; `W` is `[outputs, inputs]`.
pub fn linear_forward(x: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let inputs = x.len();
    bias.iter()
        .enumerate()
        .map(|(o, b)| b + dot(&weight[o * inputs..(o + 1) * inputs], x))
        .collect()
}

/// Accumulates parameter gradients and returns the input gradient.
pub fn linear_backward(x: &[f64], weight: &[f64], dy: &[f64], grad_w: &mut [f64], grad_b: &mut [f64]) -> Vec<f64> {
    let inputs = x.len();
    let mut dx = vec![0.0; inputs];
    for (o, &d) in dy.iter().enumerate() {
        grad_b[o] += d;
        let wrow = &weight[o * inputs..(o + 1) * inputs];
        let grow = &mut grad_w[o * inputs..(o + 1) * inputs];
        for i in 0..inputs {
            grow[i] += d * x[i];
            dx[i] += d * wrow[i];
        }
    }
    dx
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
