//! SAGAN-style self-attention over the spatial positions of one feature map.
//!
//! For a frame `x` of shape `[C, N]` (N = s*s positions):
//! `f = Wf x`, `g = Wg x`, `h = Wh x`, `beta[j][i] = softmax_i(f_i . g_j)`,
//! `o_j = sum_i beta[j][i] h_i`, `y = gamma * o + x`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfAttentionParams {
    pub channels: usize,
    pub key_channels: usize,
    /// `[key_channels, channels]`
    pub wf: Vec<f64>,
    /// `[key_channels, channels]`
    pub wg: Vec<f64>,
    /// `[channels, channels]`
    pub wh: Vec<f64>,
    /// Single mixing weight, stored as a one-element vector.
    pub gamma: Vec<f64>,
}

impl SelfAttentionParams {
    pub fn zeros(channels: usize, key_channels: usize) -> Self {
        SelfAttentionParams {
            channels,
            key_channels,
            wf: vec![0.0; key_channels * channels],
            wg: vec![0.0; key_channels * channels],
            wh: vec![0.0; channels * channels],
            gamma: vec![0.0],
        }
    }

    pub fn check(&self) -> Result<()> {
        let (c, k) = (self.channels, self.key_channels);
        if c == 0 || k == 0 {
            return Err(Error::precondition("attention channel counts must be positive"));
        }
        if self.wf.len() != k * c || self.wg.len() != k * c || self.wh.len() != c * c || self.gamma.len() != 1 {
            return Err(Error::precondition("attention parameter shapes are inconsistent"));
        }
        Ok(())
    }
}

/// Per-frame intermediates needed by the backward pass.
pub struct AttentionCache {
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub h: Vec<f64>,
    pub beta: Vec<f64>,
    pub o: Vec<f64>,
}

/// `out[m, n] = sum_k a[m, k] * b[k, n]`
fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

/// `acc[m, k] += sum_n a[m, n] * b[k, n]`
fn add_matmul_bt(acc: &mut [f64], a: &[f64], b: &[f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            acc[i * k + p] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `acc[k, n] += sum_m a[m, k] * b[m, n]`
fn add_matmul_at(acc: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let arow = &mut acc[p * n..(p + 1) * n];
            for j in 0..n {
                arow[j] += av * brow[j];
            }
        }
    }
}

/// One frame `x: [C, N]`; returns `y` and the cache.
pub fn attention_frame(p: &SelfAttentionParams, x: &[f64], n: usize) -> (Vec<f64>, AttentionCache) {
    let (c, k) = (p.channels, p.key_channels);
    let f = matmul(&p.wf, x, k, c, n);
    let g = matmul(&p.wg, x, k, c, n);
    let h = matmul(&p.wh, x, c, c, n);
    let mut beta = vec![0.0; n * n];
    for j in 0..n {
        let row = &mut beta[j * n..(j + 1) * n];
        for kk in 0..k {
            let gj = g[kk * n + j];
            let frow = &f[kk * n..(kk + 1) * n];
            for i in 0..n {
                row[i] += frow[i] * gj;
            }
        }
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    // o[c, j] = sum_i h[c, i] beta[j, i]
    let mut o = vec![0.0; c * n];
    for ch in 0..c {
        let hrow = &h[ch * n..(ch + 1) * n];
        for j in 0..n {
            let brow = &beta[j * n..(j + 1) * n];
            o[ch * n + j] = hrow.iter().zip(brow).map(|(a, b)| a * b).sum();
        }
    }
    let gamma = p.gamma[0];
    let y = x.iter().zip(&o).map(|(xv, ov)| gamma * ov + xv).collect();
    (y, AttentionCache { f, g, h, beta, o })
}

/// Accumulates parameter gradients into `grads` and returns `dx`.
pub fn attention_frame_backward(
    p: &SelfAttentionParams,
    x: &[f64],
    n: usize,
    cache: &AttentionCache,
    dy: &[f64],
    grads: &mut SelfAttentionParams,
) -> Vec<f64> {
    let (c, k) = (p.channels, p.key_channels);
    let gamma = p.gamma[0];
    grads.gamma[0] += dy.iter().zip(&cache.o).map(|(a, b)| a * b).sum::<f64>();
    let d_o: Vec<f64> = dy.iter().map(|v| gamma * v).collect();

    // dbeta[j, i] = sum_c do[c, j] h[c, i]; dh[c, i] = sum_j do[c, j] beta[j, i]
    let mut dbeta = vec![0.0; n * n];
    add_matmul_at(&mut dbeta, &d_o, &cache.h, c, n, n);
    let dh = matmul(&d_o, &cache.beta, c, n, n);

    let mut ds = vec![0.0; n * n];
    for j in 0..n {
        let b = &cache.beta[j * n..(j + 1) * n];
        let db = &dbeta[j * n..(j + 1) * n];
        let inner: f64 = b.iter().zip(db).map(|(x, y)| x * y).sum();
        for i in 0..n {
            ds[j * n + i] = b[i] * (db[i] - inner);
        }
    }
    // s[j, i] = sum_k f[k, i] g[k, j]
    let df = matmul(&cache.g, &ds, k, n, n);
    let mut dg = vec![0.0; k * n];
    add_matmul_bt(&mut dg, &cache.f, &ds, k, n, n);

    add_matmul_bt(&mut grads.wf, &df, x, k, n, c);
    add_matmul_bt(&mut grads.wg, &dg, x, k, n, c);
    add_matmul_bt(&mut grads.wh, &dh, x, c, n, c);

    let mut dx = dy.to_vec();
    add_matmul_at(&mut dx, &p.wf, &df, k, c, n);
    add_matmul_at(&mut dx, &p.wg, &dg, k, c, n);
    add_matmul_at(&mut dx, &p.wh, &dh, c, c, n);
    dx
}

fn check_input(x: &Tensor, p: &SelfAttentionParams) -> Result<(usize, usize)> {
    p.check()?;
    x.expect_rank(4, "self_attention")?;
    let s = x.shape();
    if s[1] != p.channels {
        return Err(Error::precondition(format!(
            "self_attention expects {} channels, got {}",
            p.channels, s[1]
        )));
    }
    Ok((s[0], s[2] * s[3]))
}

/// Applies attention to every frame of `x: [B, C, s, s]`.
pub fn self_attention(x: &Tensor, p: &SelfAttentionParams) -> Result<Tensor> {
    let (b, n) = check_input(x, p)?;
    let stride = p.channels * n;
    let mut out = Vec::with_capacity(b * stride);
    for frame in x.data().chunks(stride) {
        out.extend(attention_frame(p, frame, n).0);
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Attention maps `[B, N, N]`; row `j` is the distribution over positions `i`.
pub fn attention_map(x: &Tensor, p: &SelfAttentionParams) -> Result<Tensor> {
    let (b, n) = check_input(x, p)?;
    let stride = p.channels * n;
    let mut out = Vec::with_capacity(b * n * n);
    for frame in x.data().chunks(stride) {
        out.extend(attention_frame(p, frame, n).1.beta);
    }
    Tensor::new(vec![b, n, n], out)
}
