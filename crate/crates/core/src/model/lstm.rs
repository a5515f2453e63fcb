//! Bidirectional LSTM layers over `[T, B, D]` sequences.
//!
//! Gate order within the `4H` pre-activation vector is i, f, g, o:
//! `c_t = f * c_{t-1} + i * g`, `h_t = o * tanh(c_t)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::layers::{gemm, sigmoid};
use crate::model::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmDirection {
    pub input: usize,
    pub hidden: usize,
    /// `[4H, input]`
    pub w_ih: Vec<f64>,
    /// `[4H, H]`
    pub w_hh: Vec<f64>,
    /// `[4H]`
    pub bias: Vec<f64>,
}

impl LstmDirection {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmDirection {
            input,
            hidden,
            w_ih: vec![0.0; 4 * hidden * input],
            w_hh: vec![0.0; 4 * hidden * hidden],
            bias: vec![0.0; 4 * hidden],
        }
    }

    fn check(&self) -> Result<()> {
        let (d, h) = (self.input, self.hidden);
        if d == 0 || h == 0 || self.w_ih.len() != 4 * h * d || self.w_hh.len() != 4 * h * h || self.bias.len() != 4 * h {
            return Err(Error::precondition("LSTM parameter shapes are inconsistent"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmLayer {
    pub forward: LstmDirection,
    pub backward: LstmDirection,
}

impl LstmLayer {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmLayer { forward: LstmDirection::zeros(input, hidden), backward: LstmDirection::zeros(input, hidden) }
    }

    pub fn input(&self) -> usize {
        self.forward.input
    }

    pub fn hidden(&self) -> usize {
        self.forward.hidden
    }

    pub fn check(&self) -> Result<()> {
        self.forward.check()?;
        self.backward.check()?;
        if self.forward.input != self.backward.input || self.forward.hidden != self.backward.hidden {
            return Err(Error::precondition("LSTM directions disagree on shape"));
        }
        Ok(())
    }
}

/// Activated gates, cell and hidden states for every `(t, b)`, indexed by
/// real time regardless of direction.
pub struct DirectionCache {
    pub gates: Vec<f64>,
    pub c: Vec<f64>,
    pub h: Vec<f64>,
}

fn order(t_len: usize, reverse: bool) -> Box<dyn Iterator<Item = usize>> {
    if reverse {
        Box::new((0..t_len).rev())
    } else {
        Box::new(0..t_len)
    }
}

fn previous(t: usize, t_len: usize, reverse: bool) -> Option<usize> {
    if reverse {
        (t + 1 < t_len).then_some(t + 1)
    } else {
        t.checked_sub(1)
    }
}

pub fn direction_forward(p: &LstmDirection, x: &[f64], t_len: usize, batch: usize, reverse: bool) -> DirectionCache {
    let (d, h) = (p.input, p.hidden);
    let rows = t_len * batch;
    // input projections for every step at once: [T*B, 4H]
    let mut gates = vec![0.0; rows * 4 * h];
    for z in gates.chunks_mut(4 * h) {
        z.copy_from_slice(&p.bias);
    }
    gemm(rows, d, 4 * h, x, false, &p.w_ih, true, &mut gates, 1.0);
    let mut c = vec![0.0; rows * h];
    let mut hs = vec![0.0; rows * h];
    for t in order(t_len, reverse) {
        let prev = previous(t, t_len, reverse);
        let zt = &mut gates[t * batch * 4 * h..(t + 1) * batch * 4 * h];
        if let Some(tp) = prev {
            gemm(batch, h, 4 * h, &hs[tp * batch * h..(tp + 1) * batch * h], false, &p.w_hh, true, zt, 1.0);
        }
        for b in 0..batch {
            let z = &mut zt[b * 4 * h..(b + 1) * 4 * h];
            for j in 0..h {
                z[j] = sigmoid(z[j]);
                z[h + j] = sigmoid(z[h + j]);
                z[2 * h + j] = z[2 * h + j].tanh();
                z[3 * h + j] = sigmoid(z[3 * h + j]);
            }
            for j in 0..h {
                let cp = prev.map_or(0.0, |tp| c[(tp * batch + b) * h + j]);
                let cv = z[h + j] * cp + z[j] * z[2 * h + j];
                c[(t * batch + b) * h + j] = cv;
                hs[(t * batch + b) * h + j] = z[3 * h + j] * cv.tanh();
            }
        }
    }
    DirectionCache { gates, c, h: hs }
}

/// Backpropagates `dh_out` (`[T, B, H]`, gradient on this direction's
/// outputs), accumulating parameter gradients into `grads` and the input
/// gradient into `dx` (`[T, B, D]`).
#[allow(clippy::too_many_arguments)]
pub fn direction_backward(
    p: &LstmDirection,
    x: &[f64],
    cache: &DirectionCache,
    dh_out: &[f64],
    t_len: usize,
    batch: usize,
    reverse: bool,
    grads: &mut LstmDirection,
    dx: &mut [f64],
) {
    let (d, h) = (p.input, p.hidden);
    let rows = t_len * batch;
    let mut dz_all = vec![0.0; rows * 4 * h];
    let mut dh_next = vec![0.0; batch * h];
    let mut dc_next = vec![0.0; batch * h];
    for t in order(t_len, !reverse) {
        let prev = previous(t, t_len, reverse);
        for b in 0..batch {
            let idx = t * batch + b;
            let gate = &cache.gates[idx * 4 * h..(idx + 1) * 4 * h];
            let dz = &mut dz_all[idx * 4 * h..(idx + 1) * 4 * h];
            for j in 0..h {
                let (i, f, g, o) = (gate[j], gate[h + j], gate[2 * h + j], gate[3 * h + j]);
                let tc = cache.c[idx * h + j].tanh();
                let dh = dh_out[idx * h + j] + dh_next[b * h + j];
                let dc = dc_next[b * h + j] + dh * o * (1.0 - tc * tc);
                let cp = prev.map_or(0.0, |tp| cache.c[(tp * batch + b) * h + j]);
                dz[j] = dc * g * i * (1.0 - i);
                dz[h + j] = dc * cp * f * (1.0 - f);
                dz[2 * h + j] = dc * i * (1.0 - g * g);
                dz[3 * h + j] = dh * tc * o * (1.0 - o);
                dc_next[b * h + j] = dc * f;
            }
        }
        let dzt = &dz_all[t * batch * 4 * h..(t + 1) * batch * 4 * h];
        match prev {
            Some(tp) => {
                let hp = &cache.h[tp * batch * h..(tp + 1) * batch * h];
                gemm(4 * h, batch, h, dzt, true, hp, false, &mut grads.w_hh, 1.0);
                gemm(batch, 4 * h, h, dzt, false, &p.w_hh, false, &mut dh_next, 0.0);
            }
            None => dh_next.iter_mut().for_each(|v| *v = 0.0),
        }
    }
    for dz in dz_all.chunks(4 * h) {
        for (gb, v) in grads.bias.iter_mut().zip(dz) {
            *gb += v;
        }
    }
    gemm(4 * h, rows, d, &dz_all, true, x, false, &mut grads.w_ih, 1.0);
    gemm(rows, 4 * h, d, &dz_all, false, &p.w_ih, false, dx, 1.0);
}

pub struct LayerCache {
    pub forward: DirectionCache,
    pub backward: DirectionCache,
}

/// Returns `[T, B, 2H]` outputs and the cache.
pub fn layer_forward(p: &LstmLayer, x: &[f64], t_len: usize, batch: usize) -> (Vec<f64>, LayerCache) {
    let h = p.hidden();
    let fw = direction_forward(&p.forward, x, t_len, batch, false);
    let bw = direction_forward(&p.backward, x, t_len, batch, true);
    let mut out = vec![0.0; t_len * batch * 2 * h];
    for idx in 0..t_len * batch {
        out[idx * 2 * h..idx * 2 * h + h].copy_from_slice(&fw.h[idx * h..(idx + 1) * h]);
        out[idx * 2 * h + h..(idx + 1) * 2 * h].copy_from_slice(&bw.h[idx * h..(idx + 1) * h]);
    }
    (out, LayerCache { forward: fw, backward: bw })
}

/// `dy` is `[T, B, 2H]`; returns `dx` as `[T, B, D]`.
pub fn layer_backward(
    p: &LstmLayer,
    x: &[f64],
    cache: &LayerCache,
    dy: &[f64],
    t_len: usize,
    batch: usize,
    grads: &mut LstmLayer,
) -> Vec<f64> {
    let h = p.hidden();
    let n = t_len * batch;
    let mut dfw = vec![0.0; n * h];
    let mut dbw = vec![0.0; n * h];
    for idx in 0..n {
        dfw[idx * h..(idx + 1) * h].copy_from_slice(&dy[idx * 2 * h..idx * 2 * h + h]);
        dbw[idx * h..(idx + 1) * h].copy_from_slice(&dy[idx * 2 * h + h..(idx + 1) * 2 * h]);
    }
    let mut dx = vec![0.0; n * p.input()];
    direction_backward(&p.forward, x, &cache.forward, &dfw, t_len, batch, false, &mut grads.forward, &mut dx);
    direction_backward(&p.backward, x, &cache.backward, &dbw, t_len, batch, true, &mut grads.backward, &mut dx);
    dx
}

/// One bidirectional layer on `seq: [T, B, D]`, returning `[T, B, 2H]`.
pub fn bilstm_forward(seq: &Tensor, layer: &LstmLayer) -> Result<Tensor> {
    layer.check()?;
    seq.expect_rank(3, "bilstm_forward")?;
    let s = seq.shape();
    if s[2] != layer.input() {
        return Err(Error::precondition(format!(
            "bilstm_forward expects input width {}, got {}",
            layer.input(),
            s[2]
        )));
    }
    let (out, _) = layer_forward(layer, seq.data(), s[0], s[1]);
    Tensor::new(vec![s[0], s[1], 2 * layer.hidden()], out)
}
