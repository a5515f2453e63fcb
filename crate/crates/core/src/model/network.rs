use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::attention::{attention_frame, attention_frame_backward, AttentionCache, SelfAttentionParams};
use super::layers::{
    batchnorm_backward, batchnorm_forward, conv2d_backward, conv2d_forward, linear_backward, linear_forward, relu,
    relu_backward, sigmoid, update_running, BatchNormCache, BatchStats, ConvGeometry,
};
use super::lstm::{layer_backward, layer_forward, LayerCache, LstmLayer};
use super::Tensor;
use crate::dataset::Label;
use crate::error::{Error, Result};
use crate::framing::FrameSequence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Square input side S.
    pub input_size: usize,
    /// Output width of each stride-2 extractor block.
    pub extractor_channels: Vec<usize>,
    /// Channels after the reduction convolution (attention width C).
    pub reduced_channels: usize,
    /// Query/key channels of the attention maps.
    pub key_channels: usize,
    /// LSTM hidden size H.
    pub hidden: usize,
    pub lstm_layers: usize,
    pub dropout: f64,
    /// Nominal sequence length; other lengths are accepted.
    pub seq_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_size: 256,
            extractor_channels: vec![8, 16, 32, 64],
            reduced_channels: 32,
            key_channels: 4,
            hidden: 64,
            lstm_layers: 2,
            dropout: 0.3,
            seq_len: 100,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0
            || self.extractor_channels.is_empty()
            || self.extractor_channels.contains(&0)
            || self.reduced_channels == 0
            || self.key_channels == 0
            || self.hidden == 0
            || self.lstm_layers == 0
            || self.seq_len == 0
        {
            return Err(Error::precondition("model dimensions must all be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::precondition(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }

    pub fn block_geometries(&self) -> Vec<ConvGeometry> {
        let mut side = self.input_size;
        let mut cin = 1;
        self.extractor_channels
            .iter()
            .map(|&cout| {
                let g = ConvGeometry { cin, cout, kernel: 3, stride: 2, pad: 1, height: side, width: side };
                side = g.out_height();
                cin = cout;
                g
            })
            .collect()
    }

    /// Spatial side of the feature maps entering attention.
    pub fn feature_side(&self) -> usize {
        self.block_geometries().last().map_or(self.input_size, |g| g.out_height())
    }

    pub fn reduce_geometry(&self) -> ConvGeometry {
        let s = self.feature_side();
        ConvGeometry {
            cin: *self.extractor_channels.last().unwrap_or(&1),
            cout: self.reduced_channels,
            kernel: 1,
            stride: 1,
            pad: 0,
            height: s,
            width: s,
        }
    }

    /// Per-frame feature width fed to the first LSTM layer.
    pub fn lstm_input(&self) -> usize {
        self.reduced_channels * self.feature_side() * self.feature_side()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvParams {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNormParams {
    pub fn new(channels: usize) -> Self {
        BatchNormParams {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorBlock {
    pub conv: ConvParams,
    pub bn: BatchNormParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorParams {
    pub blocks: Vec<ExtractorBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearParams {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub extractor: ExtractorParams,
    pub post_bn: BatchNormParams,
    pub reduce: ConvParams,
    pub attention: SelfAttentionParams,
    pub lstm: Vec<LstmLayer>,
    pub head: LinearParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Learnable,
    Buffer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics and dropout drawn from the given seed.
    Train { dropout_seed: u64 },
    Eval,
}

fn he(rng: &mut ChaCha8Rng, fan_in: usize, n: usize) -> Vec<f64> {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
    (0..n).map(|_| normal.sample(rng)).collect()
}

fn uniform(rng: &mut ChaCha8Rng, bound: f64, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()
}

impl ModelParams {
    /// Seeded initialization: He for convolutions, `U(+-1/sqrt(H))` for LSTM
    /// weights with forget bias 1, Xavier for the head, attention gamma 0.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blocks = config
            .block_geometries()
            .iter()
            .map(|g| ExtractorBlock {
                conv: ConvParams { weight: he(&mut rng, g.cin * 9, g.weight_len()), bias: vec![0.0; g.cout] },
                bn: BatchNormParams::new(g.cout),
            })
            .collect();
        let rg = config.reduce_geometry();
        let reduce = ConvParams { weight: he(&mut rng, rg.cin, rg.weight_len()), bias: vec![0.0; rg.cout] };
        let (c, k) = (config.reduced_channels, config.key_channels);
        let ab = (1.0 / c as f64).sqrt();
        let attention = SelfAttentionParams {
            channels: c,
            key_channels: k,
            wf: uniform(&mut rng, ab, k * c),
            wg: uniform(&mut rng, ab, k * c),
            wh: uniform(&mut rng, ab, c * c),
            gamma: vec![0.0],
        };
        let h = config.hidden;
        let lb = 1.0 / (h as f64).sqrt();
        let mut lstm = Vec::with_capacity(config.lstm_layers);
        for l in 0..config.lstm_layers {
            let input = if l == 0 { config.lstm_input() } else { 2 * h };
            let mut layer = LstmLayer::zeros(input, h);
            for dir in [&mut layer.forward, &mut layer.backward] {
                dir.w_ih = uniform(&mut rng, lb, 4 * h * input);
                dir.w_hh = uniform(&mut rng, lb, 4 * h * h);
                dir.bias[h..2 * h].iter_mut().for_each(|b| *b = 1.0);
            }
            lstm.push(layer);
        }
        let xb = (6.0 / (2 * h + 1) as f64).sqrt();
        let head = LinearParams { weight: uniform(&mut rng, xb, 2 * h), bias: vec![0.0] };
        let post_bn = BatchNormParams::new(*config.extractor_channels.last().expect("validated"));
        let params = ModelParams { config, extractor: ExtractorParams { blocks }, post_bn, reduce, attention, lstm, head };
        params.check()?;
        Ok(params)
    }

    /// End-to-end shape consistency with the stored config.
    pub fn check(&self) -> Result<()> {
        let cfg = &self.config;
        cfg.validate()?;
        let bad = |what: &str| Err(Error::precondition(format!("parameter shape mismatch in {what}")));
        let geoms = cfg.block_geometries();
        if geoms.len() != self.extractor.blocks.len() {
            return bad("extractor block count");
        }
        for (g, b) in geoms.iter().zip(&self.extractor.blocks) {
            if b.conv.weight.len() != g.weight_len()
                || b.conv.bias.len() != g.cout
                || [&b.bn.gamma, &b.bn.beta, &b.bn.running_mean, &b.bn.running_var].iter().any(|v| v.len() != g.cout)
            {
                return bad("extractor block");
            }
        }
        let rg = cfg.reduce_geometry();
        if self.reduce.weight.len() != rg.weight_len() || self.reduce.bias.len() != rg.cout {
            return bad("reduction convolution");
        }
        let pb = &self.post_bn;
        if [&pb.gamma, &pb.beta, &pb.running_mean, &pb.running_var].iter().any(|v| v.len() != rg.cin) {
            return bad("post-extractor batch norm");
        }
        self.attention.check()?;
        if self.attention.channels != cfg.reduced_channels || self.attention.key_channels != cfg.key_channels {
            return bad("attention");
        }
        if self.lstm.len() != cfg.lstm_layers {
            return bad("LSTM layer count");
        }
        for (l, layer) in self.lstm.iter().enumerate() {
            layer.check()?;
            let input = if l == 0 { cfg.lstm_input() } else { 2 * cfg.hidden };
            if layer.input() != input || layer.hidden() != cfg.hidden {
                return bad("LSTM layer");
            }
        }
        if self.head.weight.len() != 2 * cfg.hidden || self.head.bias.len() != 1 {
            return bad("head");
        }
        Ok(())
    }

    /// Every tensor in the fixed serialization order: learnable tensors
    /// first, then batch-norm running statistics.
    pub fn tensors(&self) -> Vec<(String, Slot, &Vec<f64>)> {
        let mut out = Vec::new();
        for (i, b) in self.extractor.blocks.iter().enumerate() {
            out.push((format!("extractor.{i}.conv.weight"), Slot::Learnable, &b.conv.weight));
            out.push((format!("extractor.{i}.conv.bias"), Slot::Learnable, &b.conv.bias));
            out.push((format!("extractor.{i}.bn.gamma"), Slot::Learnable, &b.bn.gamma));
            out.push((format!("extractor.{i}.bn.beta"), Slot::Learnable, &b.bn.beta));
        }
        out.push(("post_bn.gamma".into(), Slot::Learnable, &self.post_bn.gamma));
        out.push(("post_bn.beta".into(), Slot::Learnable, &self.post_bn.beta));
        out.push(("reduce.weight".into(), Slot::Learnable, &self.reduce.weight));
        out.push(("reduce.bias".into(), Slot::Learnable, &self.reduce.bias));
        out.push(("attention.wf".into(), Slot::Learnable, &self.attention.wf));
        out.push(("attention.wg".into(), Slot::Learnable, &self.attention.wg));
        out.push(("attention.wh".into(), Slot::Learnable, &self.attention.wh));
        out.push(("attention.gamma".into(), Slot::Learnable, &self.attention.gamma));
        for (l, layer) in self.lstm.iter().enumerate() {
            for (dname, d) in [("forward", &layer.forward), ("backward", &layer.backward)] {
                out.push((format!("lstm.{l}.{dname}.w_ih"), Slot::Learnable, &d.w_ih));
                out.push((format!("lstm.{l}.{dname}.w_hh"), Slot::Learnable, &d.w_hh));
                out.push((format!("lstm.{l}.{dname}.bias"), Slot::Learnable, &d.bias));
            }
        }
        out.push(("head.weight".into(), Slot::Learnable, &self.head.weight));
        out.push(("head.bias".into(), Slot::Learnable, &self.head.bias));
        for (i, b) in self.extractor.blocks.iter().enumerate() {
            out.push((format!("extractor.{i}.bn.running_mean"), Slot::Buffer, &b.bn.running_mean));
            out.push((format!("extractor.{i}.bn.running_var"), Slot::Buffer, &b.bn.running_var));
        }
        out.push(("post_bn.running_mean".into(), Slot::Buffer, &self.post_bn.running_mean));
        out.push(("post_bn.running_var".into(), Slot::Buffer, &self.post_bn.running_var));
        out
    }

    /// Mutable view in the same order as [`ModelParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<(Slot, &mut Vec<f64>)> {
        let mut out = Vec::new();
        let mut buffers = Vec::new();
        for b in self.extractor.blocks.iter_mut() {
            out.push((Slot::Learnable, &mut b.conv.weight));
            out.push((Slot::Learnable, &mut b.conv.bias));
            out.push((Slot::Learnable, &mut b.bn.gamma));
            out.push((Slot::Learnable, &mut b.bn.beta));
            buffers.push((Slot::Buffer, &mut b.bn.running_mean));
            buffers.push((Slot::Buffer, &mut b.bn.running_var));
        }
        out.push((Slot::Learnable, &mut self.post_bn.gamma));
        out.push((Slot::Learnable, &mut self.post_bn.beta));
        buffers.push((Slot::Buffer, &mut self.post_bn.running_mean));
        buffers.push((Slot::Buffer, &mut self.post_bn.running_var));
        out.push((Slot::Learnable, &mut self.reduce.weight));
        out.push((Slot::Learnable, &mut self.reduce.bias));
        out.push((Slot::Learnable, &mut self.attention.wf));
        out.push((Slot::Learnable, &mut self.attention.wg));
        out.push((Slot::Learnable, &mut self.attention.wh));
        out.push((Slot::Learnable, &mut self.attention.gamma));
        for layer in self.lstm.iter_mut() {
            for d in [&mut layer.forward, &mut layer.backward] {
                out.push((Slot::Learnable, &mut d.w_ih));
                out.push((Slot::Learnable, &mut d.w_hh));
                out.push((Slot::Learnable, &mut d.bias));
            }
        }
        out.push((Slot::Learnable, &mut self.head.weight));
        out.push((Slot::Learnable, &mut self.head.bias));
        out.extend(buffers);
        out
    }

    /// Learnable tensors only, in serialization order.
    pub fn learnable_mut(&mut self) -> Vec<&mut Vec<f64>> {
        self.tensors_mut().into_iter().filter(|(s, _)| *s == Slot::Learnable).map(|(_, t)| t).collect()
    }

    pub fn learnable_count(&self) -> usize {
        self.tensors().iter().filter(|(_, s, _)| *s == Slot::Learnable).map(|(_, _, t)| t.len()).sum()
    }

    /// Same shapes, every value zero; used as a gradient accumulator.
    pub fn zeros_like(&self) -> ModelParams {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.iter_mut().for_each(|v| *v = 0.0);
        }
        z
    }

    pub fn apply_batch_stats(&mut self, stats: &[BatchStats]) {
        let n = self.extractor.blocks.len();
        debug_assert_eq!(stats.len(), n + 1);
        for (b, s) in self.extractor.blocks.iter_mut().zip(stats) {
            update_running(&mut b.bn.running_mean, &mut b.bn.running_var, s);
        }
        update_running(&mut self.post_bn.running_mean, &mut self.post_bn.running_var, &stats[n]);
    }

    fn check_frames(&self, t: &Tensor) -> Result<usize> {
        t.expect_rank(4, "model input")?;
        let s = t.shape();
        let size = self.config.input_size;
        if s[1] != 1 || s[2] != size || s[3] != size {
            return Err(Error::precondition(format!(
                "model expects frames of shape [*, 1, {size}, {size}], got {s:?}"
            )));
        }
        Ok(s[0])
    }

    /// Extractor blocks only, eval mode: `[B, 1, S, S] -> [B, C, s, s]`.
    pub fn extract_features(&self, batch: &Tensor) -> Result<Tensor> {
        let n = self.check_frames(batch)?;
        let mut x = batch.data().to_vec();
        let mut shape = vec![n, 1, self.config.input_size, self.config.input_size];
        for (g, b) in self.config.block_geometries().iter().zip(&self.extractor.blocks) {
            let conv = conv2d_forward(g, &x, &b.conv.weight, &b.conv.bias, n);
            let plane = g.out_height() * g.out_width();
            let running = Some((b.bn.running_mean.as_slice(), b.bn.running_var.as_slice()));
            let (y, _, _) = batchnorm_forward(&conv, n, g.cout, plane, &b.bn.gamma, &b.bn.beta, running);
            x = relu(&y);
            shape = vec![n, g.cout, g.out_height(), g.out_width()];
        }
        Tensor::new(shape, x)
    }

    /// Probability of the yawn class for one `[T, 1, S, S]` sequence.
    pub fn forward(&self, sequence: &Tensor, mode: Mode) -> Result<f64> {
        let t = self.check_frames(sequence)?;
        let pass = self.run(sequence.data(), 1, t, mode);
        Ok(pass.probs[0])
    }

    pub fn predict(&self, sequence: &Tensor) -> Result<Label> {
        Ok(decide(self.forward(sequence, Mode::Eval)?))
    }

    /// Forward and backward over a minibatch of equal-length sequences with
    /// mean binary cross-entropy on the logits.
    pub fn train_step(&self, batch: &[&Tensor], targets: &[f64], dropout_seed: u64) -> Result<TrainStep> {
        if batch.is_empty() || batch.len() != targets.len() {
            return Err(Error::precondition("train_step needs one target per sequence"));
        }
        let t = self.check_frames(batch[0])?;
        for s in batch {
            if self.check_frames(s)? != t {
                return Err(Error::precondition("sequences in a minibatch must share their length"));
            }
        }
        let b = batch.len();
        let mut frames = Vec::with_capacity(batch.iter().map(|s| s.len()).sum());
        for s in batch {
            frames.extend_from_slice(s.data());
        }
        let pass = self.run(&frames, b, t, Mode::Train { dropout_seed });
        let mut loss = 0.0;
        let mut dlogits = Vec::with_capacity(b);
        for (i, (&z, &y)) in pass.logits.iter().zip(targets).enumerate() {
            // softplus(z) - y z, stable for large |z|
            loss += z.max(0.0) - y * z + (-z.abs()).exp().ln_1p();
            dlogits.push((pass.probs[i] - y) / b as f64);
        }
        loss /= b as f64;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite training loss {loss}")));
        }
        let grads = self.backward(&pass, &dlogits);
        Ok(TrainStep { loss, probs: pass.probs, grads, batch_stats: pass.stats })
    }

    fn run(&self, frames: &[f64], b: usize, t: usize, mode: Mode) -> Pass {
        let cfg = &self.config;
        let n = b * t;
        let train = matches!(mode, Mode::Train { .. });
        let mut acts = vec![frames.to_vec()];
        let mut bn_caches = Vec::new();
        let mut stats = Vec::new();
        for (g, blk) in cfg.block_geometries().iter().zip(&self.extractor.blocks) {
            let conv = conv2d_forward(g, acts.last().expect("input"), &blk.conv.weight, &blk.conv.bias, n);
            let plane = g.out_height() * g.out_width();
            let running = (!train).then_some((blk.bn.running_mean.as_slice(), blk.bn.running_var.as_slice()));
            let (y, cache, s) = batchnorm_forward(&conv, n, g.cout, plane, &blk.bn.gamma, &blk.bn.beta, running);
            bn_caches.push(cache);
            stats.extend(s);
            acts.push(relu(&y));
        }
        let rg = cfg.reduce_geometry();
        let plane = rg.height * rg.width;
        let pb = &self.post_bn;
        let running = (!train).then_some((pb.running_mean.as_slice(), pb.running_var.as_slice()));
        let (post, post_cache, s) =
            batchnorm_forward(acts.last().expect("features"), n, rg.cin, plane, &pb.gamma, &pb.beta, running);
        stats.extend(s);
        let reduced = conv2d_forward(&rg, &post, &self.reduce.weight, &self.reduce.bias, n);

        let d = rg.out_len();
        let attended: Vec<(Vec<f64>, AttentionCache)> =
            reduced.par_chunks(d).map(|x| attention_frame(&self.attention, x, plane)).collect();
        // frames are sequence-major; the LSTM wants time-major [T, B, D]
        let mut seq = vec![0.0; n * d];
        for bi in 0..b {
            for ti in 0..t {
                seq[(ti * b + bi) * d..(ti * b + bi + 1) * d].copy_from_slice(&attended[bi * t + ti].0);
            }
        }
        let attn_caches: Vec<AttentionCache> = attended.into_iter().map(|(_, c)| c).collect();

        let mut lstm_inputs = vec![seq];
        let mut lstm_caches = Vec::new();
        for layer in &self.lstm {
            let (out, cache) = layer_forward(layer, lstm_inputs.last().expect("input"), t, b);
            lstm_caches.push(cache);
            lstm_inputs.push(out);
        }
        let top = lstm_inputs.last().expect("top");
        let h = cfg.hidden;
        let mut features = vec![0.0; b * 2 * h];
        for bi in 0..b {
            let last = &top[((t - 1) * b + bi) * 2 * h..((t - 1) * b + bi) * 2 * h + h];
            let first = &top[bi * 2 * h + h..(bi + 1) * 2 * h];
            features[bi * 2 * h..bi * 2 * h + h].copy_from_slice(last);
            features[bi * 2 * h + h..(bi + 1) * 2 * h].copy_from_slice(first);
        }
        let mask: Vec<f64> = match mode {
            Mode::Train { dropout_seed } if cfg.dropout > 0.0 => {
                let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
                let keep = 1.0 / (1.0 - cfg.dropout);
                (0..features.len()).map(|_| if rng.gen::<f64>() < cfg.dropout { 0.0 } else { keep }).collect()
            }
            _ => vec![1.0; features.len()],
        };
        let dropped: Vec<f64> = features.iter().zip(&mask).map(|(f, m)| f * m).collect();
        let logits: Vec<f64> = dropped
            .chunks(2 * h)
            .map(|f| linear_forward(f, &self.head.weight, &self.head.bias)[0])
            .collect();
        let probs = logits.iter().map(|&z| sigmoid(z)).collect();
        Pass {
            b,
            t,
            probs,
            logits,
            stats,
            acts,
            bn_caches,
            post,
            post_cache,
            attn_caches,
            reduced,
            lstm_inputs,
            lstm_caches,
            mask,
            dropped,
        }
    }

    fn backward(&self, pass: &Pass, dlogits: &[f64]) -> ModelParams {
        let cfg = &self.config;
        let (b, t) = (pass.b, pass.t);
        let n = b * t;
        let h = cfg.hidden;
        let mut grads = self.zeros_like();

        let mut dtop = vec![0.0; t * b * 2 * h];
        for bi in 0..b {
            let x = &pass.dropped[bi * 2 * h..(bi + 1) * 2 * h];
            let dfeat = linear_backward(x, &self.head.weight, &[dlogits[bi]], &mut grads.head.weight, &mut grads.head.bias);
            let m = &pass.mask[bi * 2 * h..(bi + 1) * 2 * h];
            for j in 0..h {
                dtop[((t - 1) * b + bi) * 2 * h + j] += dfeat[j] * m[j];
                dtop[bi * 2 * h + h + j] += dfeat[h + j] * m[h + j];
            }
        }
        let mut d = dtop;
        for l in (0..self.lstm.len()).rev() {
            d = layer_backward(&self.lstm[l], &pass.lstm_inputs[l], &pass.lstm_caches[l], &d, t, b, &mut grads.lstm[l]);
        }

        let rg = cfg.reduce_geometry();
        let plane = rg.height * rg.width;
        let fd = rg.out_len();
        let mut dreduced = vec![0.0; n * fd];
        for bi in 0..b {
            for ti in 0..t {
                let f = bi * t + ti;
                let dy = &d[(ti * b + bi) * fd..(ti * b + bi + 1) * fd];
                let x = &pass.reduced[f * fd..(f + 1) * fd];
                let dx = attention_frame_backward(&self.attention, x, plane, &pass.attn_caches[f], dy, &mut grads.attention);
                dreduced[f * fd..(f + 1) * fd].copy_from_slice(&dx);
            }
        }
        let mut dpost = vec![0.0; n * rg.in_len()];
        conv2d_backward(
            &rg,
            &pass.post,
            &self.reduce.weight,
            &dreduced,
            n,
            &mut grads.reduce.weight,
            &mut grads.reduce.bias,
            Some(&mut dpost),
        );
        let mut dact = batchnorm_backward(
            &dpost,
            &pass.post_cache,
            n,
            rg.cin,
            plane,
            &self.post_bn.gamma,
            &mut grads.post_bn.gamma,
            &mut grads.post_bn.beta,
        );
        let geoms = cfg.block_geometries();
        for i in (0..geoms.len()).rev() {
            let g = &geoms[i];
            let blk = &self.extractor.blocks[i];
            let gblk = &mut grads.extractor.blocks[i];
            let drelu = relu_backward(&dact, &pass.acts[i + 1]);
            let plane = g.out_height() * g.out_width();
            let dconv = batchnorm_backward(
                &drelu,
                &pass.bn_caches[i],
                n,
                g.cout,
                plane,
                &blk.bn.gamma,
                &mut gblk.bn.gamma,
                &mut gblk.bn.beta,
            );
            if i == 0 {
                conv2d_backward(g, &pass.acts[0], &blk.conv.weight, &dconv, n, &mut gblk.conv.weight, &mut gblk.conv.bias, None);
            } else {
                let mut din = vec![0.0; n * g.in_len()];
                conv2d_backward(
                    g,
                    &pass.acts[i],
                    &blk.conv.weight,
                    &dconv,
                    n,
                    &mut gblk.conv.weight,
                    &mut gblk.conv.bias,
                    Some(&mut din),
                );
                dact = din;
            }
        }
        grads
    }
}

/// Decision rule: yawn iff `p >= 0.5`.
pub fn decide(p: f64) -> Label {
    if p >= 0.5 {
        Label::Yawn
    } else {
        Label::NonYawn
    }
}

/// Maps normalized frames (128 = no events) to `[T, 1, S, S]` in `[-1, 1)`.
pub fn sequence_input(seq: &FrameSequence) -> Result<Tensor> {
    if seq.frames.is_empty() {
        return Err(Error::precondition("empty frame sequence"));
    }
    let mut data = Vec::with_capacity(seq.frames.len() * seq.width * seq.height);
    for f in &seq.frames {
        data.extend(f.pixels.iter().map(|&v| (v as f64 - 128.0) / 128.0));
    }
    Tensor::new(vec![seq.frames.len(), 1, seq.height, seq.width], data)
}

pub struct TrainStep {
    pub loss: f64,
    pub probs: Vec<f64>,
    pub grads: ModelParams,
    /// Batch statistics of every batch-norm layer, extractor blocks first.
    pub batch_stats: Vec<BatchStats>,
}

struct Pass {
    b: usize,
    t: usize,
    probs: Vec<f64>,
    logits: Vec<f64>,
    stats: Vec<BatchStats>,
    acts: Vec<Vec<f64>>,
    bn_caches: Vec<BatchNormCache>,
    post: Vec<f64>,
    post_cache: BatchNormCache,
    attn_caches: Vec<AttentionCache>,
    reduced: Vec<f64>,
    lstm_inputs: Vec<Vec<f64>>,
    lstm_caches: Vec<LayerCache>,
    mask: Vec<f64>,
    dropped: Vec<f64>,
}
