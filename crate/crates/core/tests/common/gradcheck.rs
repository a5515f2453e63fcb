//! Central finite-difference oracle for the hand-written backward passes.
//!
//! Each component is wrapped in a scalar loss `sum_k w_k y_k` with fixed
//! random weights, so the upstream gradient is exactly `w`.

use evyawn::model::attention::{attention_frame, attention_frame_backward, SelfAttentionParams};
use evyawn::model::layers::{
    batchnorm_backward, batchnorm_forward, conv2d_backward, conv2d_forward, linear_backward, linear_forward, relu,
    relu_backward, sigmoid, ConvGeometry,
};
use evyawn::model::lstm::{layer_backward, layer_forward, LstmLayer};
use evyawn::model::{ModelConfig, ModelParams, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
/// Gradients smaller than this are compared in absolute terms only.
pub const MAGNITUDE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct Report {
    pub component: &'static str,
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: String,
}

impl Report {
    fn new(component: &'static str) -> Self {
        Report { component, checked: 0, max_rel_err: 0.0, worst: String::new() }
    }

    fn compare(&mut self, tensor: &str, index: usize, analytic: f64, numeric: f64) {
        let scale = analytic.abs().max(numeric.abs());
        if scale <= MAGNITUDE_FLOOR {
            return;
        }
        self.checked += 1;
        let rel = (analytic - numeric).abs() / scale;
        if rel > self.max_rel_err {
            self.max_rel_err = rel;
            self.worst = format!("{tensor}[{index}] analytic {analytic:e} numeric {numeric:e}");
        }
    }
}

fn randv(rng: &mut ChaCha8Rng, n: usize, r: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-r..r)).collect()
}

fn weighted(y: &[f64], w: &[f64]) -> f64 {
    y.iter().zip(w).map(|(a, b)| a * b).sum()
}

/// Compares `analytic` against central differences of `loss` while
/// perturbing the vector selected by `slot`.
fn check_slot<P: Clone>(
    report: &mut Report,
    name: &str,
    base: &P,
    slot: impl Fn(&mut P) -> &mut Vec<f64>,
    analytic: &[f64],
    loss: impl Fn(&P) -> f64,
) {
    let mut q = base.clone();
    for (i, &a) in analytic.iter().enumerate() {
        let orig = slot(&mut q)[i];
        slot(&mut q)[i] = orig + STEP;
        let lp = loss(&q);
        slot(&mut q)[i] = orig - STEP;
        let lm = loss(&q);
        slot(&mut q)[i] = orig;
        report.compare(name, i, a, (lp - lm) / (2.0 * STEP));
    }
}

#[derive(Clone)]
struct BlockState {
    x: Vec<f64>,
    w: Vec<f64>,
    b: Vec<f64>,
    gamma: Vec<f64>,
    beta: Vec<f64>,
}

/// Extractor block: 3x3 stride-2 convolution, training-mode batch norm, ReLU.
pub fn extractor_block(seed: u64) -> Report {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = ConvGeometry { cin: 2, cout: 3, kernel: 3, stride: 2, pad: 1, height: 7, width: 7 };
    let n = 3;
    let plane = g.out_height() * g.out_width();
    let st = BlockState {
        x: randv(&mut rng, n * g.in_len(), 1.0),
        w: randv(&mut rng, g.weight_len(), 0.5),
        b: randv(&mut rng, g.cout, 0.5),
        gamma: (0..g.cout).map(|_| rng.gen_range(0.5..1.5)).collect(),
        beta: randv(&mut rng, g.cout, 0.5),
    };
    let wout = randv(&mut rng, n * g.out_len(), 1.0);
    let forward = |s: &BlockState| {
        let conv = conv2d_forward(&g, &s.x, &s.w, &s.b, n);
        let (y, cache, _) = batchnorm_forward(&conv, n, g.cout, plane, &s.gamma, &s.beta, None);
        (relu(&y), cache)
    };
    let loss = |s: &BlockState| weighted(&forward(s).0, &wout);

    let (out, cache) = forward(&st);
    let drelu = relu_backward(&wout, &out);
    let (mut dgamma, mut dbeta) = (vec![0.0; g.cout], vec![0.0; g.cout]);
    let dconv = batchnorm_backward(&drelu, &cache, n, g.cout, plane, &st.gamma, &mut dgamma, &mut dbeta);
    let (mut dw, mut db, mut dx) = (vec![0.0; g.weight_len()], vec![0.0; g.cout], vec![0.0; st.x.len()]);
    conv2d_backward(&g, &st.x, &st.w, &dconv, n, &mut dw, &mut db, Some(&mut dx));

    let mut r = Report::new("extractor block");
    check_slot(&mut r, "x", &st, |s| &mut s.x, &dx, loss);
    check_slot(&mut r, "conv.weight", &st, |s| &mut s.w, &dw, loss);
    check_slot(&mut r, "conv.bias", &st, |s| &mut s.b, &db, loss);
    check_slot(&mut r, "bn.gamma", &st, |s| &mut s.gamma, &dgamma, loss);
    check_slot(&mut r, "bn.beta", &st, |s| &mut s.beta, &dbeta, loss);
    r
}

#[derive(Clone)]
struct AttnState {
    x: Vec<f64>,
    p: SelfAttentionParams,
}

pub fn self_attention(seed: u64) -> Report {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c, k, n) = (4, 2, 9);
    let mut p = SelfAttentionParams::zeros(c, k);
    p.wf = randv(&mut rng, k * c, 1.0);
    p.wg = randv(&mut rng, k * c, 1.0);
    p.wh = randv(&mut rng, c * c, 1.0);
    p.gamma = vec![0.7];
    let st = AttnState { x: randv(&mut rng, c * n, 1.0), p };
    let wout = randv(&mut rng, c * n, 1.0);
    let loss = |s: &AttnState| weighted(&attention_frame(&s.p, &s.x, n).0, &wout);

    let (_, cache) = attention_frame(&st.p, &st.x, n);
    let mut grads = SelfAttentionParams::zeros(c, k);
    let dx = attention_frame_backward(&st.p, &st.x, n, &cache, &wout, &mut grads);

    let mut r = Report::new("self-attention");
    check_slot(&mut r, "x", &st, |s| &mut s.x, &dx, loss);
    check_slot(&mut r, "wf", &st, |s| &mut s.p.wf, &grads.wf, loss);
    check_slot(&mut r, "wg", &st, |s| &mut s.p.wg, &grads.wg, loss);
    check_slot(&mut r, "wh", &st, |s| &mut s.p.wh, &grads.wh, loss);
    check_slot(&mut r, "gamma", &st, |s| &mut s.p.gamma, &grads.gamma, loss);
    r
}

#[derive(Clone)]
struct LstmState {
    x: Vec<f64>,
    layer: LstmLayer,
}

/// One bidirectional layer at T=5, B=2, D=3, H=4.
pub fn bilstm(seed: u64) -> Report {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (t, b, d, h) = (5, 2, 3, 4);
    let mut layer = LstmLayer::zeros(d, h);
    for dir in [&mut layer.forward, &mut layer.backward] {
        dir.w_ih = randv(&mut rng, 4 * h * d, 0.8);
        dir.w_hh = randv(&mut rng, 4 * h * h, 0.8);
        dir.bias = randv(&mut rng, 4 * h, 0.5);
    }
    let st = LstmState { x: randv(&mut rng, t * b * d, 1.0), layer };
    let wout = randv(&mut rng, t * b * 2 * h, 1.0);
    let loss = |s: &LstmState| weighted(&layer_forward(&s.layer, &s.x, t, b).0, &wout);

    let (_, cache) = layer_forward(&st.layer, &st.x, t, b);
    let mut grads = LstmLayer::zeros(d, h);
    let dx = layer_backward(&st.layer, &st.x, &cache, &wout, t, b, &mut grads);

    let mut r = Report::new("BiLSTM");
    check_slot(&mut r, "x", &st, |s| &mut s.x, &dx, loss);
    check_slot(&mut r, "forward.w_ih", &st, |s| &mut s.layer.forward.w_ih, &grads.forward.w_ih, loss);
    check_slot(&mut r, "forward.w_hh", &st, |s| &mut s.layer.forward.w_hh, &grads.forward.w_hh, loss);
    check_slot(&mut r, "forward.bias", &st, |s| &mut s.layer.forward.bias, &grads.forward.bias, loss);
    check_slot(&mut r, "backward.w_ih", &st, |s| &mut s.layer.backward.w_ih, &grads.backward.w_ih, loss);
    check_slot(&mut r, "backward.w_hh", &st, |s| &mut s.layer.backward.w_hh, &grads.backward.w_hh, loss);
    check_slot(&mut r, "backward.bias", &st, |s| &mut s.layer.backward.bias, &grads.backward.bias, loss);
    r
}

#[derive(Clone)]
struct HeadState {
    x: Vec<f64>,
    w: Vec<f64>,
    b: Vec<f64>,
}

/// Fully-connected layer, sigmoid and binary cross-entropy.
pub fn head(seed: u64) -> Report {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 8;
    let st = HeadState { x: randv(&mut rng, n, 1.0), w: randv(&mut rng, n, 1.0), b: randv(&mut rng, 1, 0.5) };
    let mut r = Report::new("head");
    for y in [0.0, 1.0] {
        let loss = |s: &HeadState| {
            let p = sigmoid(linear_forward(&s.x, &s.w, &s.b)[0]);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        };
        let p = sigmoid(linear_forward(&st.x, &st.w, &st.b)[0]);
        let (mut dw, mut db) = (vec![0.0; n], vec![0.0; 1]);
        let dx = linear_backward(&st.x, &st.w, &[p - y], &mut dw, &mut db);
        check_slot(&mut r, "x", &st, |s| &mut s.x, &dx, loss);
        check_slot(&mut r, "weight", &st, |s| &mut s.w, &dw, loss);
        check_slot(&mut r, "bias", &st, |s| &mut s.b, &db, loss);
    }
    r
}

pub fn toy_model_config() -> ModelConfig {
    ModelConfig {
        input_size: 16,
        extractor_channels: vec![2, 3],
        reduced_channels: 2,
        key_channels: 1,
        hidden: 3,
        lstm_layers: 2,
        dropout: 0.3,
        seq_len: 4,
    }
}

/// Whole network at T=4, S=16 with a batch of two sequences, training-mode
/// batch norm and a fixed dropout mask.
pub fn full_network(seed: u64) -> Report {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::new(toy_model_config(), seed).unwrap();
    params.attention.gamma = vec![0.6];
    let (t, s) = (4, 16);
    let seqs: Vec<Tensor> =
        (0..2).map(|_| Tensor::new(vec![t, 1, s, s], randv(&mut rng, t * s * s, 1.0)).unwrap()).collect();
    let targets = [1.0, 0.0];
    let dropout_seed = seed ^ 0x5eed;
    let loss = |p: &ModelParams| p.train_step(&[&seqs[0], &seqs[1]], &targets, dropout_seed).unwrap().loss;

    let mut grads = params.train_step(&[&seqs[0], &seqs[1]], &targets, dropout_seed).unwrap().grads;
    let names: Vec<String> = params.tensors().iter().map(|(n, _, _)| n.clone()).collect();
    let analytic: Vec<Vec<f64>> = grads.learnable_mut().into_iter().map(|v| v.clone()).collect();
    let mut r = Report::new("full network");
    for (i, a) in analytic.iter().enumerate() {
        check_slot(&mut r, &names[i], &params, |p| p.learnable_mut().swap_remove(i), a, loss);
    }
    r
}
