//! Training loop, evaluation metrics and checkpoint selection.

mod metrics;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use metrics::{
    evaluate, lowest_validation_epochs, probabilities, select_best, Confusion, Evaluation, Metrics, MetricsReport,
    Prediction, Selection, SELECTION_CANDIDATES,
};

use crate::dataset::{augment, AugmentSpec, LabeledSequence};
use crate::error::{Error, Result};
use crate::model::{
    load_checkpoint, save_checkpoint, sequence_input, CheckpointMeta, ModelConfig, ModelParams, Tensor,
};

pub const BCE_EPS: f64 = 1e-7;

/// Binary cross-entropy with `p` clamped to `[1e-7, 1 - 1e-7]`.
pub fn bce_loss(p: f64, y: f64) -> f64 {
    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// `dL/dp` of [`bce_loss`] (inside the clamp).
pub fn bce_grad(p: f64, y: f64) -> f64 {
    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -y / p + (1.0 - y) / (1.0 - p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd,
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_halving_period: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    /// Per-epoch augmentation; `None` trains on the sequences as given.
    pub augment: Option<AugmentSpec>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 5,
            lr0: 1e-4,
            lr_halving_period: 10,
            seed: 0,
            optimizer: OptimizerKind::default(),
            augment: Some(AugmentSpec::default()),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.lr_halving_period == 0 {
            return Err(Error::precondition("epochs, batch size and halving period must be positive"));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::precondition(format!("learning rate must be positive, got {}", self.lr0)));
        }
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        Ok(())
    }
}

/// `lr0 * 0.5^floor(epoch / period)` for a zero-based epoch.
pub fn lr_schedule(epoch: usize, config: &TrainConfig) -> f64 {
    config.lr0 * 0.5f64.powi((epoch / config.lr_halving_period) as i32)
}

struct Optimizer {
    kind: OptimizerKind,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    fn new(kind: OptimizerKind, params: &mut ModelParams) -> Self {
        let shapes: Vec<usize> = params.learnable_mut().iter().map(|t| t.len()).collect();
        let zeros = || shapes.iter().map(|&n| vec![0.0; n]).collect();
        Optimizer { kind, step: 0, m: zeros(), v: zeros() }
    }

    fn apply(&mut self, params: &mut ModelParams, grads: &mut ModelParams, lr: f64) {
        self.step += 1;
        let gs = grads.learnable_mut();
        for (k, (p, g)) in params.learnable_mut().into_iter().zip(gs).enumerate() {
            match self.kind {
                OptimizerKind::Sgd => {
                    for (pv, gv) in p.iter_mut().zip(g.iter()) {
                        *pv -= lr * gv;
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let c1 = 1.0 - beta1.powi(self.step);
                    let c2 = 1.0 - beta2.powi(self.step);
                    let (m, v) = (&mut self.m[k], &mut self.v[k]);
                    for i in 0..p.len() {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                        p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                    }
                }
            }
        }
    }
}

/// Where a per-epoch checkpoint lives.
#[derive(Debug, Clone, PartialEq)]
pub enum Checkpoint {
    Memory(Box<ModelParams>),
    File(PathBuf),
}

impl Checkpoint {
    pub fn load(&self) -> Result<ModelParams> {
        match self {
            Checkpoint::Memory(p) => Ok((**p).clone()),
            Checkpoint::File(path) => Ok(load_checkpoint(path)?.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub valid_loss: f64,
    /// Checkpoint file, when checkpoints are written to disk.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

pub struct TrainOutcome {
    pub records: Vec<EpochRecord>,
    pub checkpoints: Vec<Checkpoint>,
}

impl TrainOutcome {
    pub fn checkpoint(&self, epoch: usize) -> Result<ModelParams> {
        self.checkpoints
            .get(epoch)
            .ok_or_else(|| Error::precondition(format!("no checkpoint for epoch {epoch}")))?
            .load()
    }

    /// Applies [`select_best`] with F1 on each of `sets`.
    pub fn select(&self, sets: &[&[LabeledSequence]]) -> Result<Selection> {
        select_best(&self.records, |epoch| {
            let params = self.checkpoint(epoch)?;
            sets.iter().map(|s| Ok(evaluate(&params, s)?.metrics.f1)).collect()
        })
    }
}

/// Options that affect where artifacts go but not the numbers produced.
#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Write `epoch_XXX.ckpt` files here instead of keeping checkpoints in memory.
    pub checkpoint_dir: Option<PathBuf>,
}

/// Resamples a sequence to the model input size if needed and maps it to a tensor.
pub fn model_input(seq: &LabeledSequence, input_size: usize) -> Result<Tensor> {
    let s = &seq.sequence;
    if s.width == input_size && s.height == input_size {
        sequence_input(s)
    } else {
        sequence_input(&s.resized(input_size, input_size)?)
    }
}

pub fn checkpoint_file_name(epoch: usize) -> String {
    format!("epoch_{epoch:03}.ckpt")
}

/// Trains from a seeded initialization. Every epoch shuffles the training
/// set, augments each sequence with index `epoch * N + i`, takes one
/// optimizer step per minibatch and records the mean validation BCE.
pub fn train(
    train_set: &[LabeledSequence],
    valid_set: &[LabeledSequence],
    model: &ModelConfig,
    config: &TrainConfig,
    options: &TrainOptions,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() || valid_set.is_empty() {
        return Err(Error::precondition("training needs non-empty train and validation sets"));
    }
    let mut params = ModelParams::new(model.clone(), config.seed)?;
    let mut optimizer = Optimizer::new(config.optimizer, &mut params);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed);
    dropout_rng.set_stream(1);
    let augment_spec = config.augment.map(|a| AugmentSpec { output_size: Some(model.input_size), ..a });
    let n = train_set.len();
    if let Some(dir) = &options.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }

    let mut records = Vec::with_capacity(config.epochs);
    let mut checkpoints = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let lr = lr_schedule(epoch, config);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let inputs = batch
                .iter()
                .map(|&i| match &augment_spec {
                    Some(spec) => model_input(&augment(&train_set[i], spec, (epoch * n + i) as u64)?, model.input_size),
                    None => model_input(&train_set[i], model.input_size),
                })
                .collect::<Result<Vec<_>>>()?;
            let targets: Vec<f64> = batch.iter().map(|&i| train_set[i].label.target()).collect();
            let refs: Vec<&Tensor> = inputs.iter().collect();
            let mut step = params.train_step(&refs, &targets, dropout_rng.gen())?;
            loss_sum += step.loss * batch.len() as f64;
            optimizer.apply(&mut params, &mut step.grads, lr);
            params.apply_batch_stats(&step.batch_stats);
        }
        let train_loss = loss_sum / n as f64;
        let valid_loss = probabilities(&params, valid_set)?
            .iter()
            .zip(valid_set)
            .map(|(&p, s)| bce_loss(p, s.label.target()))
            .sum::<f64>()
            / valid_set.len() as f64;
        if !train_loss.is_finite() || !valid_loss.is_finite() {
            return Err(Error::Numeric(format!(
                "epoch {epoch}: non-finite loss (train {train_loss}, valid {valid_loss})"
            )));
        }
        let mut record = EpochRecord { epoch, lr, train_loss, valid_loss, checkpoint: None };
        match &options.checkpoint_dir {
            Some(dir) => {
                let path = dir.join(checkpoint_file_name(epoch));
                save_checkpoint(&path, &params, &checkpoint_meta(&record))?;
                record.checkpoint = Some(path.clone());
                checkpoints.push(Checkpoint::File(path));
            }
            None => checkpoints.push(Checkpoint::Memory(Box::new(params.clone()))),
        }
        on_epoch(&record);
        records.push(record);
    }
    Ok(TrainOutcome { records, checkpoints })
}

pub fn checkpoint_meta(record: &EpochRecord) -> CheckpointMeta {
    let mut meta = CheckpointMeta { epoch: Some(record.epoch), ..Default::default() };
    meta.metrics.insert("lr".into(), record.lr);
    meta.metrics.insert("train_loss".into(), record.train_loss);
    meta.metrics.insert("valid_loss".into(), record.valid_loss);
    meta
}

/// Writes `epoch,lr,train_loss,valid_loss` rows.
pub fn write_training_log(path: &Path, records: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "lr", "train_loss", "valid_loss"])?;
    for r in records {
        w.write_record([r.epoch.to_string(), r.lr.to_string(), r.train_loss.to_string(), r.valid_loss.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_training_log(path: &Path) -> Result<Vec<EpochRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.records() {
        let row = row?;
        let field = |i: usize| row.get(i).ok_or_else(|| Error::parse(format!("training log row has {} fields", row.len())));
        let num = |i: usize| -> Result<f64> { field(i)?.parse().map_err(Error::parse) };
        out.push(EpochRecord {
            epoch: field(0)?.parse().map_err(Error::parse)?,
            lr: num(1)?,
            train_loss: num(2)?,
            valid_loss: num(3)?,
            checkpoint: None,
        });
    }
    Ok(out)
}
