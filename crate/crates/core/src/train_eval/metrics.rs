use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Label, LabeledSequence};
use crate::error::{Error, Result};
use crate::model::{decide, Mode, ModelParams};

/// Binary confusion counts with yawn as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Confusion { tp, fp, fn_, tn }
    }

    pub fn add(&mut self, predicted: Label, actual: Label) {
        match (predicted, actual) {
            (Label::Yawn, Label::Yawn) => self.tp += 1,
            (Label::Yawn, Label::NonYawn) => self.fp += 1,
            (Label::NonYawn, Label::Yawn) => self.fn_ += 1,
            (Label::NonYawn, Label::NonYawn) => self.tn += 1,
        }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (Label, Label)>) -> Self {
        let mut c = Confusion::default();
        for (p, a) in pairs {
            c.add(p, a);
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn metrics(&self) -> Metrics {
        Metrics::from_confusion(*self)
    }
}

/// Confusion matrix laid out with predicted classes as rows and actual
/// classes as columns.
impl fmt::Display for Confusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<18}{:^22}", "", "Actual values")?;
        writeln!(f, "{:<18}{:>10}{:>12}", "Predicted values", "Yawn", "Non-yawn")?;
        writeln!(f, "{:<18}{:>10}{:>12}", "Yawn", self.tp, self.fp)?;
        write!(f, "{:<18}{:>10}{:>12}", "Non-yawn", self.fn_, self.tn)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Names of metrics whose denominator was zero; those report 0.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub undefined: Vec<String>,
}

impl Metrics {
    pub fn from_confusion(c: Confusion) -> Self {
        let mut undefined = Vec::new();
        let mut ratio = |name: &str, num: f64, den: f64| {
            if den == 0.0 {
                undefined.push(name.to_string());
                0.0
            } else {
                num / den
            }
        };
        let precision = ratio("precision", c.tp as f64, (c.tp + c.fp) as f64);
        let recall = ratio("recall", c.tp as f64, (c.tp + c.fn_) as f64);
        let f1 = ratio("f1", 2.0 * precision * recall, precision + recall);
        Metrics { tp: c.tp, fp: c.fp, fn_: c.fn_, tn: c.tn, precision, recall, f1, undefined }
    }

    pub fn confusion(&self) -> Confusion {
        Confusion::new(self.tp, self.fp, self.fn_, self.tn)
    }

    /// Percentages rounded to one decimal: `[precision, recall, f1]`.
    pub fn percent_one_decimal(&self) -> [f64; 3] {
        [self.precision, self.recall, self.f1].map(|v| (v * 1000.0).round() / 10.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub sequence_id: String,
    pub probability: f64,
    pub predicted: Label,
    pub actual: Label,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub metrics: Metrics,
    pub predictions: Vec<Prediction>,
}

impl Evaluation {
    /// Scores a prediction list.
    pub fn from_predictions(predictions: Vec<Prediction>) -> Self {
        let confusion = Confusion::from_pairs(predictions.iter().map(|p| (p.predicted, p.actual)));
        Evaluation { metrics: confusion.metrics(), predictions }
    }

    pub fn confusion(&self) -> Confusion {
        self.metrics.confusion()
    }

    /// Mean per-sequence binary cross-entropy.
    pub fn mean_bce(&self) -> f64 {
        let n = self.predictions.len() as f64;
        self.predictions.iter().map(|p| super::bce_loss(p.probability, p.actual.target())).sum::<f64>() / n
    }
}

/// Eval-mode probabilities in input order, computed in parallel.
pub fn probabilities(params: &ModelParams, set: &[LabeledSequence]) -> Result<Vec<f64>> {
    set.par_iter()
        .map(|s| {
            let input = super::model_input(s, params.config.input_size)?;
            params.forward(&input, Mode::Eval)
        })
        .collect()
}

pub fn evaluate(params: &ModelParams, set: &[LabeledSequence]) -> Result<Evaluation> {
    if set.is_empty() {
        return Err(Error::precondition("cannot evaluate an empty set"));
    }
    let probs = probabilities(params, set)?;
    let predictions: Vec<Prediction> = set
        .iter()
        .zip(probs)
        .map(|(s, p)| Prediction { sequence_id: s.id.clone(), probability: p, predicted: decide(p), actual: s.label })
        .collect();
    Ok(Evaluation::from_predictions(predictions))
}

/// Outcome of the checkpoint-selection rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub epoch: usize,
    pub mean_f1: f64,
    /// Every candidate as `(epoch, mean F1)`, in ascending validation loss.
    pub candidates: Vec<(usize, f64)>,
}

pub const SELECTION_CANDIDATES: usize = 10;

/// The epochs with the lowest validation loss, ascending; ties go to the
/// earlier epoch.
pub fn lowest_validation_epochs(records: &[super::EpochRecord], count: usize) -> Vec<usize> {
    let mut order: Vec<&super::EpochRecord> = records.iter().collect();
    order.sort_by(|a, b| a.valid_loss.total_cmp(&b.valid_loss).then(a.epoch.cmp(&b.epoch)));
    order.into_iter().take(count).map(|r| r.epoch).collect()
}

/// Evaluates the ten lowest-validation-loss epochs with `f1_per_set`
/// (one F1 per test set) and keeps the highest unweighted mean. Equal means
/// keep the candidate with the lower validation loss.
pub fn select_best(
    records: &[super::EpochRecord],
    mut f1_per_set: impl FnMut(usize) -> Result<Vec<f64>>,
) -> Result<Selection> {
    if records.is_empty() {
        return Err(Error::precondition("no epoch records to select from"));
    }
    let mut candidates = Vec::new();
    for epoch in lowest_validation_epochs(records, SELECTION_CANDIDATES) {
        let f1s = f1_per_set(epoch)?;
        if f1s.is_empty() {
            return Err(Error::precondition("selection needs at least one evaluation set"));
        }
        candidates.push((epoch, f1s.iter().sum::<f64>() / f1s.len() as f64));
    }
    let mut best = candidates[0];
    for &c in &candidates[1..] {
        if c.1 > best.1 {
            best = c;
        }
    }
    Ok(Selection { epoch: best.0, mean_f1: best.1, candidates })
}

/// JSON metrics plus the rendered confusion matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub name: String,
    #[serde(flatten)]
    pub metrics: Metrics,
    pub confusion_matrix: String,
}

impl MetricsReport {
    pub fn new(name: impl Into<String>, metrics: &Metrics) -> Self {
        MetricsReport { name: name.into(), metrics: metrics.clone(), confusion_matrix: metrics.confusion().to_string() }
    }
}
