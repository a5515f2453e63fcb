// Trains a small classifier on a synthetic corpus, picks a checkpoint and
// evaluates it on held-out subjects.

use std::error::Error;

use evyawn::dataset::synth::{synth_corpus, CorpusSpec, SynthOptions};
use evyawn::dataset::{split_by_subject, Partition, SequenceConfig, SplitSpec};
use evyawn::model::ModelConfig;
use evyawn::simulator::SimulatorConfig;
use evyawn::train_eval::{evaluate, train, TrainConfig, TrainOptions};
use evyawn::Geometry;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let spec = CorpusSpec {
        subjects: 8,
        cycles: 3,
        geometry: Geometry::new(32, 32),
        seed: 1,
        options: SynthOptions::default(),
        simulator: SimulatorConfig::default(),
        sequence: SequenceConfig { span_us: 2_000_000, dt_us: 100_000, frames: 20, clip: 10 },
    };
    let subjects: Vec<String> = (0..spec.subjects).map(|i| spec.subject_id(i)).collect();
    let splits = split_by_subject(synth_corpus(&spec)?, &SplitSpec::seeded(&subjects, [6, 1, 1], 1)?)?;

    let model = ModelConfig {
        input_size: 32,
        extractor_channels: vec![4, 8],
        reduced_channels: 4,
        key_channels: 2,
        hidden: 8,
        lstm_layers: 1,
        dropout: 0.2,
        seq_len: 20,
    };
    let config = TrainConfig { epochs: 15, lr0: 3e-3, seed: 1, ..TrainConfig::default() };
    let outcome = train(
        splits.get(Partition::Train),
        splits.get(Partition::Valid),
        &model,
        &config,
        &TrainOptions::default(),
        |r| println!("epoch {} train {:.4} valid {:.4}", r.epoch, r.train_loss, r.valid_loss),
    )?;
    let selection = outcome.select(&[splits.get(Partition::Valid)])?;
    let best = outcome.checkpoint(selection.epoch)?;
    let eval = evaluate(&best, splits.get(Partition::Test))?;
    println!("selected epoch {}, test F1 {:.3}\n{}", selection.epoch, eval.metrics.f1, eval.confusion());
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
