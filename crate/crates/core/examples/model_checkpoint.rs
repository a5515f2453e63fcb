// Initializes the classifier, scores a sequence and round-trips the
// parameters through a checkpoint.

use std::error::Error;

use evyawn::model::{decode_checkpoint, encode_checkpoint, CheckpointMeta, Mode, ModelConfig, ModelParams, Tensor};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let config = ModelConfig {
        input_size: 32,
        extractor_channels: vec![4, 8],
        reduced_channels: 4,
        key_channels: 2,
        hidden: 8,
        lstm_layers: 2,
        dropout: 0.3,
        seq_len: 10,
    };
    let params = ModelParams::new(config, 3)?;
    let input = Tensor::new(vec![10, 1, 32, 32], (0..10 * 32 * 32).map(|i| ((i % 17) as f64 - 8.0) / 8.0).collect())?;
    let p = params.forward(&input, Mode::Eval)?;
    let label = params.predict(&input)?;

    let bytes = encode_checkpoint(&params, &CheckpointMeta::default())?;
    let (back, _) = decode_checkpoint(&bytes)?;
    assert_eq!(back, params);
    assert_eq!(back.forward(&input, Mode::Eval)?, p);
    println!(
        "{} learnable values, p(yawn) = {p:.4} -> {label:?}, checkpoint {} bytes",
        params.learnable_count(),
        bytes.len()
    );
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
