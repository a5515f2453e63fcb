// Applies one seeded crop/rotate/mirror draw consistently to every frame of
// a sequence.

use std::error::Error;

use evyawn::dataset::{augment, AugmentSpec, Label, LabeledSequence};
use evyawn::framing::{FrameSequence, NormalizedFrame};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let frames = (0..10)
        .map(|t| NormalizedFrame {
            width: 48,
            height: 48,
            pixels: (0..48 * 48).map(|p| if (p % 48) < 10 + t { 200 } else { 128 }).collect(),
        })
        .collect();
    let seq = LabeledSequence {
        id: "demo".into(),
        sequence: FrameSequence { width: 48, height: 48, t_start_us: 0, dt_us: 100_000, frames },
        label: Label::Yawn,
        subject_id: "s0".into(),
        source_clip_id: "demo".into(),
        padded: false,
    };
    let spec = AugmentSpec { seed: 42, output_size: Some(32), ..AugmentSpec::default() };
    let params = spec.draw(7, 48, 48);
    let out = augment(&seq, &spec, 7)?;
    assert_eq!(out, augment(&seq, &spec, 7)?);
    assert_eq!(out.sequence.width, 32);
    println!("draw 7: {params:?}, {} frames of {}x{}", out.sequence.len(), out.sequence.width, out.sequence.height);
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
