// Converts a synthetic yawn clip into events with the contrast-threshold
// simulator.

use std::error::Error;

use evyawn::dataset::synth::{synth_clip, ClipKind};
use evyawn::simulator::{simulate_video, SimulatorConfig};
use evyawn::Geometry;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let clip = synth_clip(ClipKind::YawnLike, Geometry::new(48, 48), 4_000_000, 11)?;
    let config = SimulatorConfig::default();
    let stream = simulate_video(clip.frames.iter().cloned(), &config)?;
    assert!(stream.validate().is_ok());

    let on = stream.events().iter().filter(|e| e.polarity.sign() > 0).count();
    println!(
        "{} frames -> {} events ({} ON, {} OFF), visible yawn {:?}",
        clip.frames.len(),
        stream.len(),
        on,
        stream.len() - on,
        clip.yawn
    );
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
