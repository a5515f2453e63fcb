// Accumulates events into fixed-duration and fixed-count frames, then
// downsamples, stores and renders them.

use std::error::Error;

use evyawn::dataset::synth::{synth_clip, ClipKind};
use evyawn::framing::{self, downsample_area, frame_by_count, frame_by_duration};
use evyawn::simulator::{simulate_video, SimulatorConfig};
use evyawn::Geometry;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let clip = synth_clip(ClipKind::SpeechLike, Geometry::new(64, 64), 2_000_000, 5)?;
    let stream = simulate_video(clip.frames.iter().cloned(), &SimulatorConfig::default())?;

    let seq = frame_by_duration(&stream, 0, 100_000, 20, 10)?;
    let busiest = seq
        .frames
        .iter()
        .map(|f| f.pixels.iter().filter(|&&v| v != 128).count())
        .max()
        .unwrap_or(0);
    let by_count = frame_by_count(&stream, 100)?;
    let small = downsample_area(&seq.frames[10], 32, 32)?;

    let dir = tempfile::tempdir()?;
    framing::write_sequence(&seq, dir.path(), "clip")?;
    assert_eq!(framing::read_sequence(dir.path(), "clip")?, seq);
    let pngs = framing::render_sequence(&seq, &dir.path().join("png"), "frame")?;

    println!(
        "{} duration frames (busiest has {busiest} active pixels), {} count frames, {}x{} downsample, {} PNGs",
        seq.len(),
        by_count.len(),
        small.width,
        small.height,
        pngs.len()
    );
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
