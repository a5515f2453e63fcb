//! Frame-to-event simulation with a per-pixel log-intensity contrast
//! threshold model.
//!
//! Each pixel keeps a reference log intensity. When the log intensity of a
//! new frame moves at least one threshold away from the reference, the pixel
//! emits one event per whole threshold crossed and the reference advances by
//! exactly that many thresholds; the sub-threshold remainder carries into the
//! next frame pair. Timestamps of the events a pixel emits within one frame
//! pair are spread evenly over `(t_prev, t_next]`.
//!
//! Noise, leak events and photoreceptor bandwidth are not modelled; output is
//! a pure function of the input frames.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::{Event, EventStream, Geometry, Polarity};

/// Luma weights (ITU-R BT.601).
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// Slack, in units of one threshold, for counting crossings that land on an
/// exact multiple of the threshold after floating-point rounding.
const CROSSING_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulatorConfig {
    pub theta_on: f64,
    pub theta_off: f64,
    pub linlog_knee: f64,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        SimulatorConfig { theta_on: 0.2, theta_off: 0.2, linlog_knee: 20.0 }
    }
}

impl SimulatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta_on > 0.0 && self.theta_on.is_finite()) {
            return Err(Error::precondition(format!("theta_on must be > 0, got {}", self.theta_on)));
        }
        if !(self.theta_off > 0.0 && self.theta_off.is_finite()) {
            return Err(Error::precondition(format!("theta_off must be > 0, got {}", self.theta_off)));
        }
        if !(0.0..=255.0).contains(&self.linlog_knee) {
            return Err(Error::precondition(format!(
                "linlog_knee must lie in [0, 255], got {}",
                self.linlog_knee
            )));
        }
        Ok(())
    }
}

/// A single-channel intensity frame with its capture timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedFrame {
    pub t_us: u64,
    pub width: usize,
    pub height: usize,
    /// Row-major intensities in `[0, 255]`.
    pub pixels: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl TimedFrame {
    pub fn new(t_us: u64, width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::precondition(format!(
                "frame buffer has {} values, expected {}x{}",
                pixels.len(),
                width,
                height
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=255.0).contains(*v)) {
            return Err(Error::precondition(format!("intensity {v} outside [0, 255]")));
        }
        Ok(TimedFrame { t_us, width, height, pixels })
    }

    pub fn from_gray_u8(t_us: u64, width: usize, height: usize, data: &[u8]) -> Result<Self> {
        Self::new(t_us, width, height, data.iter().map(|&v| v as f64).collect())
    }

    pub fn geometry(&self) -> Result<Geometry> {
        let w = u16::try_from(self.width).map_err(|_| Error::precondition("frame too wide"))?;
        let h = u16::try_from(self.height).map_err(|_| Error::precondition("frame too tall"))?;
        Ok(Geometry::new(w, h))
    }

    /// Cuts `rect` out of the frame (e.g. a fixed face region).
    pub fn crop(&self, rect: CropRect) -> Result<TimedFrame> {
        if rect.width == 0
            || rect.height == 0
            || rect.x + rect.width > self.width
            || rect.y + rect.height > self.height
        {
            return Err(Error::precondition(format!(
                "crop {:?} outside {}x{} frame",
                rect, self.width, self.height
            )));
        }
        let mut pixels = Vec::with_capacity(rect.width * rect.height);
        for row in rect.y..rect.y + rect.height {
            let start = row * self.width + rect.x;
            pixels.extend_from_slice(&self.pixels[start..start + rect.width]);
        }
        Ok(TimedFrame { t_us: self.t_us, width: rect.width, height: rect.height, pixels })
    }
}

/// Converts interleaved multi-channel pixels to luma. `channels` must be 3.
pub fn luma(data: &[f64], channels: usize) -> Result<Vec<f64>> {
    if channels != 3 {
        return Err(Error::precondition(format!("luma needs 3 channels, got {channels}")));
    }
    if !data.len().is_multiple_of(3) {
        return Err(Error::precondition("pixel buffer length is not a multiple of 3"));
    }
    Ok(data
        .chunks_exact(3)
        .map(|p| {
            let y = LUMA_WEIGHTS[0] * p[0] + LUMA_WEIGHTS[1] * p[1] + LUMA_WEIGHTS[2] * p[2];
            y.clamp(0.0, 255.0)
        })
        .collect())
}

/// Log intensity with a linear segment below `knee`, continuous at the knee
/// and zero at zero intensity.
#[inline]
pub fn log_intensity(intensity: f64, knee: f64) -> f64 {
    if intensity >= knee && intensity > 0.0 {
        intensity.ln()
    } else if knee > 0.0 {
        intensity / knee * knee.ln()
    } else {
        0.0
    }
}

/// Number of whole thresholds crossed by a log-intensity difference, with
/// its polarity. Returns `None` below threshold.
#[inline]
pub fn crossings(diff: f64, theta_on: f64, theta_off: f64) -> Option<(u32, Polarity)> {
    if diff > 0.0 {
        let n = (diff / theta_on + CROSSING_SLACK).floor();
        (n >= 1.0).then_some((n as u32, Polarity::On))
    } else if diff < 0.0 {
        let n = (-diff / theta_off + CROSSING_SLACK).floor();
        (n >= 1.0).then_some((n as u32, Polarity::Off))
    } else {
        None
    }
}

/// Per-pixel reference log intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelState {
    pub width: usize,
    pub height: usize,
    pub reference: Vec<f64>,
}

impl PixelState {
    pub fn from_frame(frame: &TimedFrame, config: &SimulatorConfig) -> Self {
        PixelState {
            width: frame.width,
            height: frame.height,
            reference: frame
                .pixels
                .iter()
                .map(|&v| log_intensity(v, config.linlog_knee))
                .collect(),
        }
    }
}

/// Timestamp of the `k`-th (1-based) of `n` events spread over `(t_prev, t_next]`.
#[inline]
pub fn spread_timestamp(t_prev: u64, t_next: u64, k: u32, n: u32) -> u64 {
    let dt = (t_next - t_prev) as u128;
    let offset = (k as u128 * dt).div_ceil(n as u128);
    t_prev + offset as u64
}

/// Advances `state` to `frame_next` and returns the events emitted over
/// `(t_prev_us, frame_next.t_us]`, sorted by timestamp (ties in raster order).
pub fn simulate_pair(
    state: &mut PixelState,
    frame_next: &TimedFrame,
    t_prev_us: u64,
    config: &SimulatorConfig,
) -> Result<Vec<Event>> {
    if frame_next.width != state.width || frame_next.height != state.height {
        return Err(Error::precondition(format!(
            "frame is {}x{}, state is {}x{}",
            frame_next.width, frame_next.height, state.width, state.height
        )));
    }
    if frame_next.t_us <= t_prev_us {
        return Err(Error::precondition(format!(
            "frame timestamp {} does not follow {}",
            frame_next.t_us, t_prev_us
        )));
    }
    let width = state.width;
    let t_next = frame_next.t_us;
    let cfg = *config;
    let rows: Vec<Vec<Event>> = state
        .reference
        .par_chunks_mut(width)
        .zip(frame_next.pixels.par_chunks(width))
        .enumerate()
        .map(|(y, (refs, pixels))| {
            let mut out = Vec::new();
            for (x, (reference, &intensity)) in refs.iter_mut().zip(pixels).enumerate() {
                let level = log_intensity(intensity, cfg.linlog_knee);
                let Some((n, polarity)) = crossings(level - *reference, cfg.theta_on, cfg.theta_off)
                else {
                    continue;
                };
                match polarity {
                    Polarity::On => *reference += n as f64 * cfg.theta_on,
                    Polarity::Off => *reference -= n as f64 * cfg.theta_off,
                }
                for k in 1..=n {
                    out.push(Event::new(
                        spread_timestamp(t_prev_us, t_next, k, n),
                        x as u16,
                        y as u16,
                        polarity,
                    ));
                }
            }
            out
        })
        .collect();
    let mut events: Vec<Event> = rows.into_iter().flatten().collect();
    events.sort_by_key(|e| e.t_us);
    Ok(events)
}

/// Incremental simulator: feed frames in timestamp order with [`push`](Simulator::push).
#[derive(Debug, Clone)]
pub struct Simulator {
    config: SimulatorConfig,
    state: Option<(PixelState, u64, Geometry)>,
    events: Vec<Event>,
}

impl Simulator {
    pub fn new(config: SimulatorConfig) -> Result<Self> {
        config.validate()?;
        Ok(Simulator { config, state: None, events: Vec::new() })
    }

    pub fn push(&mut self, frame: &TimedFrame) -> Result<usize> {
        match &mut self.state {
            None => {
                let geometry = frame.geometry()?;
                self.state = Some((PixelState::from_frame(frame, &self.config), frame.t_us, geometry));
                Ok(0)
            }
            Some((state, t_prev, _)) => {
                let emitted = simulate_pair(state, frame, *t_prev, &self.config)?;
                *t_prev = frame.t_us;
                let n = emitted.len();
                self.events.extend(emitted);
                Ok(n)
            }
        }
    }

    pub fn event_count(&self) -> usize {
        self.events.len()
    }

    pub fn finish(self) -> Result<EventStream> {
        match self.state {
            None => Err(Error::precondition("simulation needs at least one frame")),
            Some((_, _, geometry)) => Ok(EventStream::from_raw(geometry, self.events)),
        }
    }
}

/// Simulates a whole video. The first frame initialises the pixel state.
pub fn simulate_video<I>(frames: I, config: &SimulatorConfig) -> Result<EventStream>
where
    I: IntoIterator<Item = TimedFrame>,
{
    let mut sim = Simulator::new(*config)?;
    for frame in frames {
        sim.push(&frame)?;
    }
    sim.finish()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawVideoSidecar {
    pub width: usize,
    pub height: usize,
    pub frame_count: usize,
    pub timestamps_us: Vec<u64>,
}

/// Reads a raw planar 8-bit grayscale blob described by a JSON sidecar.
pub fn read_raw_video(blob: &Path, sidecar: &Path) -> Result<Vec<TimedFrame>> {
    let meta: RawVideoSidecar = serde_json::from_reader(BufReader::new(File::open(sidecar)?))?;
    if meta.timestamps_us.len() != meta.frame_count {
        return Err(Error::parse(format!(
            "sidecar lists {} timestamps for {} frames",
            meta.timestamps_us.len(),
            meta.frame_count
        )));
    }
    let mut data = Vec::new();
    File::open(blob)?.read_to_end(&mut data)?;
    let plane = meta.width * meta.height;
    let expected = plane * meta.frame_count;
    if data.len() != expected {
        return Err(crate::error::FormatError::Truncated {
            expected: expected as u64,
            found: data.len() as u64,
        }
        .into());
    }
    meta.timestamps_us
        .iter()
        .zip(data.chunks_exact(plane.max(1)))
        .map(|(&t, chunk)| TimedFrame::from_gray_u8(t, meta.width, meta.height, chunk))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub filename: String,
    pub t_us: u64,
}

/// Reads a `filename,t_us` manifest. A header row is optional.
pub fn read_frame_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != 2 {
            return Err(Error::parse(format!("manifest line {}: expected 2 fields", i + 1)));
        }
        match record[1].parse::<u64>() {
            Ok(t_us) => out.push(ManifestEntry { filename: record[0].to_string(), t_us }),
            Err(_) if i == 0 => continue,
            Err(e) => return Err(Error::parse(format!("manifest line {}: {}", i + 1, e))),
        }
    }
    Ok(out)
}

/// Lazily loads the frames listed in a manifest, converting colour images
/// to luma and applying an optional crop.
pub fn manifest_frames(
    dir: &Path,
    entries: Vec<ManifestEntry>,
    crop: Option<CropRect>,
) -> impl Iterator<Item = Result<TimedFrame>> {
    let dir: PathBuf = dir.to_path_buf();
    entries.into_iter().map(move |entry| {
        let path = dir.join(&entry.filename);
        let img = image::open(&path)?;
        let frame = image_to_frame(entry.t_us, &img)?;
        match crop {
            Some(rect) => frame.crop(rect),
            None => Ok(frame),
        }
    })
}

pub fn image_to_frame(t_us: u64, img: &image::DynamicImage) -> Result<TimedFrame> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        image::DynamicImage::ImageLuma8(g) => TimedFrame::from_gray_u8(t_us, w, h, g.as_raw()),
        other => {
            let rgb = other.to_rgb8();
            let values: Vec<f64> = rgb.as_raw().iter().map(|&v| v as f64).collect();
            TimedFrame::new(t_us, w, h, luma(&values, 3)?)
        }
    }
}

/// Writes a frame as an 8-bit grayscale PNG (values rounded half up).
pub fn save_frame_png(frame: &TimedFrame, path: &Path) -> Result<()> {
    let data: Vec<u8> = frame.pixels.iter().map(|&v| (v + 0.5).floor().clamp(0.0, 255.0) as u8).collect();
    let img = image::GrayImage::from_raw(frame.width as u32, frame.height as u32, data)
        .ok_or_else(|| Error::precondition("frame buffer size mismatch"))?;
    img.save(path)?;
    Ok(())
}
