//! Event accumulation into 2D frames: fixed-duration and fixed-count
//! grouping, clip-and-normalize to 8 bits, and area-relation resampling.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, FormatError, Result};
use crate::event::EventStream;

pub const DEFAULT_WINDOW_US: u64 = 100_000;
pub const DEFAULT_FRAME_COUNT: usize = 100;
pub const DEFAULT_CLIP: i32 = 10;

/// Per-pixel sum of event polarities over `[t0_us, t0_us + dt_us)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignedFrame {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<i32>,
    pub t0_us: i64,
    pub dt_us: u64,
}

impl SignedFrame {
    pub fn zeros(width: usize, height: usize, t0_us: i64, dt_us: u64) -> Self {
        SignedFrame { width, height, pixels: vec![0; width * height], t0_us, dt_us }
    }

    pub fn get(&self, x: usize, y: usize) -> i32 {
        self.pixels[y * self.width + x]
    }

    pub fn sum(&self) -> i64 {
        self.pixels.iter().map(|&v| v as i64).sum()
    }
}

/// 8-bit frame; mid-gray (128) means no net events.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NormalizedFrame {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl NormalizedFrame {
    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        NormalizedFrame { width, height, pixels: vec![value; width * height] }
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }
}

/// Fixed-rate stack of normalized frames. Frame `k` covers
/// `[t_start_us + k*dt_us, t_start_us + (k+1)*dt_us)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameSequence {
    pub width: usize,
    pub height: usize,
    pub t_start_us: i64,
    pub dt_us: u64,
    pub frames: Vec<NormalizedFrame>,
}

impl FrameSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn duration_us(&self) -> u64 {
        self.dt_us * self.frames.len() as u64
    }

    pub fn window(&self, k: usize) -> (i64, i64) {
        let t0 = self.t_start_us + (k as u64 * self.dt_us) as i64;
        (t0, t0 + self.dt_us as i64)
    }

    pub fn sidecar(&self) -> SequenceSidecar {
        SequenceSidecar {
            count: self.frames.len(),
            height: self.height,
            width: self.width,
            dt_us: self.dt_us,
            t_start_us: self.t_start_us,
        }
    }

    /// Resamples every frame to `out_w`x`out_h` with [`downsample_area`].
    pub fn resized(&self, out_w: usize, out_h: usize) -> Result<FrameSequence> {
        let frames = self
            .frames
            .iter()
            .map(|f| downsample_area(f, out_w, out_h))
            .collect::<Result<Vec<_>>>()?;
        Ok(FrameSequence { width: out_w, height: out_h, frames, ..*self })
    }
}

fn clamp_range(stream: &EventStream, t0: i64, t1: i64) -> std::ops::Range<usize> {
    if t1 <= 0 || t1 <= t0 {
        return 0..0;
    }
    stream.range_indices(t0.max(0) as u64, t1 as u64)
}

pub fn accumulate_window(stream: &EventStream, t0_us: i64, dt_us: u64) -> Result<SignedFrame> {
    if dt_us == 0 {
        return Err(Error::precondition("window duration must be positive"));
    }
    let g = stream.geometry();
    let mut frame = SignedFrame::zeros(g.width as usize, g.height as usize, t0_us, dt_us);
    for e in &stream.events()[clamp_range(stream, t0_us, t0_us + dt_us as i64)] {
        frame.pixels[e.y as usize * frame.width + e.x as usize] += e.polarity.sign();
    }
    Ok(frame)
}

/// Accumulates `n` contiguous windows in a single pass over the stream.
pub fn accumulate_windows(
    stream: &EventStream,
    t_start_us: i64,
    dt_us: u64,
    n: usize,
) -> Result<Vec<SignedFrame>> {
    if dt_us == 0 {
        return Err(Error::precondition("window duration must be positive"));
    }
    if n == 0 {
        return Err(Error::precondition("frame count must be at least 1"));
    }
    let g = stream.geometry();
    let (w, h) = (g.width as usize, g.height as usize);
    let mut frames: Vec<SignedFrame> = (0..n)
        .map(|k| SignedFrame::zeros(w, h, t_start_us + (k as u64 * dt_us) as i64, dt_us))
        .collect();
    let t_end = t_start_us + (n as u64 * dt_us) as i64;
    for e in &stream.events()[clamp_range(stream, t_start_us, t_end)] {
        let k = ((e.t_us as i64 - t_start_us) as u64 / dt_us) as usize;
        frames[k].pixels[e.y as usize * w + e.x as usize] += e.polarity.sign();
    }
    Ok(frames)
}

#[inline]
fn normalize_value(v: i32, clip: i32) -> u8 {
    let c = v.clamp(-clip, clip) as i64;
    let num = (c + clip as i64) * 255;
    let den = 2 * clip as i64;
    ((2 * num + den) / (2 * den)) as u8
}

/// Clips to `[-clip, clip]` and maps affinely onto `[0, 255]`, rounding half up.
pub fn normalize(frame: &SignedFrame, clip: i32) -> Result<NormalizedFrame> {
    if clip <= 0 {
        return Err(Error::precondition(format!("clip must be positive, got {clip}")));
    }
    Ok(NormalizedFrame {
        width: frame.width,
        height: frame.height,
        pixels: frame.pixels.iter().map(|&v| normalize_value(v, clip)).collect(),
    })
}

pub fn frame_by_duration(
    stream: &EventStream,
    t_start_us: i64,
    dt_us: u64,
    n: usize,
    clip: i32,
) -> Result<FrameSequence> {
    if clip <= 0 {
        return Err(Error::precondition(format!("clip must be positive, got {clip}")));
    }
    let signed = accumulate_windows(stream, t_start_us, dt_us, n)?;
    let g = stream.geometry();
    Ok(FrameSequence {
        width: g.width as usize,
        height: g.height as usize,
        t_start_us,
        dt_us,
        frames: signed.iter().map(|f| normalize(f, clip)).collect::<Result<_>>()?,
    })
}

/// Groups consecutive runs of exactly `events_per_frame` events. A trailing
/// partial group is dropped.
pub fn frame_by_count(stream: &EventStream, events_per_frame: usize) -> Result<Vec<SignedFrame>> {
    if events_per_frame == 0 {
        return Err(Error::precondition("events_per_frame must be at least 1"));
    }
    let g = stream.geometry();
    let (w, h) = (g.width as usize, g.height as usize);
    Ok(stream
        .events()
        .chunks_exact(events_per_frame)
        .map(|group| {
            let t0 = group[0].t_us;
            let t1 = group[group.len() - 1].t_us;
            // dt spans first..=last timestamp so the half-open window holds the group
            let mut f = SignedFrame::zeros(w, h, t0 as i64, t1 - t0 + 1);
            for e in group {
                f.pixels[e.y as usize * w + e.x as usize] += e.polarity.sign();
            }
            f
        })
        .collect())
}

/// Area-relation resampling with exact integer arithmetic: each output pixel
/// is the overlap-weighted mean of the source pixels it covers, rounded half up.
pub fn downsample_area(frame: &NormalizedFrame, out_w: usize, out_h: usize) -> Result<NormalizedFrame> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::precondition("output dimensions must be at least 1"));
    }
    let (w, h) = (frame.width, frame.height);
    if w == out_w && h == out_h {
        return Ok(frame.clone());
    }
    if w == 0 || h == 0 {
        return Err(Error::precondition("cannot resample an empty frame"));
    }
    let xs = overlap_table(w, out_w);
    let ys = overlap_table(h, out_h);
    let den = (w * h) as u64;
    let mut row_acc = vec![0u64; w];
    let mut pixels = Vec::with_capacity(out_w * out_h);
    for y_weights in &ys {
        row_acc.iter_mut().for_each(|v| *v = 0);
        for &(sy, wy) in y_weights {
            let row = &frame.pixels[sy * w..(sy + 1) * w];
            for (acc, &v) in row_acc.iter_mut().zip(row) {
                *acc += wy * v as u64;
            }
        }
        for x_weights in &xs {
            let num: u64 = x_weights.iter().map(|&(sx, wx)| wx * row_acc[sx]).sum();
            pixels.push(((2 * num + den) / (2 * den)) as u8);
        }
    }
    Ok(NormalizedFrame { width: out_w, height: out_h, pixels })
}

/// For each output index, the source indices it overlaps and the overlap
/// length, measured in units where a source pixel spans `out` and an output
/// pixel spans `src`.
fn overlap_table(src: usize, out: usize) -> Vec<Vec<(usize, u64)>> {
    (0..out)
        .map(|o| {
            let lo = o * src;
            let hi = (o + 1) * src;
            let first = lo / out;
            let last = (hi - 1) / out;
            (first..=last)
                .filter_map(|s| {
                    let a = lo.max(s * out);
                    let b = hi.min((s + 1) * out);
                    (b > a).then_some((s, (b - a) as u64))
                })
                .collect()
        })
        .collect()
}

/// JSON sidecar of the frame-sequence container.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceSidecar {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub dt_us: u64,
    pub t_start_us: i64,
}

/// Writes `<stem>.u8` (frames back to back, row-major) and `<stem>.json`.
pub fn write_sequence(seq: &FrameSequence, dir: &Path, stem: &str) -> Result<()> {
    let mut blob = BufWriter::new(File::create(dir.join(format!("{stem}.u8")))?);
    for f in &seq.frames {
        blob.write_all(&f.pixels)?;
    }
    blob.flush()?;
    let side = serde_json::to_vec_pretty(&seq.sidecar())?;
    std::fs::write(dir.join(format!("{stem}.json")), side)?;
    Ok(())
}

pub fn read_sequence(dir: &Path, stem: &str) -> Result<FrameSequence> {
    let side: SequenceSidecar =
        serde_json::from_reader(BufReader::new(File::open(dir.join(format!("{stem}.json")))?))?;
    let mut data = Vec::new();
    File::open(dir.join(format!("{stem}.u8")))?.read_to_end(&mut data)?;
    let plane = side.width * side.height;
    let expected = plane * side.count;
    if data.len() != expected {
        return Err(FormatError::Truncated { expected: expected as u64, found: data.len() as u64 }.into());
    }
    let frames = if plane == 0 {
        vec![NormalizedFrame { width: side.width, height: side.height, pixels: Vec::new() }; side.count]
    } else {
        data.chunks_exact(plane)
            .map(|c| NormalizedFrame { width: side.width, height: side.height, pixels: c.to_vec() })
            .collect()
    };
    Ok(FrameSequence {
        width: side.width,
        height: side.height,
        t_start_us: side.t_start_us,
        dt_us: side.dt_us,
        frames,
    })
}

pub fn save_frame_png(frame: &NormalizedFrame, path: &Path) -> Result<()> {
    let img = image::GrayImage::from_raw(frame.width as u32, frame.height as u32, frame.pixels.clone())
        .ok_or_else(|| Error::precondition("frame buffer size mismatch"))?;
    img.save(path)?;
    Ok(())
}

/// Exports every frame as `<prefix>_<k>.png`; returns the written paths.
pub fn render_sequence(seq: &FrameSequence, dir: &Path, prefix: &str) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir)?;
    seq.frames
        .iter()
        .enumerate()
        .map(|(k, f)| {
            let path = dir.join(format!("{prefix}_{k:04}.png"));
            save_frame_png(f, &path)?;
            Ok(path)
        })
        .collect()
}
