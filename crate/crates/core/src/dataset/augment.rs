//! Sequence-consistent geometric augmentation.
//!
//! Parameters are drawn once per sequence from a generator keyed by
//! `(seed, sequence_index)` and the same transform is applied to every frame.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::LabeledSequence;
use crate::error::{Error, Result};
use crate::framing::{downsample_area, FrameSequence, NormalizedFrame};

/// Value used for pixels rotated in from outside the frame (no events).
const FILL: f64 = 128.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentSpec {
    pub rotation_prob: f64,
    pub rotation_range_deg: f64,
    pub mirror_prob: f64,
    /// Crop side bounds as fractions of the frame's short side.
    pub crop_min_fraction: f64,
    pub crop_max_fraction: f64,
    pub seed: u64,
    /// Square output side; `None` keeps the input dimensions.
    pub output_size: Option<usize>,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec {
            rotation_prob: 0.5,
            rotation_range_deg: 10.0,
            mirror_prob: 0.5,
            crop_min_fraction: 0.8,
            crop_max_fraction: 1.0,
            seed: 0,
            output_size: None,
        }
    }
}

impl AugmentSpec {
    /// A spec that never changes its input.
    pub fn identity() -> Self {
        AugmentSpec {
            rotation_prob: 0.0,
            mirror_prob: 0.0,
            crop_min_fraction: 1.0,
            crop_max_fraction: 1.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("rotation_prob", self.rotation_prob), ("mirror_prob", self.mirror_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::precondition(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if !(self.crop_min_fraction > 0.0
            && self.crop_min_fraction <= self.crop_max_fraction
            && self.crop_max_fraction <= 1.0)
        {
            return Err(Error::precondition(format!(
                "crop fractions must satisfy 0 < min <= max <= 1, got [{}, {}]",
                self.crop_min_fraction, self.crop_max_fraction
            )));
        }
        if self.rotation_range_deg < 0.0 || !self.rotation_range_deg.is_finite() {
            return Err(Error::precondition("rotation range must be a non-negative angle"));
        }
        if self.output_size == Some(0) {
            return Err(Error::precondition("output size must be positive"));
        }
        Ok(())
    }

    /// Draws the transform for one sequence of `width`x`height` frames.
    pub fn draw(&self, sequence_index: u64, width: usize, height: usize) -> AugmentParams {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(sequence_index);
        // fixed draw order keeps parameters stable when a probability changes
        let rotate_u: f64 = rng.gen();
        let angle_u: f64 = rng.gen();
        let mirror_u: f64 = rng.gen();
        let size_u: f64 = rng.gen();
        let pos_x: f64 = (rng.gen::<f64>() + rng.gen::<f64>()) / 2.0;
        let pos_y: f64 = (rng.gen::<f64>() + rng.gen::<f64>()) / 2.0;

        let rotation_deg = (rotate_u < self.rotation_prob)
            .then_some((2.0 * angle_u - 1.0) * self.rotation_range_deg);
        let short = width.min(height) as f64;
        let fraction = self.crop_min_fraction + size_u * (self.crop_max_fraction - self.crop_min_fraction);
        let side = ((fraction * short).round() as usize).clamp(1, width.min(height));
        AugmentParams {
            rotation_deg,
            mirror: mirror_u < self.mirror_prob,
            crop_x: (pos_x * (width - side) as f64).round() as usize,
            crop_y: (pos_y * (height - side) as f64).round() as usize,
            crop_side: side,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub rotation_deg: Option<f64>,
    pub mirror: bool,
    pub crop_x: usize,
    pub crop_y: usize,
    pub crop_side: usize,
}

impl AugmentParams {
    pub fn apply(&self, frame: &NormalizedFrame, out_w: usize, out_h: usize) -> Result<NormalizedFrame> {
        let mut f = match self.rotation_deg {
            Some(deg) if deg != 0.0 => rotate(frame, deg),
            _ => frame.clone(),
        };
        if self.mirror {
            f = mirror_horizontal(&f);
        }
        let cropped = crop(&f, self.crop_x, self.crop_y, self.crop_side)?;
        downsample_area(&cropped, out_w, out_h)
    }
}

/// Reflects a frame about its vertical axis.
pub fn mirror_horizontal(frame: &NormalizedFrame) -> NormalizedFrame {
    let mut pixels = frame.pixels.clone();
    for row in pixels.chunks_exact_mut(frame.width.max(1)) {
        row.reverse();
    }
    NormalizedFrame { pixels, ..*frame }
}

/// Rotates about the frame centre with bilinear sampling; uncovered pixels
/// take the no-event value.
pub fn rotate(frame: &NormalizedFrame, degrees: f64) -> NormalizedFrame {
    let (w, h) = (frame.width, frame.height);
    let (sin, cos) = degrees.to_radians().sin_cos();
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let sample = |x: isize, y: isize| -> f64 {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            FILL
        } else {
            frame.pixels[y as usize * w + x as usize] as f64
        }
    };
    let mut pixels = Vec::with_capacity(w * h);
    for oy in 0..h {
        for ox in 0..w {
            let dx = ox as f64 - cx;
            let dy = oy as f64 - cy;
            // inverse rotation maps the output pixel back into the source
            let sx = cos * dx + sin * dy + cx;
            let sy = -sin * dx + cos * dy + cy;
            let x0 = sx.floor();
            let y0 = sy.floor();
            let fx = sx - x0;
            let fy = sy - y0;
            let (x0, y0) = (x0 as isize, y0 as isize);
            let v = (1.0 - fy) * ((1.0 - fx) * sample(x0, y0) + fx * sample(x0 + 1, y0))
                + fy * ((1.0 - fx) * sample(x0, y0 + 1) + fx * sample(x0 + 1, y0 + 1));
            pixels.push((v + 0.5).floor().clamp(0.0, 255.0) as u8);
        }
    }
    NormalizedFrame { width: w, height: h, pixels }
}

fn crop(frame: &NormalizedFrame, x: usize, y: usize, side: usize) -> Result<NormalizedFrame> {
    if x + side > frame.width || y + side > frame.height || side == 0 {
        return Err(Error::precondition("crop window outside frame"));
    }
    if x == 0 && y == 0 && side == frame.width && side == frame.height {
        return Ok(frame.clone());
    }
    let mut pixels = Vec::with_capacity(side * side);
    for row in y..y + side {
        pixels.extend_from_slice(&frame.pixels[row * frame.width + x..row * frame.width + x + side]);
    }
    Ok(NormalizedFrame { width: side, height: side, pixels })
}

/// Augments one sequence; `sequence_index` keys the per-sequence generator.
pub fn augment(seq: &LabeledSequence, spec: &AugmentSpec, sequence_index: u64) -> Result<LabeledSequence> {
    spec.validate()?;
    let s = &seq.sequence;
    let (out_w, out_h) = match spec.output_size {
        Some(n) => (n, n),
        None => (s.width, s.height),
    };
    if s.width == 0 || s.height == 0 {
        return Err(Error::precondition("cannot augment empty frames"));
    }
    let params = spec.draw(sequence_index, s.width, s.height);
    let frames = s
        .frames
        .iter()
        .map(|f| params.apply(f, out_w, out_h))
        .collect::<Result<Vec<_>>>()?;
    Ok(LabeledSequence {
        sequence: FrameSequence { width: out_w, height: out_h, frames, ..*s },
        ..seq.clone()
    })
}
