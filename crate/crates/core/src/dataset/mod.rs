//! Labeled sequence construction from yawn annotations.
//!
//! A yawn sequence is a fixed span centred on the annotated yawn's midpoint.
//! A non-yawn sequence of the same span starts one span after the end of
//! each yawn sequence and is kept only if it overlaps no yawn sequence.

mod augment;
mod io;
mod split;
pub mod synth;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use augment::{augment, mirror_horizontal, rotate, AugmentParams, AugmentSpec};
pub use io::{
    read_annotations, read_dataset, write_annotations, write_dataset, ClipEntry, DatasetManifest,
    IndexRow,
};
pub use split::{split_by_subject, Partition, PartitionStats, SplitSpec, Splits};

use crate::error::{Error, Result};
use crate::event::EventStream;
use crate::framing::{self, FrameSequence};

pub const DEFAULT_SPAN_US: u64 = 10_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct YawnAnnotation {
    pub clip_id: String,
    pub subject_id: String,
    pub start_us: u64,
    pub duration_us: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Yawn,
    NonYawn,
}

impl Label {
    pub fn target(self) -> f64 {
        match self {
            Label::Yawn => 1.0,
            Label::NonYawn => 0.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Yawn => "yawn",
            Label::NonYawn => "non_yawn",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "yawn" => Some(Label::Yawn),
            "non_yawn" => Some(Label::NonYawn),
            _ => None,
        }
    }
}

/// Half-open time interval `[t0_us, t1_us)` on the recording clock. May
/// start before the recording epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Window {
    pub t0_us: i64,
    pub t1_us: i64,
}

impl Window {
    pub fn intersects(&self, other: &Window) -> bool {
        self.t0_us < other.t1_us && other.t0_us < self.t1_us
    }

    pub fn len_us(&self) -> u64 {
        (self.t1_us - self.t0_us) as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct YawnWindow {
    pub window: Window,
    /// The yawn is longer than the span and sticks out of the window.
    pub clipped: bool,
}

pub fn yawn_window(a: &YawnAnnotation, span_us: u64) -> Result<YawnWindow> {
    if a.duration_us == 0 {
        return Err(Error::precondition(format!(
            "annotation at {} us in clip {:?} has zero duration",
            a.start_us, a.clip_id
        )));
    }
    if span_us == 0 {
        return Err(Error::precondition("window span must be positive"));
    }
    let mid = a.start_us as i64 + (a.duration_us / 2) as i64;
    let t0 = mid - (span_us / 2) as i64;
    Ok(YawnWindow {
        window: Window { t0_us: t0, t1_us: t0 + span_us as i64 },
        clipped: a.duration_us > span_us,
    })
}

/// Candidate `[end + span, end + 2*span)`, or `None` when it overlaps any
/// yawn window.
pub fn non_yawn_window(prev_yawn_window_end_us: i64, span_us: u64, yawn_windows: &[Window]) -> Option<Window> {
    let t0 = prev_yawn_window_end_us + span_us as i64;
    let candidate = Window { t0_us: t0, t1_us: t0 + span_us as i64 };
    (!yawn_windows.iter().any(|w| w.intersects(&candidate))).then_some(candidate)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SequenceConfig {
    pub span_us: u64,
    pub dt_us: u64,
    pub frames: usize,
    pub clip: i32,
}

impl Default for SequenceConfig {
    fn default() -> Self {
        SequenceConfig {
            span_us: DEFAULT_SPAN_US,
            dt_us: framing::DEFAULT_WINDOW_US,
            frames: framing::DEFAULT_FRAME_COUNT,
            clip: framing::DEFAULT_CLIP,
        }
    }
}

impl SequenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dt_us == 0 || self.frames == 0 || self.clip <= 0 {
            return Err(Error::precondition("dt_us, frames and clip must be positive"));
        }
        if self.dt_us * self.frames as u64 != self.span_us {
            return Err(Error::precondition(format!(
                "{} frames of {} us do not cover the {} us span",
                self.frames, self.dt_us, self.span_us
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSequence {
    pub id: String,
    pub sequence: FrameSequence,
    pub label: Label,
    pub subject_id: String,
    pub source_clip_id: String,
    /// Part of the window lies outside the recording and was filled with
    /// empty (mid-gray) frames.
    pub padded: bool,
}

/// Builds one yawn sequence per annotation plus the offset non-yawn
/// sequences. All annotations must belong to the recording `stream`, whose
/// valid time range is `[0, recording_end_us)`; windows reaching outside it
/// are zero-event padded and flagged.
pub fn build_sequences(
    stream: &EventStream,
    recording_end_us: u64,
    annotations: &[YawnAnnotation],
    cfg: &SequenceConfig,
) -> Result<Vec<LabeledSequence>> {
    cfg.validate()?;
    if annotations.windows(2).any(|w| w[1].start_us < w[0].start_us) {
        return Err(Error::precondition("annotations must be sorted by start time"));
    }
    let yawns = annotations
        .iter()
        .map(|a| yawn_window(a, cfg.span_us))
        .collect::<Result<Vec<_>>>()?;
    let windows: Vec<Window> = yawns.iter().map(|y| y.window).collect();

    let make = |a: &YawnAnnotation, i: usize, label: Label, w: Window| -> Result<LabeledSequence> {
        let sequence = framing::frame_by_duration(stream, w.t0_us, cfg.dt_us, cfg.frames, cfg.clip)?;
        let suffix = match label {
            Label::Yawn => "y",
            Label::NonYawn => "n",
        };
        Ok(LabeledSequence {
            id: format!("{}_{:04}{}", a.clip_id, i, suffix),
            sequence,
            label,
            subject_id: a.subject_id.clone(),
            source_clip_id: a.clip_id.clone(),
            padded: w.t0_us < 0 || w.t1_us > recording_end_us as i64,
        })
    };

    let mut out = Vec::new();
    for (i, (a, y)) in annotations.iter().zip(&yawns).enumerate() {
        out.push(make(a, i, Label::Yawn, y.window)?);
        if let Some(w) = non_yawn_window(y.window.t1_us, cfg.span_us, &windows) {
            out.push(make(a, i, Label::NonYawn, w)?);
        }
    }
    Ok(out)
}

/// Groups annotations by clip id, each group sorted by start time.
pub fn group_by_clip(annotations: &[YawnAnnotation]) -> BTreeMap<String, Vec<YawnAnnotation>> {
    let mut map: BTreeMap<String, Vec<YawnAnnotation>> = BTreeMap::new();
    for a in annotations {
        map.entry(a.clip_id.clone()).or_default().push(a.clone());
    }
    for v in map.values_mut() {
        v.sort_by_key(|a| a.start_us);
    }
    map
}

/// Mean, sample standard deviation and maximum of annotated yawn durations,
/// in seconds.
pub fn duration_stats(annotations: &[YawnAnnotation]) -> Option<(f64, f64, f64)> {
    if annotations.is_empty() {
        return None;
    }
    let d: Vec<f64> = annotations.iter().map(|a| a.duration_us as f64 * 1e-6).collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = if d.len() > 1 { d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    let max = d.iter().cloned().fold(f64::MIN, f64::max);
    Some((mean, var.sqrt(), max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::Geometry;

    fn ann(start_s: f64, dur_s: f64) -> YawnAnnotation {
        YawnAnnotation {
            clip_id: "c".into(),
            subject_id: "s".into(),
            start_us: (start_s * 1e6) as u64,
            duration_us: (dur_s * 1e6) as u64,
        }
    }

    #[test]
    fn yawn_window_is_centred() {
        let w = yawn_window(&ann(100.0, 4.0), DEFAULT_SPAN_US).unwrap();
        assert_eq!(w.window, Window { t0_us: 97_000_000, t1_us: 107_000_000 });
        assert!(!w.clipped);

        let longest = yawn_window(&ann(50.0, 9.63), DEFAULT_SPAN_US).unwrap();
        assert!(!longest.clipped);
        assert!(longest.window.t0_us <= 50_000_000 && longest.window.t1_us >= 59_630_000);

        assert!(yawn_window(&ann(0.0, 0.0), DEFAULT_SPAN_US).is_err());
        assert!(yawn_window(&ann(0.0, 11.0), DEFAULT_SPAN_US).unwrap().clipped);
    }

    #[test]
    fn non_yawn_offset_and_collision() {
        let span = DEFAULT_SPAN_US;
        let first = Window { t0_us: 97_000_000, t1_us: 107_000_000 };
        assert_eq!(
            non_yawn_window(first.t1_us, span, &[first]),
            Some(Window { t0_us: 117_000_000, t1_us: 127_000_000 })
        );
        let next = Window { t0_us: 120_000_000, t1_us: 130_000_000 };
        assert_eq!(non_yawn_window(first.t1_us, span, &[first, next]), None);
        // touching at the boundary is not a collision
        let touching = Window { t0_us: 127_000_000, t1_us: 137_000_000 };
        assert!(non_yawn_window(first.t1_us, span, &[first, touching]).is_some());
    }

    #[test]
    fn one_annotation_gives_yawn_and_non_yawn() {
        let s = EventStream::empty(Geometry::new(4, 4));
        let seqs = build_sequences(&s, 200_000_000, &[ann(100.0, 4.0)], &SequenceConfig::default()).unwrap();
        assert_eq!(seqs.len(), 2);
        assert_eq!(seqs[0].label, Label::Yawn);
        assert_eq!(seqs[1].label, Label::NonYawn);
        assert_eq!(seqs[1].sequence.t_start_us, 117_000_000);
        for s in &seqs {
            assert_eq!(s.sequence.len(), 100);
            assert_eq!(s.sequence.duration_us(), 10_000_000);
            assert!(!s.padded);
        }
    }

    #[test]
    fn back_to_back_annotations_suppress_the_colliding_non_yawn() {
        let s = EventStream::empty(Geometry::new(2, 2));
        let seqs = build_sequences(
            &s,
            500_000_000,
            &[ann(100.0, 4.0), ann(112.0, 4.0)],
            &SequenceConfig::default(),
        )
        .unwrap();
        let labels: Vec<_> = seqs.iter().map(|s| (s.id.as_str(), s.label)).collect();
        assert_eq!(
            labels,
            vec![("c_0000y", Label::Yawn), ("c_0001y", Label::Yawn), ("c_0001n", Label::NonYawn)]
        );
    }

    #[test]
    fn windows_outside_recording_are_flagged() {
        let s = EventStream::empty(Geometry::new(2, 2));
        let seqs = build_sequences(&s, 20_000_000, &[ann(1.0, 2.0)], &SequenceConfig::default()).unwrap();
        assert!(seqs[0].padded);
        assert_eq!(seqs[0].sequence.t_start_us, -3_000_000);
        assert!(seqs[1].padded);
        assert!(seqs[1].sequence.frames.iter().all(|f| f.pixels.iter().all(|&v| v == 128)));
    }

    #[test]
    fn unsorted_annotations_rejected() {
        let s = EventStream::empty(Geometry::new(2, 2));
        assert!(build_sequences(&s, 1, &[ann(50.0, 1.0), ann(10.0, 1.0)], &SequenceConfig::default()).is_err());
    }

    #[test]
    fn full_scale_counts() {
        let yawns = 481usize;
        let non_yawns = 471usize;
        let cfg = SequenceConfig::default();
        assert_eq!(yawns + non_yawns, 952);
        assert_eq!((yawns + non_yawns) * cfg.frames, 95_200);
    }

    #[test]
    fn duration_statistics() {
        let (mean, sd, max) = duration_stats(&[ann(0.0, 2.0), ann(20.0, 4.0), ann(40.0, 6.0)]).unwrap();
        assert!((mean - 4.0).abs() < 1e-12);
        assert!((sd - 2.0).abs() < 1e-12);
        assert!((max - 6.0).abs() < 1e-12);
        assert!(duration_stats(&[]).is_none());
    }
}
