//! Synthetic face clips for end-to-end runs without recorded video.
//!
//! A clip renders a bright face disc with dark eyes and a dark mouth ellipse
//! on a darker background. `YawnLike` performs one slow open-hold-close of
//! the mouth (about 4 s), `SpeechLike` oscillates the mouth by a small amount
//! at 3-5 Hz in bursts, `Still` only drifts by a fraction of a pixel.
//! Sessions chain clips into a long recording with yawn annotations so the
//! dataset rules can be applied to them.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use rayon::prelude::*;

use super::{build_sequences, LabeledSequence, SequenceConfig, YawnAnnotation};
use crate::error::{Error, Result};
use crate::event::{EventStream, Geometry};
use crate::simulator::{Simulator, SimulatorConfig, TimedFrame};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipKind {
    YawnLike,
    SpeechLike,
    Still,
}

impl ClipKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ClipKind::YawnLike => "yawn_like",
            ClipKind::SpeechLike => "speech_like",
            ClipKind::Still => "still",
        }
    }
}

/// Static appearance of one synthetic subject.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceModel {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
    pub background: f64,
    pub skin: f64,
    pub feature: f64,
    pub mouth_dy: f64,
    pub mouth_half_width: f64,
    pub mouth_rest_half_height: f64,
    pub mouth_max_half_height: f64,
    pub eye_dx: f64,
    pub eye_dy: f64,
    pub eye_half_width: f64,
    pub eye_half_height: f64,
}

impl FaceModel {
    pub fn random<R: Rng>(width: usize, height: usize, rng: &mut R) -> Self {
        let short = width.min(height) as f64;
        let radius = short * rng.gen_range(0.33..0.40);
        FaceModel {
            cx: width as f64 / 2.0 + rng.gen_range(-0.05..0.05) * short,
            cy: height as f64 / 2.0 + rng.gen_range(-0.05..0.05) * short,
            radius,
            background: rng.gen_range(35.0..70.0),
            skin: rng.gen_range(140.0..190.0),
            feature: rng.gen_range(20.0..40.0),
            mouth_dy: radius * rng.gen_range(0.40..0.50),
            mouth_half_width: radius * rng.gen_range(0.28..0.38),
            mouth_rest_half_height: (radius * 0.03).max(0.4),
            mouth_max_half_height: radius * rng.gen_range(0.30..0.38),
            eye_dx: radius * rng.gen_range(0.32..0.40),
            eye_dy: radius * rng.gen_range(0.22..0.30),
            eye_half_width: radius * 0.14,
            eye_half_height: radius * 0.07,
        }
    }
}

/// Dynamic facial state at one instant.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FaceState {
    pub dx: f64,
    pub dy: f64,
    /// 0 = resting, 1 = fully open.
    pub mouth_open: f64,
    /// 1 = open, 0 = closed.
    pub eye_open: f64,
}

/// Fraction of the pixel centred at `(x, y)` covered by an ellipse, from a
/// first-order signed-distance estimate. Smooth in the ellipse parameters.
#[inline]
fn ellipse_coverage(x: f64, y: f64, cx: f64, cy: f64, a: f64, b: f64) -> f64 {
    let dx = x - cx;
    let dy = y - cy;
    // cheap reject outside the bounding box
    if dx.abs() > a + 1.0 || dy.abs() > b + 1.0 {
        return 0.0;
    }
    let f = dx * dx / (a * a) + dy * dy / (b * b) - 1.0;
    let gx = 2.0 * dx / (a * a);
    let gy = 2.0 * dy / (b * b);
    let g = (gx * gx + gy * gy).sqrt();
    if g < 1e-12 {
        return if f <= 0.0 { 1.0 } else { 0.0 };
    }
    (0.5 - f / g).clamp(0.0, 1.0)
}

/// Renders with analytic edge coverage; values lie in `[0, 255]`.
pub fn render_face(face: &FaceModel, state: &FaceState, width: usize, height: usize) -> Vec<f64> {
    let cx = face.cx + state.dx;
    let cy = face.cy + state.dy;
    let mouth_b = face.mouth_rest_half_height
        + state.mouth_open.clamp(0.0, 1.0) * (face.mouth_max_half_height - face.mouth_rest_half_height);
    let eye_b = (face.eye_half_height * state.eye_open.clamp(0.0, 1.0)).max(0.05);
    let mouth_cy = cy + face.mouth_dy + 0.5 * (mouth_b - face.mouth_rest_half_height);
    let eye_cy = cy - face.eye_dy;
    let mut out = Vec::with_capacity(width * height);
    for py in 0..height {
        let y = py as f64 + 0.5;
        for px in 0..width {
            let x = px as f64 + 0.5;
            let dx = x - cx;
            let dy = y - cy;
            let face_cov = (face.radius - (dx * dx + dy * dy).sqrt() + 0.5).clamp(0.0, 1.0);
            let mut v = face.background;
            if face_cov > 0.0 {
                // soft top-down shading
                let skin = face.skin * (1.0 - 0.12 * dy / face.radius);
                let features = ellipse_coverage(x, y, cx, mouth_cy, face.mouth_half_width, mouth_b)
                    + ellipse_coverage(x, y, cx - face.eye_dx, eye_cy, face.eye_half_width, eye_b)
                    + ellipse_coverage(x, y, cx + face.eye_dx, eye_cy, face.eye_half_width, eye_b);
                let f = features.min(1.0);
                let inner = skin * (1.0 - f) + face.feature * f;
                v = v * (1.0 - face_cov) + inner * face_cov;
            }
            out.push(v.clamp(0.0, 255.0));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct YawnShape {
    start_us: u64,
    duration_us: u64,
}

impl YawnShape {
    fn opening(&self, t_us: u64) -> f64 {
        if t_us < self.start_us || t_us >= self.start_us + self.duration_us {
            return 0.0;
        }
        let u = (t_us - self.start_us) as f64 / self.duration_us as f64;
        let smooth = |s: f64| s * s * (3.0 - 2.0 * s);
        if u < 0.3 {
            smooth(u / 0.3)
        } else if u < 0.65 {
            1.0
        } else {
            smooth((1.0 - u) / 0.35)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Utterance {
    start_us: u64,
    end_us: u64,
    freq_hz: f64,
    amplitude: f64,
}

impl Utterance {
    fn opening(&self, t_us: u64) -> f64 {
        if t_us < self.start_us || t_us >= self.end_us {
            return 0.0;
        }
        let s = (t_us - self.start_us) as f64 * 1e-6;
        let len = (self.end_us - self.start_us) as f64 * 1e-6;
        let envelope = (PI * s / len).sin();
        self.amplitude * envelope * (0.5 - 0.5 * (2.0 * PI * self.freq_hz * s).cos())
    }
}

const BLINK_US: u64 = 160_000;

/// Facial motion over the timeline of one clip, relative to its start.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipScript {
    pub kind: ClipKind,
    pub duration_us: u64,
    yawn: Option<YawnShape>,
    utterances: Vec<Utterance>,
    blinks: Vec<u64>,
}

impl ClipScript {
    pub fn random<R: Rng>(kind: ClipKind, duration_us: u64, rng: &mut R) -> Self {
        let secs = duration_us as f64 * 1e-6;
        let mut yawn = None;
        let mut utterances = Vec::new();
        match kind {
            ClipKind::YawnLike => {
                let dur_s: f64 = Normal::new(4.03f64, 0.6).unwrap().sample(rng).clamp(2.5, 6.0).min(secs * 0.9);
                let dur = (dur_s * 1e6) as u64;
                let slack = duration_us.saturating_sub(dur);
                let jitter = (slack as f64 * 0.2).min(1e6);
                let start = (slack as f64 / 2.0 + rng.gen_range(-1.0..=1.0) * jitter).max(0.0) as u64;
                yawn = Some(YawnShape { start_us: start, duration_us: dur });
            }
            ClipKind::SpeechLike => {
                let mut t = rng.gen_range(0.1..0.6);
                while t < secs - 0.8 {
                    let len = rng.gen_range(1.5..3.5f64).min(secs - 0.2 - t);
                    utterances.push(Utterance {
                        start_us: (t * 1e6) as u64,
                        end_us: ((t + len) * 1e6) as u64,
                        freq_hz: rng.gen_range(3.0..5.0),
                        amplitude: rng.gen_range(0.15..0.30),
                    });
                    t += len + rng.gen_range(0.3..1.2);
                }
            }
            ClipKind::Still => {}
        }
        let mut blinks = Vec::new();
        if kind != ClipKind::Still {
            let mut t = rng.gen_range(0.5..4.0);
            while t < secs - 0.3 {
                blinks.push((t * 1e6) as u64);
                t += rng.gen_range(2.0..6.0);
            }
        }
        ClipScript { kind, duration_us, yawn, utterances, blinks }
    }

    /// Visible yawn as `(start_us, duration_us)` relative to the clip start.
    pub fn yawn_interval(&self) -> Option<(u64, u64)> {
        self.yawn.map(|y| (y.start_us, y.duration_us))
    }

    pub fn state_at(&self, t_us: u64) -> FaceState {
        let mut mouth_open = self.yawn.map_or(0.0, |y| y.opening(t_us));
        for u in &self.utterances {
            mouth_open = mouth_open.max(u.opening(t_us));
        }
        let mut eye_open = 1.0;
        for &b in &self.blinks {
            if t_us >= b && t_us < b + BLINK_US {
                let u = (t_us - b) as f64 / BLINK_US as f64;
                eye_open = (2.0 * u - 1.0).abs();
            }
        }
        FaceState { dx: 0.0, dy: 0.0, mouth_open, eye_open }
    }
}

/// Slow sub-pixel drift of the whole face.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Drift {
    pub amplitude_px: f64,
    pub freq_hz: f64,
    pub phase: f64,
}

impl Drift {
    pub fn random<R: Rng>(amplitude_px: f64, rng: &mut R) -> Self {
        Drift { amplitude_px, freq_hz: rng.gen_range(0.05..0.2), phase: rng.gen_range(0.0..2.0 * PI) }
    }

    pub fn offset(&self, t_us: u64) -> (f64, f64) {
        let a = 2.0 * PI * self.freq_hz * t_us as f64 * 1e-6 + self.phase;
        (self.amplitude_px * a.sin(), 0.5 * self.amplitude_px * (1.3 * a).cos())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthOptions {
    pub fps: f64,
    /// Per-frame timestamp jitter as a fraction of the frame period
    /// (variable frame rate); must be below 0.5.
    pub timestamp_jitter: f64,
    pub drift_px: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions { fps: 30.0, timestamp_jitter: 0.0, drift_px: 0.05 }
    }
}

impl SynthOptions {
    fn validate(&self) -> Result<()> {
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::precondition("fps must be positive"));
        }
        if !(0.0..0.5).contains(&self.timestamp_jitter) {
            return Err(Error::precondition("timestamp jitter must lie in [0, 0.5)"));
        }
        Ok(())
    }
}

/// Strictly increasing frame timestamps in `[0, duration_us)`, the first at 0.
pub fn frame_times<R: Rng>(duration_us: u64, opts: &SynthOptions, rng: &mut R) -> Vec<u64> {
    let period = 1e6 / opts.fps;
    let mut out = Vec::new();
    let mut k = 0u64;
    loop {
        let nominal = k as f64 * period;
        if nominal >= duration_us as f64 {
            break;
        }
        let jitter = if k == 0 || opts.timestamp_jitter == 0.0 {
            0.0
        } else {
            rng.gen_range(-1.0..1.0) * opts.timestamp_jitter * period
        };
        let t = (nominal + jitter).round().max(0.0) as u64;
        if t < duration_us && out.last().is_none_or(|&p| t > p) {
            out.push(t);
        }
        k += 1;
    }
    out
}

#[derive(Debug, Clone)]
pub struct SynthClip {
    pub kind: ClipKind,
    pub frames: Vec<TimedFrame>,
    /// Visible yawn `(start_us, duration_us)` for yawn-like clips.
    pub yawn: Option<(u64, u64)>,
}

pub fn synth_clip(kind: ClipKind, geometry: Geometry, duration_us: u64, seed: u64) -> Result<SynthClip> {
    synth_clip_with(kind, geometry, duration_us, seed, &SynthOptions::default())
}

pub fn synth_clip_with(
    kind: ClipKind,
    geometry: Geometry,
    duration_us: u64,
    seed: u64,
    opts: &SynthOptions,
) -> Result<SynthClip> {
    if duration_us == 0 {
        return Err(Error::precondition("clip duration must be positive"));
    }
    opts.validate()?;
    let (w, h) = (geometry.width as usize, geometry.height as usize);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let face = FaceModel::random(w, h, &mut rng);
    let script = ClipScript::random(kind, duration_us, &mut rng);
    let drift = Drift::random(opts.drift_px, &mut rng);
    let frames = frame_times(duration_us, opts, &mut rng)
        .into_iter()
        .map(|t| {
            let mut state = script.state_at(t);
            (state.dx, state.dy) = drift.offset(t);
            TimedFrame { t_us: t, width: w, height: h, pixels: render_face(&face, &state, w, h) }
        })
        .collect();
    Ok(SynthClip { kind, frames, yawn: script.yawn_interval() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSpec {
    pub subject_id: String,
    pub cycles: usize,
    pub geometry: Geometry,
    pub seed: u64,
    pub segment_us: u64,
    pub options: SynthOptions,
    /// Probability that a filler segment is still rather than speech-like.
    pub still_fraction: f64,
    /// Bound on the offset between the visible yawn and its annotation,
    /// mimicking audio-derived labels.
    pub annotation_jitter_us: u64,
}

impl SessionSpec {
    pub fn new(subject_id: impl Into<String>, cycles: usize, geometry: Geometry, seed: u64) -> Self {
        SessionSpec {
            subject_id: subject_id.into(),
            cycles,
            geometry,
            seed,
            segment_us: 10_000_000,
            options: SynthOptions::default(),
            still_fraction: 0.25,
            annotation_jitter_us: 300_000,
        }
    }
}

/// A long recording of one subject: a lead-in filler segment, then
/// `cycles` repetitions of one yawn segment followed by three filler
/// segments, then a trailing filler segment.
#[derive(Debug, Clone)]
pub struct Session {
    pub spec: SessionSpec,
    face: FaceModel,
    drift: Drift,
    segments: Vec<ClipScript>,
    times: Vec<u64>,
    annotations: Vec<YawnAnnotation>,
}

impl Session {
    pub fn generate(spec: SessionSpec) -> Result<Self> {
        spec.options.validate()?;
        if spec.segment_us == 0 {
            return Err(Error::precondition("segment length must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let (w, h) = (spec.geometry.width as usize, spec.geometry.height as usize);
        let face = FaceModel::random(w, h, &mut rng);
        let drift = Drift::random(spec.options.drift_px, &mut rng);
        let filler = |rng: &mut ChaCha8Rng| {
            let kind = if rng.gen::<f64>() < spec.still_fraction { ClipKind::Still } else { ClipKind::SpeechLike };
            ClipScript::random(kind, spec.segment_us, rng)
        };
        let mut segments = vec![filler(&mut rng)];
        let mut annotations = Vec::new();
        for _ in 0..spec.cycles {
            let yawn = ClipScript::random(ClipKind::YawnLike, spec.segment_us, &mut rng);
            let (start, dur) = yawn.yawn_interval().expect("yawn-like script has a yawn");
            let offset = segments.len() as u64 * spec.segment_us;
            let j = spec.annotation_jitter_us as i64;
            let shift = if j > 0 { rng.gen_range(-j..=j) } else { 0 };
            let ann_start = (offset as i64 + start as i64 + shift).max(0) as u64;
            let ann_dur = ((dur as f64) * rng.gen_range(0.85..1.1)) as u64;
            annotations.push(YawnAnnotation {
                clip_id: spec.subject_id.clone(),
                subject_id: spec.subject_id.clone(),
                start_us: ann_start,
                duration_us: ann_dur.max(1),
            });
            segments.push(yawn);
            for _ in 0..3 {
                segments.push(filler(&mut rng));
            }
        }
        segments.push(filler(&mut rng));
        let total = segments.len() as u64 * spec.segment_us;
        let times = frame_times(total, &spec.options, &mut rng);
        Ok(Session { spec, face, drift, segments, times, annotations })
    }

    pub fn duration_us(&self) -> u64 {
        self.segments.len() as u64 * self.spec.segment_us
    }

    pub fn frame_count(&self) -> usize {
        self.times.len()
    }

    pub fn annotations(&self) -> &[YawnAnnotation] {
        &self.annotations
    }

    pub fn state_at(&self, t_us: u64) -> FaceState {
        let seg = ((t_us / self.spec.segment_us) as usize).min(self.segments.len() - 1);
        let mut state = self.segments[seg].state_at(t_us - seg as u64 * self.spec.segment_us);
        (state.dx, state.dy) = self.drift.offset(t_us);
        state
    }

    pub fn frame(&self, index: usize) -> TimedFrame {
        let t = self.times[index];
        let (w, h) = (self.spec.geometry.width as usize, self.spec.geometry.height as usize);
        TimedFrame { t_us: t, width: w, height: h, pixels: render_face(&self.face, &self.state_at(t), w, h) }
    }

    /// Renders frames lazily, in timestamp order.
    pub fn frames(&self) -> impl Iterator<Item = TimedFrame> + '_ {
        (0..self.times.len()).map(|i| self.frame(i))
    }
}

/// A simulated session ready for sequence extraction.
#[derive(Debug, Clone)]
pub struct Recording {
    pub subject_id: String,
    pub stream: EventStream,
    pub end_us: u64,
    pub annotations: Vec<YawnAnnotation>,
}

/// Renders and simulates a session frame by frame without holding the video.
pub fn record_session(session: &Session, sim: &SimulatorConfig) -> Result<Recording> {
    let mut simulator = Simulator::new(*sim)?;
    for frame in session.frames() {
        simulator.push(&frame)?;
    }
    Ok(Recording {
        subject_id: session.spec.subject_id.clone(),
        stream: simulator.finish()?,
        end_us: session.duration_us(),
        annotations: session.annotations().to_vec(),
    })
}

/// Parameters of a multi-subject synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub subjects: usize,
    pub cycles: usize,
    pub geometry: Geometry,
    pub seed: u64,
    pub options: SynthOptions,
    pub simulator: SimulatorConfig,
    pub sequence: SequenceConfig,
}

impl CorpusSpec {
    pub fn subject_id(&self, index: usize) -> String {
        format!("subj{index:03}")
    }

    pub fn session_spec(&self, index: usize) -> SessionSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        SessionSpec {
            options: self.options,
            ..SessionSpec::new(self.subject_id(index), self.cycles, self.geometry, rng.gen())
        }
    }
}

/// Generates, simulates and windows every subject's session. Subjects run
/// in parallel; the output is in subject order.
pub fn synth_corpus(spec: &CorpusSpec) -> Result<Vec<LabeledSequence>> {
    if spec.subjects == 0 || spec.cycles == 0 {
        return Err(Error::precondition("a corpus needs at least one subject and one cycle"));
    }
    let per_subject = (0..spec.subjects)
        .into_par_iter()
        .map(|i| {
            let session = Session::generate(spec.session_spec(i))?;
            let rec = record_session(&session, &spec.simulator)?;
            build_sequences(&rec.stream, rec.end_us, &rec.annotations, &spec.sequence)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_subject.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::EventStream;
    use crate::simulator::{simulate_video, SimulatorConfig};

    const G: Geometry = Geometry { width: 48, height: 48 };

    fn events_of(clip: &SynthClip) -> EventStream {
        simulate_video(clip.frames.iter().cloned(), &SimulatorConfig::default()).unwrap()
    }

    /// Event counts in bins of `bin_us`.
    fn rate(stream: &EventStream, duration_us: u64, bin_us: u64) -> Vec<usize> {
        let mut bins = vec![0; (duration_us / bin_us) as usize + 1];
        for e in stream.events() {
            bins[(e.t_us / bin_us) as usize] += 1;
        }
        bins
    }

    #[test]
    fn clips_are_deterministic_and_in_range() {
        let a = synth_clip(ClipKind::SpeechLike, G, 2_000_000, 5).unwrap();
        let b = synth_clip(ClipKind::SpeechLike, G, 2_000_000, 5).unwrap();
        assert_eq!(a.frames, b.frames);
        assert_eq!(a.frames.len(), 60);
        assert!(a.frames.iter().all(|f| f.pixels.iter().all(|v| (0.0..=255.0).contains(v))));
        assert!(synth_clip(ClipKind::Still, G, 0, 1).is_err());
    }

    #[test]
    fn still_clip_is_nearly_silent() {
        let clip = synth_clip(ClipKind::Still, G, 10_000_000, 3).unwrap();
        let s = events_of(&clip);
        // well under one event per pixel over ten seconds
        assert!(s.len() < G.pixel_count() / 10, "{} events", s.len());
    }

    #[test]
    fn yawn_clip_has_a_single_burst() {
        let clip = synth_clip(ClipKind::YawnLike, G, 10_000_000, 11).unwrap();
        let (start, dur) = clip.yawn.unwrap();
        let all = events_of(&clip);
        // lower half of the frame holds the mouth, the eyes sit above it
        let mouth: Vec<_> = all.events().iter().filter(|e| e.y as usize >= 26).copied().collect();
        let s = EventStream::new(all.geometry(), mouth).unwrap();
        assert!(s.len() > 200);
        let inside = s.events().iter().filter(|e| e.t_us >= start && e.t_us <= start + dur + 100_000).count();
        assert!(inside as f64 > 0.9 * s.len() as f64, "{inside} of {}", s.len());
        // active 0.5 s bins form one contiguous run around the yawn (hold phase may be quiet)
        let bins = rate(&s, 10_000_000, 500_000);
        let active: Vec<usize> = (0..bins.len()).filter(|&i| bins[i] > s.len() / 50).collect();
        let (first, last) = (active[0] as u64 * 500_000, (*active.last().unwrap() as u64 + 1) * 500_000);
        assert!(first + 500_000 >= start && last <= start + dur + 1_000_000);
    }

    #[test]
    fn speech_clip_oscillates() {
        let clip = synth_clip(ClipKind::SpeechLike, G, 10_000_000, 2).unwrap();
        let s = events_of(&clip);
        let bins = rate(&s, 10_000_000, 50_000);
        let peaks = (1..bins.len() - 1)
            .filter(|&i| bins[i] > bins[i - 1] && bins[i] >= bins[i + 1] && bins[i] >= 5)
            .count();
        assert!(peaks >= 8, "{peaks} peaks");
    }

    #[test]
    fn jittered_frame_times_strictly_increase() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let opts = SynthOptions { fps: 24.0, timestamp_jitter: 0.3, ..Default::default() };
        let t = frame_times(5_000_000, &opts, &mut rng);
        assert!(t.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(t[0], 0);
        assert!(*t.last().unwrap() < 5_000_000);
        assert!((118..=121).contains(&t.len()));
    }

    #[test]
    fn session_layout() {
        let spec = SessionSpec::new("subj", 3, G, 9);
        let s = Session::generate(spec).unwrap();
        assert_eq!(s.annotations().len(), 3);
        assert_eq!(s.duration_us(), 10_000_000 * (1 + 3 * 4 + 1));
        for (k, a) in s.annotations().iter().enumerate() {
            let seg_start = (1 + 4 * k as u64) * 10_000_000;
            assert!(a.start_us + 400_000 >= seg_start && a.start_us < seg_start + 10_000_000);
            assert_eq!(a.subject_id, "subj");
        }
        assert_eq!(s.frame(3), s.frame(3));
    }
}
