//! Reference implementations written independently of the library, used to
//! check it on random inputs.

use evyawn::dataset::{Label, YawnAnnotation};
use evyawn::{Event, EventStream, Geometry, Polarity};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random time-sorted stream with bursts, gaps and repeated timestamps.
pub fn random_stream(seed: u64, len: usize, geometry: Geometry) -> EventStream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = rng.gen_range(0..1_000u64);
    let events = (0..len)
        .map(|_| {
            t += match rng.gen_range(0..10) {
                0..=3 => 0,
                4..=8 => rng.gen_range(1..20),
                _ => rng.gen_range(100..5_000),
            };
            let polarity = if rng.gen_bool(0.5) { Polarity::On } else { Polarity::Off };
            Event::new(t, rng.gen_range(0..geometry.width), rng.gen_range(0..geometry.height), polarity)
        })
        .collect();
    EventStream::new(geometry, events).expect("generated stream is valid")
}

/// Per-window, per-pixel polarity sums by direct bucketing.
pub fn window_sums(stream: &EventStream, t0: i64, dt: u64, n: usize) -> Vec<Vec<i64>> {
    let g = stream.geometry();
    let (w, h) = (g.width as usize, g.height as usize);
    let mut out = vec![vec![0i64; w * h]; n];
    let end = t0 + (dt * n as u64) as i64;
    for e in stream.events() {
        let t = e.t_us as i64;
        if t < t0 || t >= end {
            continue;
        }
        let k = ((t - t0) / dt as i64) as usize;
        let s = if e.polarity == Polarity::On { 1 } else { -1 };
        out[k][e.y as usize * w + e.x as usize] += s;
    }
    out
}

/// Total polarity in `[t0, t1)` by a linear scan.
pub fn span_polarity(stream: &EventStream, t0: i64, t1: i64) -> i64 {
    stream
        .events()
        .iter()
        .filter(|e| (e.t_us as i64) >= t0 && (e.t_us as i64) < t1)
        .map(|e| if e.polarity == Polarity::On { 1 } else { -1 })
        .sum()
}

/// Log response: natural log above `knee`, the straight line through the
/// origin and `(knee, ln knee)` below it.
pub fn linlog(intensity: f64, knee: f64) -> f64 {
    if knee > 0.0 && intensity < knee {
        intensity * knee.ln() / knee
    } else if intensity > 0.0 {
        intensity.ln()
    } else {
        0.0
    }
}

/// Tolerance for threshold crossings that land exactly on a multiple of the
/// threshold after rounding.
pub const CROSSING_EPS: f64 = 1e-9;

/// Scalar contrast-threshold pixel: the reference moves by whole thresholds
/// and keeps the remainder. Returns (ON, OFF) counts.
pub fn scalar_pixel_counts(trajectory: &[f64], theta_on: f64, theta_off: f64, knee: f64) -> (u64, u64) {
    let mut reference = linlog(trajectory[0], knee);
    let (mut on, mut off) = (0u64, 0u64);
    for &v in &trajectory[1..] {
        let level = linlog(v, knee);
        let mut n = ((level - reference) / theta_on + CROSSING_EPS).floor();
        if n >= 1.0 {
            on += n as u64;
            reference += n * theta_on;
            continue;
        }
        n = ((reference - level) / theta_off + CROSSING_EPS).floor();
        if n >= 1.0 {
            off += n as u64;
            reference -= n * theta_off;
        }
    }
    (on, off)
}

/// Closed-form count for a monotone trajectory: whole thresholds between the
/// first and last log level.
pub fn monotone_count(first: f64, last: f64, theta_on: f64, theta_off: f64, knee: f64) -> (u64, u64) {
    let d = linlog(last, knee) - linlog(first, knee);
    if d >= 0.0 {
        ((d / theta_on + CROSSING_EPS).floor() as u64, 0)
    } else {
        (0, (-d / theta_off + CROSSING_EPS).floor() as u64)
    }
}

/// One expected sequence: label, window start and padding flag.
pub type ExpectedWindow = (Label, i64, bool);

/// Brute-force windowing on a tick grid. Every start, duration and the span
/// must be a whole number of ticks, with durations and the span even, so
/// that midpoints land on the grid. Yawn windows are painted onto an
/// occupancy array; a non-yawn candidate survives when none of its ticks is
/// painted.
pub fn expected_windows(
    annotations: &[YawnAnnotation],
    span_us: u64,
    tick_us: u64,
    recording_end_us: u64,
) -> Vec<ExpectedWindow> {
    let tick = tick_us as i64;
    let span = span_us as i64 / tick;
    let starts: Vec<i64> = annotations
        .iter()
        .map(|a| (a.start_us as i64 + a.duration_us as i64 / 2) / tick - span / 2)
        .collect();
    let lo = starts.iter().min().copied().unwrap_or(0) - 4 * span;
    let hi = starts.iter().max().copied().unwrap_or(0) + 4 * span;
    let mut occupied = vec![false; (hi - lo) as usize];
    for &s in &starts {
        for t in s..s + span {
            occupied[(t - lo) as usize] = true;
        }
    }
    let padded = |s: i64| s < 0 || (s + span) * tick > recording_end_us as i64;
    let mut out = Vec::new();
    for &s in &starts {
        out.push((Label::Yawn, s * tick, padded(s)));
        let c = s + 2 * span;
        if (c..c + span).all(|t| !occupied[(t - lo) as usize]) {
            out.push((Label::NonYawn, c * tick, padded(c)));
        }
    }
    out
}

/// Random annotation layout on a `tick_us` grid, sorted by start. Yawns may
/// overlap, crowd each other or exceed the span.
pub fn random_layout(rng: &mut ChaCha8Rng, tick_us: u64, span_ticks: u64) -> (Vec<YawnAnnotation>, u64) {
    let n = rng.gen_range(1..=10);
    let horizon = rng.gen_range(1..=12) * span_ticks;
    let mut anns: Vec<YawnAnnotation> = (0..n)
        .map(|_| YawnAnnotation {
            clip_id: "clip".into(),
            subject_id: "subj".into(),
            start_us: rng.gen_range(0..horizon) * tick_us,
            duration_us: 2 * rng.gen_range(1..=span_ticks * 3 / 4) * tick_us,
        })
        .collect();
    anns.sort_by_key(|a| a.start_us);
    let last_end = anns.iter().map(|a| a.start_us + a.duration_us).max().unwrap_or(0);
    let end = last_end + rng.gen_range(0..=4 * span_ticks) * tick_us;
    (anns, end.max(tick_us))
}
