mod common;

use common::oracles::{expected_windows, random_layout, random_stream, scalar_pixel_counts, span_polarity};
use evyawn::dataset::{build_sequences, SequenceConfig};
use evyawn::event::{decode_events, write_events};
use evyawn::framing::{accumulate_windows, normalize, SignedFrame};
use evyawn::simulator::{simulate_video, SimulatorConfig, TimedFrame};
use evyawn::{Event, EventStream, Geometry, Polarity};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn arb_stream() -> impl Strategy<Value = EventStream> {
    (1u16..40, 1u16..40, prop::collection::vec((0u64..5_000, any::<u16>(), any::<u16>(), any::<bool>()), 0..400))
        .prop_map(|(w, h, raw)| {
            let mut t = 0;
            let events = raw
                .into_iter()
                .map(|(dt, x, y, on)| {
                    t += dt;
                    Event::new(t, x % w, y % h, if on { Polarity::On } else { Polarity::Off })
                })
                .collect();
            EventStream::new(Geometry::new(w, h), events).unwrap()
        })
}

proptest! {
    #[test]
    fn binary_round_trip(stream in arb_stream()) {
        let mut bytes = Vec::new();
        write_events(&stream, &mut bytes).unwrap();
        prop_assert_eq!(decode_events(&bytes).unwrap(), stream);
    }

    #[test]
    fn time_slices_partition_the_stream(stream in arb_stream(), cut in 0u64..2_000_000) {
        let a = stream.slice_by_time(0, cut).unwrap();
        let b = stream.slice_by_time(cut, u64::MAX).unwrap();
        prop_assert_eq!(a.len() + b.len(), stream.len());
        prop_assert_eq!(a.polarity_sum() + b.polarity_sum(), stream.polarity_sum());
        prop_assert!(a.events().iter().all(|e| e.t_us < cut));
        prop_assert!(b.events().iter().all(|e| e.t_us >= cut));
    }

    #[test]
    fn framing_conserves_polarity(stream in arb_stream(), t0 in -50_000i64..500_000, dt in 1u64..200_000, n in 1usize..40) {
        let frames = accumulate_windows(&stream, t0, dt, n).unwrap();
        let framed: i64 = frames.iter().map(SignedFrame::sum).sum();
        prop_assert_eq!(framed, span_polarity(&stream, t0, t0 + (dt * n as u64) as i64));
    }

    #[test]
    fn normalization_is_monotone_with_midpoint_zero(a in -50i32..50, b in -50i32..50, clip in 1i32..30) {
        let frame = SignedFrame { width: 3, height: 1, pixels: vec![a, b, 0], t0_us: 0, dt_us: 1 };
        let out = normalize(&frame, clip).unwrap();
        prop_assert_eq!(out.pixels[2], 128);
        if a <= b {
            prop_assert!(out.pixels[0] <= out.pixels[1]);
        }
        if a.abs() >= clip {
            prop_assert_eq!(out.pixels[0], if a > 0 { 255 } else { 0 });
        }
    }

    #[test]
    fn simulator_counts_match_per_pixel_oracle(
        video in prop::collection::vec(prop::collection::vec(0.0f64..=255.0, 4), 2..30),
        theta in 0.05f64..0.5,
    ) {
        let cfg = SimulatorConfig { theta_on: theta, theta_off: theta * 1.3, ..SimulatorConfig::default() };
        let frames = video.iter().enumerate().map(|(i, px)| TimedFrame::new(1_000 * i as u64, 2, 2, px.clone()).unwrap());
        let stream = simulate_video(frames, &cfg).unwrap();
        for p in 0..4 {
            let traj: Vec<f64> = video.iter().map(|f| f[p]).collect();
            let (on, off) = scalar_pixel_counts(&traj, cfg.theta_on, cfg.theta_off, cfg.linlog_knee);
            let at = |pol| stream.events().iter().filter(|e| (e.y * 2 + e.x) as usize == p && e.polarity == pol).count() as u64;
            prop_assert_eq!((at(Polarity::On), at(Polarity::Off)), (on, off));
        }
    }

    #[test]
    fn dataset_windows_match_interval_oracle(seed in any::<u64>()) {
        let cfg = SequenceConfig::default();
        let tick = 50_000;
        let (anns, end) = random_layout(&mut ChaCha8Rng::seed_from_u64(seed), tick, cfg.span_us / tick);
        let got: Vec<_> = build_sequences(&EventStream::empty(Geometry::new(1, 1)), end, &anns, &cfg)
            .unwrap()
            .iter()
            .map(|s| (s.label, s.sequence.t_start_us, s.padded))
            .collect();
        prop_assert_eq!(got, expected_windows(&anns, cfg.span_us, tick, end));
    }
}

#[test]
fn million_event_round_trip() {
    let stream = random_stream(42, 1_000_000, Geometry::new(346, 260));
    let mut bytes = Vec::new();
    write_events(&stream, &mut bytes).unwrap();
    assert_eq!(decode_events(&bytes).unwrap(), stream);
}
