//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::gradcheck;
use common::oracles::{
    expected_windows, monotone_count, random_layout, random_stream, scalar_pixel_counts, span_polarity, window_sums,
};
use evyawn::dataset::synth::{synth_corpus, CorpusSpec, SynthOptions};
use evyawn::dataset::{build_sequences, split_by_subject, Label, Partition, SequenceConfig, SplitSpec};
use evyawn::framing::accumulate_windows;
use evyawn::model::{attention_map, encode_checkpoint, self_attention, ModelConfig, SelfAttentionParams, Tensor};
use evyawn::simulator::{Simulator, SimulatorConfig, TimedFrame};
use evyawn::train_eval::{
    checkpoint_meta, evaluate, train, EpochRecord, Evaluation, Metrics, Prediction, Selection, TrainConfig,
    TrainOptions,
};
use evyawn::{EventStream, Geometry, Polarity};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Reported scores, in percent, for the two confusion matrices.
const TEST_SET_SCORES: [f64; 3] = [95.9, 94.7, 95.3];
const YAWDD_SCORES: [f64; 3] = [89.9, 91.0, 90.4];

const CONSERVATION_STREAMS: u64 = 10;
const CONSERVATION_EVENTS: usize = 1_000_000;
const CONSERVATION_BUDGET: Duration = Duration::from_secs(30);

const TRAJECTORIES: u64 = 100;
const SIMULATOR_BUDGET: Duration = Duration::from_secs(60);

const COMPONENT_GRAD_TOL: f64 = 1e-4;
const NETWORK_GRAD_TOL: f64 = 1e-3;
const GRADIENT_BUDGET: Duration = Duration::from_secs(300);

const ATTENTION_TOL: f64 = 1e-12;

const E2E_SEED: u64 = 7;
const E2E_SUBJECTS: usize = 30;
const E2E_SPLIT: [usize; 3] = [20, 5, 5];
const E2E_CYCLES: usize = 5;
const E2E_SIZE: u16 = 64;
const E2E_EPOCHS: usize = 15;
const E2E_MAX_EPOCHS: usize = 30;
const E2E_MIN_F1: f64 = 0.90;
const E2E_BUDGET: Duration = Duration::from_secs(15 * 60);

const LAYOUTS: usize = 1000;

type Verdict = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_budget(start: Instant, budget: Duration) -> Result<Duration, String> {
    let elapsed = start.elapsed();
    check(elapsed <= budget, || format!("took {elapsed:.1?}, budget {budget:?}"))?;
    Ok(elapsed)
}

/// Prediction list realizing a predicted-by-actual confusion matrix, in a
/// shuffled order.
fn prediction_list(tp: usize, fp: usize, fn_: usize, tn: usize, seed: u64) -> Vec<Prediction> {
    let mut cells = Vec::new();
    for (predicted, actual, n) in [
        (Label::Yawn, Label::Yawn, tp),
        (Label::Yawn, Label::NonYawn, fp),
        (Label::NonYawn, Label::Yawn, fn_),
        (Label::NonYawn, Label::NonYawn, tn),
    ] {
        cells.extend(std::iter::repeat_n((predicted, actual), n));
    }
    cells.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    cells
        .into_iter()
        .enumerate()
        .map(|(i, (predicted, actual))| Prediction {
            sequence_id: format!("seq{i:03}"),
            probability: if predicted == Label::Yawn { 0.9 } else { 0.1 },
            predicted,
            actual,
        })
        .collect()
}

fn criterion_1() -> Verdict {
    let mut detail = Vec::new();
    for (name, (tp, fp, fn_, tn), expected) in
        [("test", (71, 3, 4, 72), TEST_SET_SCORES), ("YawDD", (71, 8, 7, 37), YAWDD_SCORES)]
    {
        let eval = Evaluation::from_predictions(prediction_list(tp, fp, fn_, tn, 1));
        let got = eval.metrics.percent_one_decimal();
        check(got == expected, || format!("{name}: got {got:?}, expected {expected:?}"))?;
        detail.push(format!("{name} P/R/F1 = {:.1}/{:.1}/{:.1}%", got[0], got[1], got[2]));
    }
    Ok(detail.join(", "))
}

fn criterion_2() -> Verdict {
    let start = Instant::now();
    let geometry = Geometry::new(32, 24);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut windows = 0usize;
    for seed in 0..CONSERVATION_STREAMS {
        let stream = random_stream(seed, CONSERVATION_EVENTS, geometry);
        let first = stream.first_t_us().unwrap() as i64;
        let last = stream.last_t_us().unwrap() as i64;
        let span = (last - first) as u64 + 1;
        let dt = rng.gen_range(span / 2000..=span / 50);
        let t0 = first + rng.gen_range(-(dt as i64)..(span / 4) as i64);
        let n = ((last + 1 - t0) as u64 / dt) as usize - rng.gen_range(0..3);
        let frames = accumulate_windows(&stream, t0, dt, n).map_err(|e| e.to_string())?;
        let framed: i64 = frames.iter().map(|f| f.sum()).sum();
        let t1 = t0 + (n as u64 * dt) as i64;
        let expected = span_polarity(&stream, t0, t1);
        check(framed == expected, || format!("stream {seed}: framed sum {framed}, span polarity {expected}"))?;
        let oracle = window_sums(&stream, t0, dt, n);
        for (k, (f, o)) in frames.iter().zip(&oracle).enumerate() {
            let same = f.pixels.iter().zip(o).all(|(&a, &b)| a as i64 == b);
            check(same, || format!("stream {seed}: window {k} differs from direct bucketing"))?;
        }
        windows += n;
    }
    let elapsed = within_budget(start, CONSERVATION_BUDGET)?;
    Ok(format!(
        "{CONSERVATION_STREAMS} streams x {CONSERVATION_EVENTS} events, {windows} windows exact in {elapsed:.1?}"
    ))
}

fn pixel_counts(trajectory: &[f64], times: &[u64], config: &SimulatorConfig) -> Result<(u64, u64), String> {
    let mut sim = Simulator::new(*config).map_err(|e| e.to_string())?;
    for (&v, &t) in trajectory.iter().zip(times) {
        let frame = TimedFrame::new(t, 1, 1, vec![v]).map_err(|e| e.to_string())?;
        sim.push(&frame).map_err(|e| e.to_string())?;
    }
    let stream: EventStream = sim.finish().map_err(|e| e.to_string())?;
    let on = stream.events().iter().filter(|e| e.polarity == Polarity::On).count() as u64;
    Ok((on, stream.len() as u64 - on))
}

fn random_times(rng: &mut ChaCha8Rng, n: usize) -> Vec<u64> {
    let mut t = rng.gen_range(0..1000);
    (0..n)
        .map(|_| {
            t += rng.gen_range(1..70_000);
            t
        })
        .collect()
}

fn criterion_3() -> Verdict {
    let start = Instant::now();
    let configs = [
        SimulatorConfig::default(),
        SimulatorConfig { theta_on: 0.15, theta_off: 0.35, linlog_knee: 20.0 },
        SimulatorConfig { theta_on: 0.3, theta_off: 0.1, linlog_knee: 0.0 },
    ];
    let mut events = 0u64;
    for (ci, cfg) in configs.iter().enumerate() {
        for seed in 0..TRAJECTORIES {
            let mut rng = ChaCha8Rng::seed_from_u64(seed * 31 + ci as u64);
            let len = rng.gen_range(2..300);
            let mut v: f64 = rng.gen_range(0.0..255.0);
            let trajectory: Vec<f64> = (0..len)
                .map(|_| {
                    v = if rng.gen_bool(0.05) { rng.gen_range(0.0..255.0) } else { v + rng.gen_range(-12.0..12.0) };
                    v = v.clamp(0.0, 255.0);
                    v
                })
                .collect();
            let times = random_times(&mut rng, len);
            let got = pixel_counts(&trajectory, &times, cfg)?;
            let want = scalar_pixel_counts(&trajectory, cfg.theta_on, cfg.theta_off, cfg.linlog_knee);
            check(got == want, || format!("config {ci}, trajectory {seed}: simulator {got:?}, oracle {want:?}"))?;
            events += got.0 + got.1;

            // monotone trajectory: any subsequence keeping both ends gives the same count
            let mut mono: Vec<f64> = (0..len).map(|_| rng.gen_range(0.0..255.0)).collect();
            mono.sort_by(f64::total_cmp);
            if rng.gen_bool(0.5) {
                mono.reverse();
            }
            let full = pixel_counts(&mono, &times, cfg)?;
            let keep: Vec<usize> =
                (0..len).filter(|&i| i == 0 || i == len - 1 || rng.gen_bool(0.3)).collect();
            let sub_traj: Vec<f64> = keep.iter().map(|&i| mono[i]).collect();
            let sub_times: Vec<u64> = keep.iter().map(|&i| times[i]).collect();
            let coarse = pixel_counts(&sub_traj, &sub_times, cfg)?;
            let closed = monotone_count(mono[0], mono[len - 1], cfg.theta_on, cfg.theta_off, cfg.linlog_knee);
            check(full == coarse && full == closed, || {
                format!("config {ci}, monotone {seed}: full {full:?}, subsampled {coarse:?}, closed form {closed:?}")
            })?;
        }
    }
    let elapsed = within_budget(start, SIMULATOR_BUDGET)?;
    Ok(format!(
        "{} trajectories x {} configs match the scalar oracle ({events} events), monotone segmentation invariant, {elapsed:.1?}",
        TRAJECTORIES,
        configs.len()
    ))
}

fn criterion_4() -> Verdict {
    let start = Instant::now();
    let mut reports = Vec::new();
    for seed in 0..3 {
        reports.push((gradcheck::extractor_block(seed), COMPONENT_GRAD_TOL));
        reports.push((gradcheck::self_attention(seed), COMPONENT_GRAD_TOL));
        reports.push((gradcheck::bilstm(seed), COMPONENT_GRAD_TOL));
        reports.push((gradcheck::head(seed), COMPONENT_GRAD_TOL));
    }
    reports.push((gradcheck::full_network(1), NETWORK_GRAD_TOL));
    let mut worst: Vec<(&'static str, f64)> = Vec::new();
    for (r, tol) in &reports {
        check(r.checked > 0, || format!("{}: nothing compared", r.component))?;
        check(r.max_rel_err < *tol, || {
            format!("{}: relative error {:e} at {} exceeds {tol:e}", r.component, r.max_rel_err, r.worst)
        })?;
        match worst.iter_mut().find(|(c, _)| *c == r.component) {
            Some(w) => w.1 = w.1.max(r.max_rel_err),
            None => worst.push((r.component, r.max_rel_err)),
        }
    }
    let elapsed = within_budget(start, GRADIENT_BUDGET)?;
    let summary: Vec<String> = worst.iter().map(|(c, e)| format!("{c} {e:.1e}")).collect();
    Ok(format!("max rel err: {} ({elapsed:.1?})", summary.join(", ")))
}

fn criterion_5() -> Verdict {
    let (mut worst_identity, mut worst_row) = (0.0f64, 0.0f64);
    let mut rows = 0usize;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (b, c, side) = (rng.gen_range(1..=3), rng.gen_range(2..=12), rng.gen_range(1..=7));
        let k = rng.gen_range(1..=c);
        let scale = if seed % 5 == 0 { 40.0 } else { 1.0 };
        let mut fill = |n: usize, s: f64| (0..n).map(|_| s * rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
        let mut p = SelfAttentionParams::zeros(c, k);
        p.wf = fill(k * c, 1.0);
        p.wg = fill(k * c, 1.0);
        p.wh = fill(c * c, 1.0);
        let x = Tensor::new(vec![b, c, side, side], fill(b * c * side * side, scale)).map_err(|e| e.to_string())?;

        let y = self_attention(&x, &p).map_err(|e| e.to_string())?;
        let d = x.data().iter().zip(y.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst_identity = worst_identity.max(d);

        p.gamma[0] = fill(1, 2.0)[0];
        let map = attention_map(&x, &p).map_err(|e| e.to_string())?;
        let n = side * side;
        for row in map.data().chunks(n) {
            worst_row = worst_row.max((row.iter().sum::<f64>() - 1.0).abs());
            check(row.iter().all(|&v| (0.0..=1.0).contains(&v)), || format!("seed {seed}: weight outside [0, 1]"))?;
            rows += 1;
        }
    }
    check(worst_identity < ATTENTION_TOL, || format!("gamma = 0 deviates by {worst_identity:e}"))?;
    check(worst_row < ATTENTION_TOL, || format!("row sum deviates by {worst_row:e}"))?;
    Ok(format!("identity max dev {worst_identity:.1e}, {rows} rows, max row-sum dev {worst_row:.1e}"))
}

struct PipelineRun {
    sizes: [usize; 3],
    records: Vec<EpochRecord>,
    selection: Selection,
    test: Metrics,
    checkpoints: Vec<Vec<u8>>,
    elapsed: Duration,
}

fn e2e_model() -> ModelConfig {
    ModelConfig {
        input_size: E2E_SIZE as usize,
        extractor_channels: vec![4, 8, 16],
        reduced_channels: 8,
        key_channels: 2,
        hidden: 16,
        lstm_layers: 2,
        dropout: 0.3,
        seq_len: 100,
    }
}

/// synth -> simulate -> frame -> dataset -> split -> train -> select on the
/// validation subjects -> evaluate on the test subjects.
fn pipeline(seed: u64) -> Result<PipelineRun, String> {
    let start = Instant::now();
    let spec = CorpusSpec {
        subjects: E2E_SUBJECTS,
        cycles: E2E_CYCLES,
        geometry: Geometry::new(E2E_SIZE, E2E_SIZE),
        seed,
        options: SynthOptions { timestamp_jitter: 0.2, ..SynthOptions::default() },
        simulator: SimulatorConfig::default(),
        sequence: SequenceConfig::default(),
    };
    let err = |e: evyawn::Error| e.to_string();
    let corpus = synth_corpus(&spec).map_err(err)?;
    let subjects: Vec<String> = (0..spec.subjects).map(|i| spec.subject_id(i)).collect();
    let split = SplitSpec::seeded(&subjects, E2E_SPLIT, seed).map_err(err)?;
    let splits = split_by_subject(corpus, &split).map_err(err)?;
    check(splits.is_subject_disjoint(), || "split is not subject-disjoint".into())?;
    let (tr, va, te) = (splits.get(Partition::Train), splits.get(Partition::Valid), splits.get(Partition::Test));

    let config = TrainConfig { epochs: E2E_EPOCHS, lr0: 1e-3, seed, ..TrainConfig::default() };
    let outcome = train(tr, va, &e2e_model(), &config, &TrainOptions::default(), |_| {}).map_err(err)?;
    let selection = outcome.select(&[va]).map_err(err)?;
    let best = outcome.checkpoint(selection.epoch).map_err(err)?;
    let test = evaluate(&best, te).map_err(err)?.metrics;
    let checkpoints = outcome
        .records
        .iter()
        .map(|r| encode_checkpoint(&outcome.checkpoint(r.epoch)?, &checkpoint_meta(r)))
        .collect::<evyawn::Result<Vec<_>>>()
        .map_err(err)?;
    Ok(PipelineRun {
        sizes: [tr.len(), va.len(), te.len()],
        records: outcome.records,
        selection,
        test,
        checkpoints,
        elapsed: start.elapsed(),
    })
}

fn criterion_6(run: &Result<PipelineRun, String>) -> Verdict {
    let run = run.as_ref().map_err(|e| e.clone())?;
    check(E2E_EPOCHS <= E2E_MAX_EPOCHS, || "too many epochs".into())?;
    check(run.elapsed <= E2E_BUDGET, || format!("took {:.1?}, budget {E2E_BUDGET:?}", run.elapsed))?;
    let m = &run.test;
    check(m.f1 >= E2E_MIN_F1, || {
        format!("test F1 {:.3} < {E2E_MIN_F1} (tp {} fp {} fn {} tn {})", m.f1, m.tp, m.fp, m.fn_, m.tn)
    })?;
    Ok(format!(
        "{}/{}/{} sequences, {E2E_EPOCHS} epochs, epoch {} selected on valid, test F1 {:.3} (tp {} fp {} fn {} tn {}), {:.0?}",
        run.sizes[0], run.sizes[1], run.sizes[2], run.selection.epoch, m.f1, m.tp, m.fp, m.fn_, m.tn, run.elapsed
    ))
}

fn criterion_7() -> Verdict {
    let cfg = SequenceConfig::default();
    let tick = 50_000u64;
    let span_ticks = cfg.span_us / tick;
    let empty = EventStream::empty(Geometry::new(1, 1));
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut yawns, mut kept, mut suppressed, mut padded) = (0, 0, 0, 0);
    for layout in 0..LAYOUTS {
        let (anns, end) = random_layout(&mut rng, tick, span_ticks);
        let got: Vec<(Label, i64, bool)> = build_sequences(&empty, end, &anns, &cfg)
            .map_err(|e| e.to_string())?
            .iter()
            .map(|s| (s.label, s.sequence.t_start_us, s.padded))
            .collect();
        let want = expected_windows(&anns, cfg.span_us, tick, end);
        check(got == want, || format!("layout {layout}: got {got:?}, oracle {want:?}, annotations {anns:?}"))?;
        let nk = want.iter().filter(|w| w.0 == Label::NonYawn).count();
        yawns += anns.len();
        kept += nk;
        suppressed += anns.len() - nk;
        padded += want.iter().filter(|w| w.2).count();
    }
    Ok(format!(
        "{LAYOUTS} layouts: {yawns} yawn windows, {kept} non-yawn kept, {suppressed} suppressed, {padded} padded"
    ))
}

fn criterion_8(first: &Result<PipelineRun, String>) -> Verdict {
    let a = first.as_ref().map_err(|e| format!("first run failed: {e}"))?;
    let b = pipeline(E2E_SEED)?;
    check(a.records == b.records, || "per-epoch losses differ".into())?;
    check(a.selection == b.selection, || "selection differs".into())?;
    check(a.test == b.test, || format!("metrics differ: {:?} vs {:?}", a.test, b.test))?;
    check(a.checkpoints == b.checkpoints, || {
        let first_diff = a.checkpoints.iter().zip(&b.checkpoints).position(|(x, y)| x != y);
        format!("checkpoint bytes differ (first at epoch {first_diff:?})")
    })?;
    let bytes: usize = a.checkpoints.iter().map(Vec::len).sum();
    Ok(format!("identical metrics, selection and {} checkpoints ({bytes} bytes)", a.checkpoints.len()))
}

fn guarded(f: impl FnOnce() -> Verdict) -> Verdict {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(v) => v,
        Err(p) => Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    }
}

fn main() {
    let names = [
        "metrics reproduce the reported tables",
        "framing conserves polarity",
        "simulator matches the scalar oracle",
        "gradient checks",
        "attention identities",
        "end-to-end separation",
        "dataset windows match the interval oracle",
        "determinism",
    ];
    let mut verdicts: Vec<Verdict> = Vec::new();
    let mut report = |i: usize, v: Verdict| {
        match &v {
            Ok(d) => println!("criterion {} PASS  {}: {d}", i + 1, names[i]),
            Err(d) => println!("criterion {} FAIL  {}: {d}", i + 1, names[i]),
        }
        verdicts.push(v);
    };
    report(0, guarded(criterion_1));
    report(1, guarded(criterion_2));
    report(2, guarded(criterion_3));
    report(3, guarded(criterion_4));
    report(4, guarded(criterion_5));
    let run = catch_unwind(|| pipeline(E2E_SEED)).unwrap_or_else(|_| Err("pipeline panicked".into()));
    report(5, guarded(|| criterion_6(&run)));
    report(6, guarded(criterion_7));
    report(7, guarded(|| criterion_8(&run)));
    let failed = verdicts.iter().filter(|v| v.is_err()).count();
    println!("acceptance: {} passed, {failed} failed", verdicts.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
