//! Command-line front end. Every subcommand writes its outputs under
//! `--out` together with a `run_<subcommand>.json` provenance manifest.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::dataset::synth::{synth_clip_with, ClipKind, CorpusSpec, Session, SynthOptions};
use crate::dataset::{
    build_sequences, duration_stats, group_by_clip, read_annotations, read_dataset, split_by_subject, write_annotations,
    write_dataset, ClipEntry, DatasetManifest, Partition, SequenceConfig, SplitSpec,
};
use crate::error::{Error, Result};
use crate::event::{read_events, write_events, EventStream, Geometry};
use crate::framing::{self, FrameSequence};
use crate::model::{load_checkpoint, save_checkpoint, ModelConfig};
use crate::simulator::{
    manifest_frames, read_frame_manifest, read_raw_video, save_frame_png, CropRect, RawVideoSidecar, Simulator,
    SimulatorConfig, TimedFrame,
};
use crate::train_eval::{
    checkpoint_meta, evaluate, train, write_training_log, MetricsReport, TrainConfig, TrainOptions,
};

/// Exit code for command-line usage errors.
pub const USAGE_EXIT_CODE: i32 = 64;

#[derive(Debug, Parser)]
#[command(name = "evyawn", version, about = "Event-camera simulation, framing and yawn classification")]
pub struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads for internal parallelism (defaults to all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Convert timestamped frames into an event stream.
    Simulate(SimulateArgs),
    /// Group events into normalized frames.
    Frame(FrameArgs),
    /// Build labeled sequences and a subject-disjoint split.
    Dataset(DatasetArgs),
    /// Generate synthetic face clips or annotated sessions.
    Synth(SynthArgs),
    /// Train the classifier and select a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a set of sequences.
    Eval(EvalArgs),
    /// Write a frame-sequence container as PNG images.
    Render(RenderArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Frame(_) => "frame",
            Command::Dataset(_) => "dataset",
            Command::Synth(_) => "synth",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Render(_) => "render",
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// CSV of `filename,t_us` rows; image paths are relative to the CSV.
    #[arg(long, conflicts_with_all = ["raw", "sidecar"])]
    pub manifest: Option<PathBuf>,
    /// Raw 8-bit grayscale blob (requires --sidecar).
    #[arg(long, requires = "sidecar")]
    pub raw: Option<PathBuf>,
    /// JSON sidecar with width, height, frame_count and timestamps_us.
    #[arg(long, requires = "raw")]
    pub sidecar: Option<PathBuf>,
    /// Face crop `x,y,width,height` applied to every frame.
    #[arg(long, value_parser = parse_crop)]
    pub crop: Option<CropRect>,
    #[arg(long, default_value = "events.evy")]
    pub output_name: String,
}

#[derive(Debug, Args, Serialize)]
pub struct FrameArgs {
    #[arg(long)]
    pub events: PathBuf,
    #[arg(long)]
    pub dt_us: Option<u64>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long, default_value_t = 0, allow_negative_numbers = true)]
    pub t_start_us: i64,
    #[arg(long)]
    pub clip: Option<i32>,
    /// Fixed event count per frame instead of fixed duration.
    #[arg(long)]
    pub count: Option<usize>,
    /// Also write one PNG per frame.
    #[arg(long)]
    pub render: bool,
    #[arg(long, default_value = "frames")]
    pub stem: String,
}

#[derive(Debug, Args, Serialize)]
pub struct DatasetArgs {
    /// Dataset manifest JSON (clips, annotation CSV, subject split).
    #[arg(long)]
    pub manifest: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameFormat {
    Png,
    Raw,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    /// Number of short clips, half yawn-like and half speech-like.
    #[arg(long, conflicts_with = "subjects")]
    pub clips: Option<usize>,
    /// Number of annotated multi-minute subject sessions.
    #[arg(long)]
    pub subjects: Option<usize>,
    #[arg(long)]
    pub cycles: Option<usize>,
    #[arg(long)]
    pub size: Option<u16>,
    #[arg(long, value_enum)]
    pub format: Option<FrameFormat>,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Dataset directory with `train`, `valid` and `test` partitions.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Sets used by checkpoint selection: partition names or dataset directories.
    #[arg(long, default_values_t = vec!["test".to_string()])]
    pub select_on: Vec<String>,
    #[arg(long)]
    pub no_augment: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Directory holding `index.csv` and `sequences/`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "eval")]
    pub name: String,
}

#[derive(Debug, Args, Serialize)]
pub struct RenderArgs {
    /// Directory of the frame-sequence container.
    #[arg(long)]
    pub dir: PathBuf,
    #[arg(long, default_value = "frames")]
    pub stem: String,
    #[arg(long, default_value = "frame")]
    pub prefix: String,
}

fn parse_crop(s: &str) -> std::result::Result<CropRect, String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match v[..] {
        [x, y, width, height] => Ok(CropRect { x, y, width, height }),
        _ => Err("expected x,y,width,height".into()),
    }
}

/// Synthetic data options of the configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub size: u16,
    pub clip_us: u64,
    pub subjects: usize,
    pub cycles: usize,
    pub format: FrameFormat,
    pub options: SynthOptions,
    /// Subjects per partition (train, valid, test) for generated sessions.
    pub split: [usize; 3],
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            size: 64,
            clip_us: 10_000_000,
            subjects: 30,
            cycles: 5,
            format: FrameFormat::Raw,
            options: SynthOptions::default(),
            split: [20, 5, 5],
        }
    }
}

/// Contents of the `--config` TOML file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub seed: Option<u64>,
    pub simulator: SimulatorConfig,
    pub sequence: SequenceConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        toml::from_str(&fs::read_to_string(path)?).map_err(Error::parse)
    }
}

/// Provenance record written next to every run's outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest<'a> {
    pub tool_version: &'static str,
    pub subcommand: &'static str,
    pub config_path: Option<&'a Path>,
    pub seed: u64,
    pub out_dir: &'a Path,
    pub arguments: &'a Command,
    pub config: &'a Config,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { USAGE_EXIT_CODE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    let seed = cli.seed.or(config.seed).unwrap_or(0);
    config.seed = Some(seed);
    config.train.seed = seed;
    if let Some(a) = config.train.augment.as_mut() {
        a.seed = seed;
    }
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Error::precondition("--jobs must be positive"));
        }
        // a pool may already exist when called repeatedly in one process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    fs::create_dir_all(&cli.out)?;
    let out = cli.out.as_path();
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a, &config, out)?,
        Command::Frame(a) => cmd_frame(a, &config, out)?,
        Command::Dataset(a) => cmd_dataset(a, &config, out)?,
        Command::Synth(a) => cmd_synth(a, &mut config, seed, out)?,
        Command::Train(a) => cmd_train(a, &mut config, out)?,
        Command::Eval(a) => cmd_eval(a, out)?,
        Command::Render(a) => cmd_render(a, out)?,
    }
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION"),
        subcommand: cli.command.name(),
        config_path: cli.config.as_deref(),
        seed,
        out_dir: out,
        arguments: &cli.command,
        config: &config,
    };
    write_json(&out.join(format!("run_{}.json", cli.command.name())), &manifest)
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes)?;
    Ok(())
}

fn simulate_frames(frames: impl Iterator<Item = Result<TimedFrame>>, cfg: &SimulatorConfig) -> Result<EventStream> {
    let mut sim = Simulator::new(*cfg)?;
    for frame in frames {
        sim.push(&frame?)?;
    }
    sim.finish()
}

fn cmd_simulate(a: &SimulateArgs, config: &Config, out: &Path) -> Result<()> {
    let stream = match (&a.manifest, &a.raw, &a.sidecar) {
        (Some(manifest), None, None) => {
            let entries = read_frame_manifest(manifest)?;
            let dir = manifest.parent().unwrap_or(Path::new("."));
            simulate_frames(manifest_frames(dir, entries, a.crop), &config.simulator)?
        }
        (None, Some(raw), Some(sidecar)) => {
            let frames = read_raw_video(raw, sidecar)?;
            let crop = a.crop;
            simulate_frames(
                frames.into_iter().map(move |f| match crop {
                    Some(r) => f.crop(r),
                    None => Ok(f),
                }),
                &config.simulator,
            )?
        }
        _ => return Err(Error::precondition("simulate needs either --manifest or --raw with --sidecar")),
    };
    let path = out.join(&a.output_name);
    write_events(&stream, BufWriter::new(File::create(&path)?))?;
    eprintln!("{} events written to {}", stream.len(), path.display());
    Ok(())
}

fn load_events(path: &Path) -> Result<EventStream> {
    read_events(BufReader::new(File::open(path)?))
}

fn cmd_frame(a: &FrameArgs, config: &Config, out: &Path) -> Result<()> {
    let stream = load_events(&a.events)?;
    let clip = a.clip.unwrap_or(config.sequence.clip);
    let seq = match a.count {
        Some(k) => {
            let signed = framing::frame_by_count(&stream, k)?;
            let mut times = csv::Writer::from_path(out.join(format!("{}_times.csv", a.stem)))?;
            times.write_record(["index", "t0_us", "dt_us"])?;
            for (i, f) in signed.iter().enumerate() {
                times.write_record([i.to_string(), f.t0_us.to_string(), f.dt_us.to_string()])?;
            }
            times.flush()?;
            let g = stream.geometry();
            FrameSequence {
                width: g.width as usize,
                height: g.height as usize,
                t_start_us: signed.first().map_or(0, |f| f.t0_us),
                // per-frame spans vary; see the `_times.csv` table
                dt_us: 0,
                frames: signed.iter().map(|f| framing::normalize(f, clip)).collect::<Result<_>>()?,
            }
        }
        None => {
            let dt = a.dt_us.unwrap_or(config.sequence.dt_us);
            let n = a.frames.unwrap_or(config.sequence.frames);
            framing::frame_by_duration(&stream, a.t_start_us, dt, n, clip)?
        }
    };
    framing::write_sequence(&seq, out, &a.stem)?;
    if a.render {
        framing::render_sequence(&seq, &out.join(format!("{}_png", a.stem)), "frame")?;
    }
    eprintln!("{} frames written to {}", seq.len(), out.display());
    Ok(())
}

fn cmd_render(a: &RenderArgs, out: &Path) -> Result<()> {
    let seq = framing::read_sequence(&a.dir, &a.stem)?;
    let paths = framing::render_sequence(&seq, out, &a.prefix)?;
    eprintln!("{} images written to {}", paths.len(), out.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct DatasetSummary {
    sequences: usize,
    padded: usize,
    yawn_duration_mean_s: Option<f64>,
    yawn_duration_sd_s: Option<f64>,
    yawn_duration_max_s: Option<f64>,
}

fn cmd_dataset(a: &DatasetArgs, config: &Config, out: &Path) -> Result<()> {
    let manifest = DatasetManifest::load(&a.manifest)?;
    let base = a.manifest.parent().unwrap_or(Path::new("."));
    let annotations = read_annotations(&base.join(&manifest.annotations))?;
    let by_clip = group_by_clip(&annotations);
    let mut sequences = Vec::new();
    for clip in &manifest.clips {
        let stream = load_events(&base.join(&clip.events))?;
        let end = clip.end_us.unwrap_or_else(|| stream.last_t_us().map_or(0, |t| t + 1));
        if let Some(anns) = by_clip.get(&clip.clip_id) {
            if let Some(a) = anns.iter().find(|a| a.subject_id != clip.subject_id) {
                return Err(Error::precondition(format!(
                    "annotation for clip {} names subject {}, manifest says {}",
                    clip.clip_id, a.subject_id, clip.subject_id
                )));
            }
            sequences.extend(build_sequences(&stream, end, anns, &config.sequence)?);
        }
    }
    let padded = sequences.iter().filter(|s| s.padded).count();
    let total = sequences.len();
    let splits = split_by_subject(sequences, &manifest.split)?;
    for p in Partition::ALL {
        write_dataset(&out.join(p.as_str()), splits.get(p))?;
    }
    fs::write(out.join("partition_stats.txt"), format!("{splits}\n"))?;
    let stats = duration_stats(&annotations);
    write_json(
        &out.join("dataset_summary.json"),
        &DatasetSummary {
            sequences: total,
            padded,
            yawn_duration_mean_s: stats.map(|s| s.0),
            yawn_duration_sd_s: stats.map(|s| s.1),
            yawn_duration_max_s: stats.map(|s| s.2),
        },
    )?;
    println!("{splits}");
    Ok(())
}

fn write_frames(dir: &Path, frames: &[TimedFrame], format: FrameFormat) -> Result<()> {
    fs::create_dir_all(dir)?;
    match format {
        FrameFormat::Png => {
            let mut manifest = csv::Writer::from_path(dir.join("manifest.csv"))?;
            manifest.write_record(["filename", "t_us"])?;
            fs::create_dir_all(dir.join("frames"))?;
            for (i, f) in frames.iter().enumerate() {
                let name = format!("frames/frame_{i:05}.png");
                save_frame_png(f, &dir.join(&name))?;
                manifest.write_record([name, f.t_us.to_string()])?;
            }
            manifest.flush()?;
        }
        FrameFormat::Raw => write_raw(dir, frames.iter().cloned().map(Ok), frames.len())?,
    }
    Ok(())
}

fn write_raw(dir: &Path, frames: impl Iterator<Item = Result<TimedFrame>>, count: usize) -> Result<()> {
    let mut blob = BufWriter::new(File::create(dir.join("frames.u8"))?);
    let mut meta = RawVideoSidecar { width: 0, height: 0, frame_count: count, timestamps_us: Vec::with_capacity(count) };
    for f in frames {
        let f = f?;
        meta.width = f.width;
        meta.height = f.height;
        meta.timestamps_us.push(f.t_us);
        let bytes: Vec<u8> = f.pixels.iter().map(|&v| (v + 0.5).floor().clamp(0.0, 255.0) as u8).collect();
        blob.write_all(&bytes)?;
    }
    blob.flush()?;
    write_json(&dir.join("frames.json"), &meta)
}

fn cmd_synth(a: &SynthArgs, config: &mut Config, seed: u64, out: &Path) -> Result<()> {
    let sc = &mut config.synth;
    if let Some(s) = a.size {
        sc.size = s;
    }
    if let Some(f) = a.format {
        sc.format = f;
    }
    if let Some(c) = a.cycles {
        sc.cycles = c;
    }
    if let Some(n) = a.subjects {
        sc.subjects = n;
    }
    let sc = &config.synth;
    let geometry = Geometry::new(sc.size, sc.size);
    if let Some(n) = a.clips {
        for i in 0..n {
            let kind = if i % 2 == 0 { ClipKind::YawnLike } else { ClipKind::SpeechLike };
            let clip = synth_clip_with(kind, geometry, sc.clip_us, seed.wrapping_add(i as u64), &sc.options)?;
            write_frames(&out.join(format!("clip_{i:03}_{}", kind.as_str())), &clip.frames, sc.format)?;
        }
        eprintln!("{n} clips written to {}", out.display());
        return Ok(());
    }
    let corpus = CorpusSpec {
        subjects: sc.subjects,
        cycles: sc.cycles,
        geometry,
        seed,
        options: sc.options,
        simulator: config.simulator,
        sequence: config.sequence,
    };
    let mut annotations = Vec::new();
    let mut clips = Vec::new();
    let subjects: Vec<String> = (0..sc.subjects).map(|i| corpus.subject_id(i)).collect();
    for (i, subject) in subjects.iter().enumerate() {
        let session = Session::generate(corpus.session_spec(i))?;
        let dir = out.join(subject);
        fs::create_dir_all(&dir)?;
        match sc.format {
            FrameFormat::Raw => write_raw(&dir, session.frames().map(Ok), session.frame_count())?,
            FrameFormat::Png => write_frames(&dir, &session.frames().collect::<Vec<_>>(), FrameFormat::Png)?,
        }
        annotations.extend_from_slice(session.annotations());
        clips.push(ClipEntry {
            clip_id: subject.clone(),
            subject_id: subject.clone(),
            events: format!("{subject}/events.evy"),
            crop: None,
            end_us: Some(session.duration_us()),
        });
    }
    write_annotations(&out.join("annotations.csv"), &annotations)?;
    let manifest = DatasetManifest {
        clips,
        annotations: "annotations.csv".into(),
        split: SplitSpec::seeded(&subjects, sc.split, seed)?,
    };
    manifest.save(&out.join("dataset.json"))?;
    eprintln!("{} sessions written to {}", subjects.len(), out.display());
    Ok(())
}

fn resolve_set(data: &Path, name: &str) -> PathBuf {
    match Partition::parse(name) {
        Some(p) => data.join(p.as_str()),
        None => PathBuf::from(name),
    }
}

#[derive(Debug, Serialize)]
struct SelectionReport {
    selected_epoch: usize,
    mean_f1: f64,
    select_on: Vec<String>,
    candidates: Vec<(usize, f64)>,
}

fn cmd_train(a: &TrainArgs, config: &mut Config, out: &Path) -> Result<()> {
    let tc = &mut config.train;
    if let Some(e) = a.epochs {
        tc.epochs = e;
    }
    if let Some(b) = a.batch_size {
        tc.batch_size = b;
    }
    if let Some(lr) = a.lr {
        tc.lr0 = lr;
    }
    if a.no_augment {
        tc.augment = None;
    }
    let train_set = read_dataset(&a.data.join("train"))?;
    let valid_set = read_dataset(&a.data.join("valid"))?;
    let selection_sets = a
        .select_on
        .iter()
        .map(|s| read_dataset(&resolve_set(&a.data, s)))
        .collect::<Result<Vec<_>>>()?;
    let ckpt_dir = out.join("checkpoints");
    let opts = TrainOptions { checkpoint_dir: Some(ckpt_dir) };
    let outcome = train(&train_set, &valid_set, &config.model, &config.train, &opts, |r| {
        eprintln!(
            "epoch {:3}  lr {:.3e}  train_loss {:.5}  valid_loss {:.5}",
            r.epoch, r.lr, r.train_loss, r.valid_loss
        );
    })?;
    write_training_log(&out.join("training_log.csv"), &outcome.records)?;
    let refs: Vec<&[_]> = selection_sets.iter().map(|s| s.as_slice()).collect();
    let selection = outcome.select(&refs)?;
    let best = outcome.checkpoint(selection.epoch)?;
    save_checkpoint(&out.join("best.ckpt"), &best, &checkpoint_meta(&outcome.records[selection.epoch]))?;
    write_json(
        &out.join("selection.json"),
        &SelectionReport {
            selected_epoch: selection.epoch,
            mean_f1: selection.mean_f1,
            select_on: a.select_on.clone(),
            candidates: selection.candidates,
        },
    )?;
    eprintln!("selected epoch {} (mean F1 {:.4})", selection.epoch, selection.mean_f1);
    Ok(())
}

fn cmd_eval(a: &EvalArgs, out: &Path) -> Result<()> {
    let (params, _) = load_checkpoint(&a.checkpoint)?;
    let set = read_dataset(&a.data)?;
    let evaluation = evaluate(&params, &set)?;
    let report = MetricsReport::new(a.name.clone(), &evaluation.metrics);
    write_json(&out.join(format!("{}_metrics.json", a.name)), &report)?;
    fs::write(out.join(format!("{}_confusion.txt", a.name)), format!("{}\n", report.confusion_matrix))?;
    let mut preds = csv::Writer::from_path(out.join(format!("{}_predictions.csv", a.name)))?;
    for p in &evaluation.predictions {
        preds.serialize(p)?;
    }
    preds.flush()?;
    let m = &evaluation.metrics;
    println!("{}", report.confusion_matrix);
    println!("precision {:.1}%  recall {:.1}%  F1 {:.1}%", 100.0 * m.precision, 100.0 * m.recall, 100.0 * m.f1);
    Ok(())
}
