use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ee3d::bench::bench;
use ee3d::config::{window_us, SynthConfig, TrainConfig, DEFAULT_SEQ_LEN};
use ee3d::dataset::{synthesize, synthesize_background, Dataset};
use ee3d::error::{Error, IoContext, Result};
use ee3d::formats::events::{read_events, write_events, write_events_to, MAGIC};
use ee3d::formats::image::read_video;
use ee3d::formats::intrinsics::read_intrinsics;
use ee3d::formats::model::{load_model, load_state, save_model, save_state};
use ee3d::pipeline::{run_file, run_live, write_text, PipelineOptions, PoseBroadcaster, PoseRecord, SessionStats};
use ee3d::render::{project_skeleton, render_heatmaps, render_lnes, render_mask, render_pose, side_by_side};
use ee3d::report::{evaluate, format_table, json_lines, EvalOptions, Predictor};
use ee3d::threads::thread_budget;
use ee3d::train::{load_clips, loss_line, Augmenter, Trainer, LOSS_LOG_HEADER};
use ee3d_core::augment::{augment_lnes, AugmentSource};
use ee3d_core::fisheye::FisheyeIntrinsics;
use ee3d_core::metrics::OneEuroParams;
use ee3d_core::net::{NetConfig, NetworkParams, StreamingEstimator};
use ee3d_core::scene::{Mask, Motion, Skeleton16};
use ee3d_core::sim::{simulate, SimulatorConfig};

/// Event-camera egocentric 3D pose estimation toolkit.
#[derive(Parser)]
#[command(name = "ee3d", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (or simulate events from a video).
    Synth(SynthArgs),
    /// Train a model on a dataset.
    Train(TrainArgs),
    /// Estimate poses from an event file or a live socket.
    Infer(InferArgs),
    /// Evaluate a model on a dataset.
    Eval(EvalArgs),
    /// Measure pipeline throughput.
    Bench(BenchArgs),
    /// Render LNES, heatmaps, mask or skeleton of a dataset window.
    Render(RenderArgs),
    /// Show background augmentation of a dataset window.
    AugmentPreview(AugmentArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Arch {
    Toy,
    Full,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RenderKind {
    Lnes,
    Heatmaps,
    Mask,
    Pose,
    All,
}

#[derive(Args)]
struct SynthArgs {
    /// Output dataset directory (or event file with --video).
    #[arg(long)]
    out: PathBuf,
    /// Generation config (`key = value`); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    window_ms: Option<f64>,
    /// Comma-separated motions: wave, box, squat, walk-in-place, still.
    #[arg(long)]
    motions: Option<String>,
    /// Seconds per sequence.
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    repeats: Option<usize>,
    /// Fisheye intrinsics file; a 190° lens on 256x192 by default.
    #[arg(long)]
    intrinsics: Option<PathBuf>,
    /// Also write a human-free background recording to this path.
    #[arg(long)]
    background: Option<PathBuf>,
    /// Simulate events from a directory of frames instead.
    #[arg(long)]
    video: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Output model file; the training state goes to `<model>.state`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_SEQ_LEN)]
    seq_len: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Total optimizer steps (overrides the config).
    #[arg(long)]
    iters: Option<u64>,
    /// Background event file for augmentation.
    #[arg(long)]
    augment_bg: Option<PathBuf>,
    /// Start from these weights with the fine-tuning learning rate.
    #[arg(long)]
    fine_tune: Option<PathBuf>,
    /// Continue from a saved training state.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Loss log path; `<model>.loss` by default.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct InferArgs {
    /// Event file (EVT1 or CSV); omit with --connect.
    events: Option<PathBuf>,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 15.0)]
    window_ms: f64,
    #[arg(long, value_enum, default_value_t = Switch::Off)]
    smooth: Switch,
    /// Read live events from an event source at this address.
    #[arg(long)]
    connect: Option<String>,
    /// Broadcast framed binary poses to viewers connecting here.
    #[arg(long)]
    listen: Option<String>,
    /// Write text records here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, required_unless_present = "ground_truth")]
    model: Option<PathBuf>,
    /// Score the ground truth against itself.
    #[arg(long)]
    ground_truth: bool,
    /// Procrustes alignment without scale.
    #[arg(long)]
    pa_no_scale: bool,
    #[arg(long, value_enum, default_value_t = Switch::Off)]
    smooth: Switch,
    /// Write line-delimited JSON records here.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    events: PathBuf,
    #[arg(long, conflicts_with = "arch")]
    model: Option<PathBuf>,
    /// Seeded random weights of this architecture when no model is given.
    #[arg(long, value_enum)]
    arch: Option<Arch>,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    #[arg(long, default_value_t = 15.0)]
    window_ms: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct WindowRef {
    #[arg(long)]
    dataset: PathBuf,
    /// Sequence name; the first one by default.
    #[arg(long)]
    sequence: Option<String>,
    #[arg(long, default_value_t = 0)]
    window: usize,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(value_enum)]
    kind: RenderKind,
    #[command(flatten)]
    at: WindowRef,
    /// Render the model's outputs instead of the ground truth.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Output image; a directory for `all`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AugmentArgs {
    #[command(flatten)]
    at: WindowRef,
    #[arg(long)]
    augment_bg: PathBuf,
    #[arg(long, default_value_t = 15.0)]
    window_ms: f64,
    #[arg(long)]
    out: PathBuf,
}

fn smoothing(s: Switch) -> Option<OneEuroParams> {
    (s == Switch::On).then(OneEuroParams::default)
}

fn intrinsics(path: &Option<PathBuf>) -> Result<FisheyeIntrinsics> {
    match path {
        Some(p) => read_intrinsics(p),
        None => Ok(FisheyeIntrinsics::default_egocentric()),
    }
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    if let Some(video) = &a.video {
        let v = read_video(video)?;
        let sim = SimulatorConfig { seed: a.seed.unwrap_or(0), ..SimulatorConfig::default() };
        let stream = simulate(&v, &sim)?;
        write_events(&a.out, &stream)?;
        println!("events {}", stream.len());
        return Ok(());
    }
    let mut cfg = match &a.config {
        Some(p) => SynthConfig::load(p)?,
        None => SynthConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(w) = a.window_ms {
        cfg.window_ms = w;
    }
    if let Some(m) = &a.motions {
        cfg.motions = m.split(',').map(|s| s.trim().parse::<Motion>()).collect::<ee3d_core::Result<_>>()?;
    }
    if let Some(d) = a.duration {
        cfg.duration = d;
    }
    if let Some(r) = a.repeats {
        cfg.repeats = r;
    }
    let intr = intrinsics(&a.intrinsics)?;
    let summary = synthesize(&a.out, &cfg, &intr, thread_budget())?;
    if let Some(bg) = &a.background {
        synthesize_background(bg, &cfg, &intr)?;
    }
    for s in &summary.sequences {
        println!("sequence {s}");
    }
    println!("dataset_hash {}", summary.dataset_hash);
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let ds = Dataset::open(&a.dataset)?;
    let fine_tune = a.fine_tune.is_some();
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::load(p, fine_tune)?,
        None => TrainConfig::parse("", fine_tune)?,
    };
    cfg.seq_len = a.seq_len;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(i) = a.iters {
        cfg.iters = i;
    }
    let clips = load_clips(&ds, cfg.seq_len)?;
    let mut trainer = match (&a.resume, &a.fine_tune) {
        (Some(state), _) => Trainer::resume(cfg, clips, load_state(state)?)?,
        (None, Some(init)) => Trainer::new(cfg, clips, Some(load_model(init)?))?,
        (None, None) => Trainer::new(cfg, clips, None)?,
    }
    .with_threads(thread_budget());
    if let Some(bg) = &a.augment_bg {
        let stream = read_events(bg, (0, 0))?;
        let us = ds.load_sequence(&ds.sequence_names[0])?.meta.window_us;
        trainer = trainer.with_augment(Augmenter::new(AugmentSource::new(stream, us)?));
    }
    let log_path = a.log.clone().unwrap_or_else(|| with_suffix(&a.model, ".loss"));
    let file = if a.resume.is_some() {
        fs::OpenOptions::new().create(true).append(true).open(&log_path)
    } else {
        File::create(&log_path)
    }
    .at(&log_path)?;
    let mut log = BufWriter::new(file);
    let stdout = io::stdout();
    let mut out = stdout.lock();
    if a.resume.is_none() {
        writeln!(log, "{LOSS_LOG_HEADER}").at(&log_path)?;
        writeln!(out, "{LOSS_LOG_HEADER}").at(Path::new("<stdout>"))?;
    }
    trainer.run(|step, l| {
        let line = loss_line(step, l);
        writeln!(log, "{line}").at(&log_path)?;
        writeln!(out, "{line}").at(Path::new("<stdout>"))
    })?;
    log.flush().at(&log_path)?;
    save_model(&a.model, &trainer.state.params)?;
    save_state(&with_suffix(&a.model, ".state"), &trainer.state)?;
    Ok(())
}

fn with_suffix(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Event bytes in EVT1 form; CSV input is converted in memory.
fn event_bytes(path: &Path, params: &NetworkParams) -> Result<Vec<u8>> {
    let bytes = fs::read(path).at(path)?;
    if bytes.starts_with(MAGIC) {
        return Ok(bytes);
    }
    let size = (params.config.input_width as u16, params.config.input_height as u16);
    let stream = read_events(path, size)?;
    let mut out = Vec::new();
    write_events_to(&mut out, &stream).at(path)?;
    Ok(out)
}

fn report_stats(s: &SessionStats) {
    eprintln!(
        "windows {} events {} dropped_windows {} late_events {} poses_per_s {:.2}",
        s.windows,
        s.events,
        s.dropped_windows,
        s.late_events,
        s.poses_per_second()
    );
}

fn cmd_infer(a: InferArgs) -> Result<()> {
    let params = load_model(&a.model)?;
    let mut opts = PipelineOptions::new(window_us(a.window_ms)?);
    opts.threads = thread_budget();
    opts.smoothing = smoothing(a.smooth);
    let mut broadcaster = a.listen.as_deref().map(PoseBroadcaster::bind).transpose()?;
    if let Some(b) = &broadcaster {
        eprintln!("broadcasting on {}", b.local_addr()?);
    }
    let (path, sink): (PathBuf, Box<dyn Write>) = match &a.out {
        Some(p) => (p.clone(), Box::new(File::create(p).at(p)?)),
        None => (PathBuf::from("<stdout>"), Box::new(io::stdout().lock())),
    };
    let mut sink = BufWriter::new(sink);
    let mut emit = |r: &PoseRecord| -> Result<()> {
        write_text(&mut sink, r).at(&path)?;
        if let Some(b) = &mut broadcaster {
            sink.flush().at(&path)?;
            b.publish(r);
        }
        Ok(())
    };
    let stats = match (&a.events, &a.connect) {
        (Some(file), None) => {
            let bytes = event_bytes(file, &params)?;
            run_file(bytes.as_slice(), &params, &opts, &mut emit)?
        }
        (None, Some(addr)) => {
            let stream = TcpStream::connect(addr).map_err(Error::Net)?;
            opts.threads = opts.threads.max(2);
            run_live(stream, &params, &opts, &mut emit)?
        }
        _ => return Err(Error::config("give exactly one of an event file or --connect")),
    };
    sink.flush().at(&path)?;
    report_stats(&stats);
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let ds = Dataset::open(&a.dataset)?;
    let params = a.model.as_deref().map(load_model).transpose()?;
    let pred = match &params {
        Some(p) if !a.ground_truth => Predictor::Model(p),
        _ => Predictor::GroundTruth,
    };
    let opts = EvalOptions { pa_scale: !a.pa_no_scale, smoothing: smoothing(a.smooth) };
    let e = evaluate(&ds, pred, &opts)?;
    print!("{}", format_table(&e.report));
    if !e.report.missing.is_empty() {
        println!("no sequences for: {}", e.report.missing.join(", "));
    }
    if let Some(p) = &a.json {
        fs::write(p, json_lines(&e)).at(p)?;
    }
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    let params = match (&a.model, a.arch) {
        (Some(m), _) => load_model(m)?,
        (None, Some(Arch::Full)) => NetworkParams::init(&NetConfig::full_scale(), a.seed)?,
        (None, _) => NetworkParams::init(&NetConfig::toy(), a.seed)?,
    };
    let bytes = event_bytes(&a.events, &params)?;
    let mut opts = PipelineOptions::new(window_us(a.window_ms)?);
    opts.threads = thread_budget();
    print!("{}", bench(&bytes, &params, &opts, a.reps)?.format());
    Ok(())
}

struct Window {
    seq: ee3d::dataset::SequenceData,
    sample: ee3d_core::scene::SampleRecord,
}

fn load_window(at: &WindowRef) -> Result<Window> {
    let ds = Dataset::open(&at.dataset)?;
    let name = at.sequence.clone().unwrap_or_else(|| ds.sequence_names[0].clone());
    let seq = ds.load_sequence(&name)?;
    if at.window >= seq.len() {
        return Err(Error::config(format!("{name} has {} windows", seq.len())));
    }
    let sample = seq.sample(at.window)?;
    Ok(Window { seq, sample })
}

fn cmd_render(a: RenderArgs) -> Result<()> {
    let Window { seq, sample } = load_window(&a.at)?;
    let (heatmaps, mask, joints) = match &a.model {
        None => (sample.heatmaps.clone(), sample.mask.clone(), sample.joints),
        Some(m) => {
            let params = load_model(m)?;
            let mut est = StreamingEstimator::new(&params);
            let mut last = None;
            for s in seq.samples()?.into_iter().take(a.at.window + 1) {
                last = Some(est.push(&s.lnes)?);
            }
            let o = last.expect("window exists");
            let mask = Mask { height: o.mask.h, width: o.mask.w, values: o.mask.data.iter().map(|&v| v as f32).collect() };
            (o.heatmaps.data.iter().map(|&v| v as f32).collect(), mask, Skeleton16::from_flat(&o.pose)?)
        }
    };
    let intr = &seq.intrinsics;
    let scale = intr.height / mask.height.max(1);
    let images = [
        ("lnes", RenderKind::Lnes, render_lnes(&sample.lnes)),
        ("heatmaps", RenderKind::Heatmaps, render_heatmaps(&heatmaps, scale)),
        ("mask", RenderKind::Mask, render_mask(&mask, scale)),
        ("pose", RenderKind::Pose, render_pose(&joints, intr, Some(render_lnes(&sample.lnes)))),
    ];
    if a.kind == RenderKind::All {
        fs::create_dir_all(&a.out).at(&a.out)?;
        for (name, _, img) in &images {
            let ext = if img.channels == 1 { "pgm" } else { "ppm" };
            img.save(&a.out.join(format!("{name}.{ext}")))?;
        }
    } else if let Some((_, _, img)) = images.iter().find(|i| i.1 == a.kind) {
        img.save(&a.out)?;
    }
    let visible = project_skeleton(&joints, intr).iter().flatten().count();
    println!("window {} t0 {} joints_in_view {visible}", a.at.window, sample.window.t0);
    Ok(())
}

fn cmd_augment(a: AugmentArgs) -> Result<()> {
    let Window { sample, .. } = load_window(&a.at)?;
    let stream = read_events(&a.augment_bg, (sample.lnes.width as u16, sample.lnes.height as u16))?;
    let mut source = AugmentSource::new(stream, window_us(a.window_ms)?)?;
    source.seek(a.at.window);
    let bg = source.next_frame(sample.lnes.height, sample.lnes.width)?;
    let out = augment_lnes(&sample.lnes, &sample.mask, &bg)?;
    side_by_side(&[render_lnes(&sample.lnes), render_lnes(&bg), render_lnes(&out)]).save(&a.out)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Infer(a) => cmd_infer(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Render(a) => cmd_render(a),
        Command::AugmentPreview(a) => cmd_augment(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("E_USAGE: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        // a closed stdout (e.g. piping into `head`) ends the run quietly
        Err(Error::Io { source, .. }) if source.kind() == io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("{}: {msg}", e.code());
            ExitCode::FAILURE
        }
    }
}
