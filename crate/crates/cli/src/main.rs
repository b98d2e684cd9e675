use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ctxvc_autograd::ParamStore;
use serde::Serialize;

use ctxvc::eval::evaluate_sequence;
use ctxvc::metrics::{bd_rate, ms_ssim_with, points_to_csv, psnr, BdFit, QualityMetric, RDCurve};
use ctxvc::pipeline::{container_stats, Codec};
use ctxvc::training::{clip_from_frames, synthetic_clip, train_stage, TrainConfig, TrainStage};
use ctxvc::video_io::{encode_yuv420, load_sequence, png_frame_name, write_png_dir, SourceFormat};
use ctxvc::{load_checkpoint, save_checkpoint, BitstreamContainer, CodecConfig, CodecModel, RawSequence};

#[derive(Parser)]
#[command(name = "ctxvc", version, about = "Learned inter-frame video codec")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a randomly initialised checkpoint.
    Init(InitArgs),
    /// Train a checkpoint on a sequence (or a synthetic clip).
    Train(TrainArgs),
    /// Encode a raw sequence into a container.
    Encode(EncodeArgs),
    /// Decode a container to a PNG directory or a .yuv file.
    Decode(DecodeArgs),
    /// Per-frame bpp and substream breakdown as JSON.
    Stats {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// PSNR and MS-SSIM between two sequences.
    Metrics(MetricsArgs),
    /// BD-rate of `test` against `anchor` (CSV: lambda,bpp,psnr,msssim).
    Bdrate(BdrateArgs),
    /// Decode, score against the source and write a JSON report.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Png,
    Yuv420,
}

impl From<Format> for SourceFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Png => SourceFormat::PngDir,
            Format::Yuv420 => SourceFormat::Yuv420,
        }
    }
}

#[derive(Args)]
struct SourceArgs {
    /// PNG directory (frame_00000.png, ...) or raw I420 file.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "png")]
    format: Format,
    /// Required for yuv420.
    #[arg(long, default_value_t = 0)]
    width: usize,
    #[arg(long, default_value_t = 0)]
    height: usize,
    /// Defaults to every frame available.
    #[arg(long)]
    frames: Option<usize>,
}

impl SourceArgs {
    fn load(&self) -> Result<RawSequence> {
        load_source(&self.input, self.format, self.width, self.height, self.frames)
    }
}

fn load_source(path: &Path, format: Format, width: usize, height: usize, frames: Option<usize>) -> Result<RawSequence> {
    let n = match (frames, format) {
        (Some(n), _) => n,
        (None, Format::Png) => (0..).take_while(|&i| path.join(png_frame_name(i)).exists()).count(),
        (None, Format::Yuv420) => {
            if width == 0 || height == 0 {
                bail!("--width and --height are required for yuv420 input");
            }
            let len = fs::metadata(path).with_context(|| format!("reading {}", path.display()))?.len() as usize;
            len / (width * height + 2 * width.div_ceil(2) * height.div_ceil(2))
        }
    };
    load_sequence(path, format.into(), width, height, n).with_context(|| format!("loading {}", path.display()))
}

#[derive(Args)]
struct InitArgs {
    #[arg(long)]
    out: PathBuf,
    /// JSON codec config; defaults to the full-width network.
    #[arg(long, conflicts_with = "tiny")]
    config: Option<PathBuf>,
    /// Narrow networks for CPU experiments.
    #[arg(long)]
    tiny: bool,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Disable coarse-to-fine motion fusion.
    #[arg(long)]
    single_scale: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Stage {
    Single,
    Cascaded,
    Msssim,
}

impl From<Stage> for TrainStage {
    fn from(s: Stage) -> Self {
        match s {
            Stage::Single => TrainStage::SingleFrame,
            Stage::Cascaded => TrainStage::Cascaded,
            Stage::Msssim => TrainStage::MsssimFinetune,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "single")]
    stage: Stage,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Unrolled frames per step.
    #[arg(long)]
    frames_per_step: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    crop: Option<usize>,
    /// Stop gradients at the reference frame.
    #[arg(long)]
    detach_reference: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Training sequence; a synthetic 7-frame moving-rectangle clip when omitted.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "png")]
    format: Format,
    #[arg(long, default_value_t = 0)]
    width: usize,
    #[arg(long, default_value_t = 0)]
    height: usize,
    #[arg(long)]
    frames: Option<usize>,
    /// JSON-lines log, one entry per step.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct EncodeArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long, default_value_t = 10)]
    gop: usize,
    /// Must match the checkpoint's lambda when given.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// `.yuv` writes I420, anything else a PNG directory.
    #[arg(long)]
    out: PathBuf,
    /// Conceal damaged frames instead of failing.
    #[arg(long)]
    lenient: bool,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    dist: PathBuf,
    #[arg(long, value_enum, default_value = "png")]
    format: Format,
    #[arg(long, default_value_t = 0)]
    width: usize,
    #[arg(long, default_value_t = 0)]
    height: usize,
    #[arg(long)]
    frames: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    Psnr,
    Msssim,
}

#[derive(Clone, Copy, ValueEnum)]
enum Fit {
    Pchip,
    Cubic,
}

#[derive(Args)]
struct BdrateArgs {
    #[arg(long)]
    anchor: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long, value_enum, default_value = "psnr")]
    metric: Metric,
    #[arg(long, value_enum, default_value = "pchip")]
    fit: Fit,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    container: PathBuf,
    #[arg(long)]
    source: PathBuf,
    #[arg(long, value_enum, default_value = "png")]
    format: Format,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Append the sequence's RD point to this CSV (header written if new).
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn read_container(path: &Path) -> Result<BitstreamContainer> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(BitstreamContainer::from_bytes(&bytes)?)
}

fn load_model(path: &Path) -> Result<(CodecModel, ParamStore<f32>)> {
    load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn write_json(path: Option<&Path>, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display()))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn init(a: InitArgs) -> Result<()> {
    let mut cfg = match (&a.config, a.tiny) {
        (Some(p), _) => CodecConfig::load(p)?,
        (None, true) => CodecConfig::tiny(),
        (None, false) => CodecConfig::default(),
    };
    if let Some(l) = a.lambda {
        cfg.lambda = l;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if a.single_scale {
        cfg.multiscale_motion = false;
    }
    let (_, store) = CodecModel::new(&cfg)?;
    save_checkpoint(&a.out, &cfg, &store)?;
    eprintln!("wrote {} ({} parameters)", a.out.display(), store.num_trainable());
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let (model, mut store) = load_model(&a.checkpoint)?;
    let mut cfg = TrainConfig::for_stage(a.stage.into());
    cfg.lambda = model.config.lambda;
    if let Some(v) = a.steps {
        cfg.steps = v;
    }
    if let Some(v) = a.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = a.frames_per_step {
        cfg.frames = v;
    }
    if let Some(v) = a.batch {
        cfg.batch = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    cfg.detach_reference = a.detach_reference;
    let frames = match &a.input {
        Some(p) => load_source(p, a.format, a.width, a.height, a.frames)?.frames,
        None => synthetic_clip(7, 64, 64, cfg.seed),
    };
    let (w, h) = frames[0].dims();
    cfg.crop = a.crop.unwrap_or(cfg.crop).min(w).min(h);
    let clips = vec![clip_from_frames(&frames)];
    let mut log: Option<BufWriter<File>> = match &a.log {
        Some(p) => Some(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => None,
    };
    let start = Instant::now();
    let history = train_stage(&model, &mut store, &clips, &cfg, log.as_mut().map(|w| w as &mut dyn Write))?;
    if let Some(mut w) = log {
        w.flush()?;
    }
    save_checkpoint(&a.out, &model.config, &store)?;
    if let Some(last) = history.last() {
        eprintln!(
            "{} steps in {:.1}s, final loss {:.4} (rate {:.4} bpp, distortion {:.6})",
            history.len(),
            start.elapsed().as_secs_f64(),
            last.loss,
            last.rate,
            last.distortion
        );
    }
    Ok(())
}

fn encode(a: EncodeArgs) -> Result<()> {
    let (model, store) = load_model(&a.checkpoint)?;
    if let Some(l) = a.lambda {
        if l != model.config.lambda {
            bail!("--lambda {l} does not match the checkpoint's lambda {}", model.config.lambda);
        }
    }
    let seq = a.source.load()?;
    let codec = Codec::new(&model, &store);
    let enc = codec.encode_sequence(&seq, a.gop)?;
    let bytes = enc.container.to_bytes();
    fs::write(&a.out, &bytes).with_context(|| format!("writing {}", a.out.display()))?;
    let bpp = enc.container.payload_bits() as f64 / (seq.width * seq.height * seq.len()) as f64;
    eprintln!("{} frames -> {} bytes, {bpp:.4} bpp", seq.len(), bytes.len());
    Ok(())
}

fn write_sequence(seq: &RawSequence, out: &Path) -> Result<()> {
    if out.extension().is_some_and(|e| e == "yuv") {
        fs::write(out, encode_yuv420(seq)?).with_context(|| format!("writing {}", out.display()))?;
    } else {
        write_png_dir(seq, out)?;
    }
    Ok(())
}

fn decode(a: DecodeArgs) -> Result<()> {
    let (model, store) = load_model(&a.checkpoint)?;
    let codec = Codec::new(&model, &store);
    let seq = if a.lenient {
        let bytes = fs::read(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
        let dec = codec.decode_sequence_lenient(&bytes)?;
        for (i, e) in dec.errors.iter().enumerate() {
            if let Some(e) = e {
                log::warn!("frame {i} concealed: {e}");
            }
        }
        RawSequence::new(dec.frames, 30.0)?
    } else {
        codec.decode_sequence(&read_container(&a.input)?)?
    };
    write_sequence(&seq, &a.out)?;
    eprintln!("decoded {} frames to {}", seq.len(), a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct FrameMetrics {
    index: usize,
    psnr: f64,
    msssim: f64,
}

#[derive(Serialize)]
struct MetricsReport {
    psnr: f64,
    msssim: f64,
    msssim_scales: usize,
    frames: Vec<FrameMetrics>,
}

fn metrics(a: MetricsArgs) -> Result<()> {
    let r = load_source(&a.reference, a.format, a.width, a.height, a.frames)?;
    let d = load_source(&a.dist, a.format, a.width, a.height, Some(a.frames.unwrap_or(r.len())))?;
    if r.len() != d.len() {
        bail!("reference has {} frames, distorted has {}", r.len(), d.len());
    }
    let mut frames = Vec::with_capacity(r.len());
    let mut scales = 5;
    for (i, (x, y)) in r.frames.iter().zip(&d.frames).enumerate() {
        let ms = ms_ssim_with(x, y, true)?;
        scales = ms.scales;
        frames.push(FrameMetrics {
            index: i,
            psnr: psnr(x, y)?,
            msssim: ms.score,
        });
    }
    let n = frames.len().max(1) as f64;
    write_json(
        None,
        &MetricsReport {
            psnr: frames.iter().map(|f| f.psnr).sum::<f64>() / n,
            msssim: frames.iter().map(|f| f.msssim).sum::<f64>() / n,
            msssim_scales: scales,
            frames,
        },
    )
}

fn bdrate(a: BdrateArgs) -> Result<()> {
    let anchor = RDCurve::read_csv(&a.anchor)?;
    let test = RDCurve::read_csv(&a.test)?;
    let metric = match a.metric {
        Metric::Psnr => QualityMetric::Psnr,
        Metric::Msssim => QualityMetric::MsSsim,
    };
    let fit = match a.fit {
        Fit::Pchip => BdFit::Pchip,
        Fit::Cubic => BdFit::Cubic,
    };
    println!("{:.4}", bd_rate(&anchor, &test, metric, fit)?);
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let container = read_container(&a.container)?;
    let (model, store) = load_model(&a.checkpoint)?;
    let h = container.header;
    let source = load_source(&a.source, a.format, h.width as usize, h.height as usize, Some(h.n_frames as usize))?;
    let codec = Codec::new(&model, &store);
    let report = evaluate_sequence(&codec, &source, &container)?;
    write_json(Some(&a.out), &report)?;
    if let Some(csv) = a.csv {
        let fresh = !csv.exists();
        let text = points_to_csv(&[report.rd_point()]);
        let body = if fresh { text.as_str() } else { text.split_once('\n').map_or("", |(_, rest)| rest) };
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(&csv)
            .and_then(|mut f| f.write_all(body.as_bytes()))
            .with_context(|| format!("appending to {}", csv.display()))?;
    }
    eprintln!("bpp {:.4}, PSNR {:.2} dB, MS-SSIM {:.4}", report.bpp, report.psnr, report.msssim);
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Init(a) => init(a),
        Command::Train(a) => train(a),
        Command::Encode(a) => encode(a),
        Command::Decode(a) => decode(a),
        Command::Stats { input } => write_json(None, &container_stats(&read_container(&input)?)),
        Command::Metrics(a) => metrics(a),
        Command::Bdrate(a) => bdrate(a),
        Command::Report(a) => report(a),
    }
}
