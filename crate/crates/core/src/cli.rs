//! Command-line entry point.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::ablation::{mean_delta, run_ablation, summary, to_csv, variants};
use crate::codec::raw::{read_raw, write_raw, RawDims};
use crate::codec::vcpf::{write_vcpf, VERSION as VCPF_VERSION};
use crate::codec::{encode, CodecConfig, LumaSequence};
use crate::data::{load_manifest, read_manifest, PairedSequence};
use crate::metrics::{bench, evaluate_sequence, plot_fluctuation, BENCH_RESOLUTIONS};
use crate::model::{GateAxis, PriorFlags};
use crate::synth::moving_sequence;
use crate::train::{Checkpoint, Profile, RunConfig, Schedule, TrainConfig, TrainSet, Trainer, CHECKPOINT_VERSION};

type BoxError = Box<dyn std::error::Error>;

#[derive(Parser, Debug)]
#[command(name = "cpga", version, about = "Coding-prior guided quality enhancement for compressed video")]
pub struct Cli {
    /// Worker threads for encoding and metrics (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write synthetic moving-texture luma sequences and a manifest skeleton.
    Synth(SynthArgs),
    /// Encode a raw luma file with the reference codec into a VCPF container.
    EncodePriors(EncodeArgs),
    /// Train a model on a manifest of raw/VCPF pairs.
    Train(TrainArgs),
    /// Evaluate a checkpoint on every sequence of a manifest.
    Eval(EvalArgs),
    /// Enhance one sequence and write its planes and report.
    Enhance(EnhanceArgs),
    /// Measure inference frames per second.
    Bench(BenchArgs),
    /// Train and evaluate the prior-ablation variants.
    Ablate(AblateArgs),
}

fn parse_qp(s: &str) -> Result<u32, String> {
    match s.parse::<u32>() {
        Ok(v @ (22 | 27 | 32 | 37)) => Ok(v),
        _ => Err(format!("unsupported QP {s:?}; supported: 22, 27, 32, 37")),
    }
}

fn parse_block(s: &str) -> Result<u32, String> {
    match s.parse::<u32>() {
        Ok(v @ (8 | 16)) => Ok(v),
        _ => Err(format!("unsupported block size {s:?}; supported: 8, 16")),
    }
}

fn parse_range(s: &str) -> Result<u32, String> {
    match s.parse::<u32>() {
        Ok(v @ 1..=64) => Ok(v),
        _ => Err(format!("search range {s:?} must be an integer in 1..=64")),
    }
}

/// `mv,pred,resid` subsets; `none` for no priors.
fn parse_priors(s: &str) -> Result<PriorFlags, String> {
    let mut f = PriorFlags::NONE;
    if s == "none" {
        return Ok(f);
    }
    for part in s.split(',') {
        match part.trim() {
            "mv" => f.mv = true,
            "pred" => f.pred = true,
            "resid" => f.resid = true,
            other => return Err(format!("unknown prior {other:?}; expected a comma list of mv, pred, resid or `none`")),
        }
    }
    Ok(f)
}

fn parse_resolution(s: &str) -> Result<(usize, usize), String> {
    let err = || format!("resolution {s:?} must be WxH with both sides positive multiples of 4");
    let (w, h) = s.split_once('x').ok_or_else(err)?;
    let (w, h): (usize, usize) = (w.parse().map_err(|_| err())?, h.parse().map_err(|_| err())?);
    if w == 0 || h == 0 || w % 4 != 0 || h % 4 != 0 {
        return Err(err());
    }
    Ok((w, h))
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2)]
    count: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 7)]
    frames: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug, Serialize)]
struct CodecArgs {
    #[arg(long, value_parser = parse_qp, default_value = "37")]
    qp: u32,
    #[arg(long, value_parser = parse_block, default_value = "16")]
    block: u32,
    /// Full-search range in pixels.
    #[arg(long, value_parser = parse_range, default_value = "8")]
    range: u32,
}

#[derive(Args, Debug)]
struct EncodeArgs {
    /// Raw 8-bit luma file; dimensions from `<input>.hdr` unless given.
    #[arg(long)]
    input: PathBuf,
    /// VCPF container to write.
    #[arg(long)]
    output: PathBuf,
    /// Frame width (default: from the sidecar).
    #[arg(long)]
    width: Option<usize>,
    /// Frame height (default: from the sidecar).
    #[arg(long)]
    height: Option<usize>,
    /// Frames to read (default: the whole file).
    #[arg(long)]
    frames: Option<usize>,
    #[command(flatten)]
    codec: CodecArgs,
}

#[derive(Args, Debug, Default)]
struct ModelArgs {
    /// Model/training config file (TOML with [model] and [train] tables).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Batch/crop preset; `paper` is 32 × 128², `desk` 8 × 64².
    #[arg(long)]
    profile: Option<Profile>,
    /// Prior gate softmax axis, channel or temporal (default: channel).
    #[arg(long)]
    gate_axis: Option<GateAxis>,
    /// Base feature width (default: 32).
    #[arg(long)]
    channels: Option<usize>,
    /// Priors fed to the network: comma list of mv, pred, resid, or none
    /// (default: mv,pred,resid).
    #[arg(long, value_parser = parse_priors)]
    priors: Option<PriorFlags>,
    /// Disable the channel shifts of the enhancement head.
    #[arg(long)]
    no_shifts: bool,
    /// Initialization and sampling seed (default: 0).
    #[arg(long)]
    seed: Option<u64>,
    /// Clips per step (default: 32, or the profile's).
    #[arg(long)]
    batch: Option<usize>,
    /// Square training crop, a multiple of 4 (default: 128, or the profile's).
    #[arg(long)]
    crop: Option<usize>,
    /// Adam learning rate (default: 1e-4).
    #[arg(long)]
    lr: Option<f64>,
    /// Total training iterations (default: 1000).
    #[arg(long)]
    iters: Option<u64>,
    /// Batch-sampling threads, recorded in checkpoints (default: 1).
    #[arg(long)]
    workers: Option<usize>,
    /// Learning-rate schedule, constant or cosine (default: constant).
    #[arg(long)]
    schedule: Option<Schedule>,
}

impl ModelArgs {
    /// Built-in defaults, then the config file, then flags.
    fn resolve(&self) -> Result<RunConfig, BoxError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_toml(&read_text(path)?)?,
            None => RunConfig::default(),
        };
        if let Some(p) = self.profile {
            let preset = TrainConfig::profile(p);
            cfg.train.batch = preset.batch;
            cfg.train.crop = preset.crop;
        }
        let m = &mut cfg.model;
        let t = &mut cfg.train;
        if let Some(v) = self.gate_axis {
            m.gate_axis = v;
        }
        if let Some(v) = self.channels {
            m.channels = v;
        }
        if let Some(v) = self.priors {
            m.priors = v;
        }
        if self.no_shifts {
            m.shifts = false;
        }
        if let Some(v) = self.seed {
            m.init_seed = v;
            t.seed = v;
        }
        if let Some(v) = self.batch {
            t.batch = v;
        }
        if let Some(v) = self.crop {
            t.crop = v;
        }
        if let Some(v) = self.lr {
            t.lr = v;
        }
        if let Some(v) = self.iters {
            t.max_iters = v;
        }
        if let Some(v) = self.workers {
            t.workers = v;
        }
        if let Some(v) = self.schedule {
            t.schedule = v;
        }
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Output folder for the checkpoint, loss curve and run manifest.
    #[arg(long)]
    out: PathBuf,
    /// Continue from a checkpoint; `--iters` sets the new total.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Checkpoint every N iterations (0: only at the end).
    #[arg(long, default_value_t = 0)]
    save_every: u64,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also render each fluctuation curve as PNG.
    #[arg(long)]
    plot: bool,
}

#[derive(Args, Debug)]
struct EnhanceArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    raw: PathBuf,
    #[arg(long)]
    vcpf: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Checkpoint to time; a freshly initialized model otherwise.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// WxH, repeatable (default: 416x240, 832x480, 1280x720).
    #[arg(long = "resolution", value_parser = parse_resolution)]
    resolutions: Vec<(usize, usize)>,
    #[arg(long, default_value_t = 10)]
    frames: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Priors to ablate over; variants enable subsets of these.
    #[arg(long, value_parser = parse_priors, default_value = "mv,pred,resid")]
    flags: PriorFlags,
    /// Number of seeds per variant (seeds 0..N).
    #[arg(long, default_value_t = 3)]
    seeds: u64,
    /// List the variants and exit.
    #[arg(long)]
    dry_run: bool,
    #[command(flatten)]
    model: ModelArgs,
}

/// Record of one invocation, written next to its outputs.
#[derive(Serialize)]
struct RunManifest<'a, T: Serialize> {
    subcommand: &'a str,
    version: &'a str,
    vcpf_version: u16,
    checkpoint_version: &'a str,
    seed: Option<u64>,
    inputs: Vec<String>,
    outputs: Vec<String>,
    resolved: T,
}

/// Writes `<dir>/<subcommand>.run.toml`, or `<output>.run.toml` for
/// encode-priors so that several containers can share a folder.
fn write_manifest<T: Serialize>(dir: &Path, subcommand: &str, seed: Option<u64>, inputs: &[&Path], outputs: &[&Path], resolved: T) -> Result<(), BoxError> {
    let m = RunManifest {
        subcommand,
        version: env!("CARGO_PKG_VERSION"),
        vcpf_version: VCPF_VERSION,
        checkpoint_version: CHECKPOINT_VERSION,
        seed,
        inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        resolved,
    };
    let path = match (subcommand, outputs) {
        ("encode-priors", [out]) => dir.join(format!("{}.run.toml", out.file_name().map(|n| n.to_string_lossy()).unwrap_or_default())),
        _ => dir.join(format!("{subcommand}.run.toml")),
    };
    fs::write(&path, toml::to_string(&m)?).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(())
}

fn read_text(path: &Path) -> Result<String, BoxError> {
    fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn create_dir(dir: &Path) -> Result<(), BoxError> {
    fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()).into())
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "sequence".into())
}

/// Parse `argv` and run; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), BoxError> {
    if let Some(n) = cli.threads {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::EncodePriors(a) => encode_priors(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Enhance(a) => enhance(a),
        Command::Bench(a) => bench_cmd(a),
        Command::Ablate(a) => ablate(a),
    }
}

fn synth(a: SynthArgs) -> Result<(), BoxError> {
    create_dir(&a.out)?;
    let mut lines = String::from("# raw_path vcpf_path\n");
    let mut outputs = Vec::new();
    for i in 0..a.count {
        let name = format!("seq{i:03}");
        let path = a.out.join(format!("{name}.y"));
        write_raw(&moving_sequence(a.width, a.height, a.frames, a.seed + i as u64), &path)?;
        lines.push_str(&format!("{name}.y {name}.vcpf\n"));
        outputs.push(path);
    }
    let manifest = a.out.join("manifest.txt");
    fs::write(&manifest, lines)?;
    println!("wrote {} sequences and {}", a.count, manifest.display());
    let outs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).chain([manifest.as_path()]).collect();
    write_manifest(&a.out, "synth", Some(a.seed), &[], &outs, (a.count, a.width, a.height, a.frames))
}

fn encode_priors(a: EncodeArgs) -> Result<(), BoxError> {
    let dims = match (a.width, a.height, a.frames) {
        (Some(width), Some(height), Some(frames)) => Some(RawDims { width, height, frames }),
        (None, None, None) => None,
        _ => return Err("--width, --height and --frames must be given together".into()),
    };
    let raw: LumaSequence = read_raw(&a.input, dims)?;
    let config = CodecConfig::new(a.codec.block, a.codec.range, a.codec.qp)?;
    let start = Instant::now();
    let enc = encode(&raw, &config)?;
    write_vcpf(&enc, &a.output)?;
    println!(
        "{}: {} frames {}x{} at QP {} -> {} ({:.2}s)",
        a.input.display(),
        raw.len(),
        raw.width(),
        raw.height(),
        a.codec.qp,
        a.output.display(),
        start.elapsed().as_secs_f64()
    );
    let dir = a.output.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    write_manifest(dir, "encode-priors", None, &[&a.input], &[&a.output], &a.codec)
}

fn train(a: TrainArgs) -> Result<(), BoxError> {
    create_dir(&a.out)?;
    let data = TrainSet::new(load_manifest(&a.manifest)?);
    let mut trainer = match &a.resume {
        Some(path) => {
            let mut t = Trainer::resume(Checkpoint::load(path)?)?;
            if let Some(iters) = a.model.iters {
                t.config.max_iters = iters;
            }
            t
        }
        None => {
            let cfg = a.model.resolve()?;
            Trainer::new(cfg.model, cfg.train)?
        }
    };
    let resolved = RunConfig { model: trainer.model.config().clone(), train: trainer.config.clone() };
    println!("{} parameters, {} training clips, iterations {}..{}", trainer.model.num_params(), data.centres.len(), trainer.iteration, trainer.config.max_iters);
    let ckpt_path = a.out.join("checkpoint.safetensors");
    let curve = a.out.join("loss.csv");
    let start = Instant::now();
    let mut save_err = None;
    trainer.run(&data, Some(&curve), |t, loss| {
        if t.iteration % 10 == 0 || t.iteration == t.config.max_iters {
            println!("iter {:>6}  loss {loss:.6}  {:.1}s", t.iteration, start.elapsed().as_secs_f64());
        }
        if a.save_every > 0 && t.iteration % a.save_every == 0 {
            if let Err(e) = t.checkpoint().save(&ckpt_path) {
                save_err.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = save_err {
        return Err(e.into());
    }
    trainer.checkpoint().save(&ckpt_path)?;
    println!("saved {}", ckpt_path.display());
    let seed = Some(trainer.config.seed);
    write_manifest(&a.out, "train", seed, &[&a.manifest], &[&ckpt_path, &curve], resolved)
}

fn eval(a: EvalArgs) -> Result<(), BoxError> {
    create_dir(&a.out)?;
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let model = ckpt.to_model()?;
    let pairs = read_manifest(&a.manifest)?;
    let mut text = String::new();
    let mut outputs = Vec::new();
    for (raw, vcpf) in &pairs {
        let seq = PairedSequence::load(raw, vcpf)?;
        let name = stem(raw);
        let (report, _) = evaluate_sequence(&model, &seq, &name)?;
        let csv = a.out.join(format!("{name}.csv"));
        report.write_fluctuation(&csv)?;
        outputs.push(csv);
        if a.plot {
            let png = a.out.join(format!("{name}.png"));
            plot_fluctuation(&report, &png)?;
            outputs.push(png);
        }
        println!("{}", report.summary());
        text.push_str(&report.summary());
        text.push('\n');
    }
    let summary = a.out.join("report.txt");
    fs::write(&summary, text)?;
    outputs.push(summary);
    let outs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    write_manifest(&a.out, "eval", Some(ckpt.train.seed), &[&a.checkpoint, &a.manifest], &outs, RunConfig { model: ckpt.model, train: ckpt.train })
}

fn enhance(a: EnhanceArgs) -> Result<(), BoxError> {
    create_dir(&a.out)?;
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let model = ckpt.to_model()?;
    let seq = PairedSequence::load(&a.raw, &a.vcpf)?;
    let name = stem(&a.raw);
    let (report, planes) = evaluate_sequence(&model, &seq, &name)?;
    let planes_path = a.out.join(format!("{name}.enhanced.y"));
    write_raw(&LumaSequence::new(planes)?, &planes_path)?;
    let csv = a.out.join(format!("{name}.csv"));
    report.write_fluctuation(&csv)?;
    println!("{}", report.summary());
    write_manifest(&a.out, "enhance", Some(ckpt.train.seed), &[&a.checkpoint, &a.raw, &a.vcpf], &[&planes_path, &csv], RunConfig { model: ckpt.model, train: ckpt.train })
}

fn bench_cmd(a: BenchArgs) -> Result<(), BoxError> {
    let model = match &a.checkpoint {
        Some(path) => Checkpoint::load(path)?.to_model()?,
        None => crate::model::Cpga::new(a.model.resolve()?.model)?,
    };
    if a.frames == 0 {
        return Err("--frames must be positive".into());
    }
    let resolutions = if a.resolutions.is_empty() { BENCH_RESOLUTIONS.to_vec() } else { a.resolutions.clone() };
    let mut csv = String::from("width,height,frames,mean_fps,stdev_fps,params\n");
    for (w, h) in resolutions {
        let r = bench(&model, w, h, a.frames)?;
        println!("{w}x{h}: {:.3} fps (stdev {:.3}) over {} frames, {} params", r.mean_fps, r.stdev_fps, r.frames, r.params);
        csv.push_str(&format!("{w},{h},{},{},{},{}\n", r.frames, r.mean_fps, r.stdev_fps, r.params));
    }
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        let path = dir.join("bench.csv");
        fs::write(&path, csv)?;
        write_manifest(dir, "bench", None, &[], &[&path], model.config())?;
    }
    Ok(())
}

fn ablate(a: AblateArgs) -> Result<(), BoxError> {
    let grid = variants(a.flags);
    for (name, f) in &grid {
        println!("{name}: {}", f.label());
    }
    if a.dry_run {
        return Ok(());
    }
    create_dir(&a.out)?;
    let cfg = a.model.resolve()?;
    let data = TrainSet::new(load_manifest(&a.manifest)?);
    let eval: Vec<(usize, usize)> = data.sequences.iter().enumerate().map(|(s, seq)| (s, seq.len() / 2)).collect();
    let seeds: Vec<u64> = (0..a.seeds).collect();
    let rows = run_ablation(&cfg.model, &cfg.train, &data, &eval, &grid, &seeds, |r| {
        println!("{} seed {}: dPSNR {:+.4} dB, dSSIM {:+.5}, loss {:.6}", r.variant, r.seed, r.delta_psnr, r.delta_ssim, r.final_loss);
    })?;
    let csv = a.out.join("ablation.csv");
    fs::write(&csv, to_csv(&rows))?;
    print!("{}", summary(&rows));
    if let (Some(m7), Some(m1)) = (mean_delta(&rows, "Model-7"), mean_delta(&rows, "Model-1")) {
        println!("Model-7 - Model-1: {:+.4} dB", m7 - m1);
    }
    write_manifest(&a.out, "ablate", Some(cfg.train.seed), &[&a.manifest], &[&csv], cfg)
}
