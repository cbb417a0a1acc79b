use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use modsm::cli::{self, AblateConfig, ConfigFile, RunConfig};
use modsm::params::ParamOverrides;
use modsm::solver::AblationMode;
use modsm::synth::SynthSpec;
use modsm::Result;

#[derive(Parser)]
#[command(
    name = "modsm",
    version,
    about = "Streaming moving-object detection with saliency-guided subspace learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Detect moving objects across a directory of frames
    Run(RunArgs),
    /// Score a directory of masks against ground truth
    Evaluate(EvaluateArgs),
    /// Compare the three objective variants on one stream
    Ablate(AblateArgs),
    /// Generate a deterministic synthetic test sequence
    Synth(SynthArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Directory of input frames (.pgm / .png)
    #[arg(long)]
    frames: Option<PathBuf>,
    /// Directory of saliency maps with filenames matching the frames
    #[arg(long)]
    saliency: Option<PathBuf>,
    /// Directory of ground-truth masks (enables --roc)
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Output directory for masks, params.json, and diagnostics
    #[arg(long)]
    out: Option<PathBuf>,
    /// Objective variant: baseline, connectivity, or saliency
    #[arg(long)]
    mode: Option<String>,
    /// Number of leading object-free frames used for training
    #[arg(long = "train-count")]
    train_count: Option<usize>,
    /// Parameter override, e.g. --param beta=9 (repeatable)
    #[arg(long = "param", value_name = "KEY=VALUE")]
    param: Vec<String>,
    /// JSON config file; explicit flags override its fields
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for randomized fallbacks
    #[arg(long)]
    seed: Option<u64>,
    /// Emit per-frame diagnostics as JSON lines
    #[arg(long)]
    verbose: bool,
    /// Substitute all-zero saliency when a map file is missing
    #[arg(long)]
    allow_missing_saliency: bool,
    /// Write a threshold-sweep ROC curve CSV (needs --truth)
    #[arg(long)]
    roc: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    masks: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// Per-frame CSV output path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    frames: PathBuf,
    #[arg(long)]
    saliency: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// Comparison CSV output path
    #[arg(long)]
    out: PathBuf,
    #[arg(long = "train-count", default_value_t = cli::DEFAULT_TRAINING_COUNT)]
    train_count: usize,
    #[arg(long = "param", value_name = "KEY=VALUE")]
    param: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SynthArgs {
    /// Output root; frames/, truth/, saliency/, saliency_degraded/ go under it
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 80)]
    frames: usize,
    #[arg(long = "noise-sigma", default_value_t = 5.0)]
    noise_sigma: f64,
    /// Fraction of pixels that flicker every frame
    #[arg(long, default_value_t = 0.0)]
    flicker: f64,
    #[arg(long = "flicker-amp", default_value_t = 60.0)]
    flicker_amp: f64,
    #[arg(long = "object-size", default_value_t = 12)]
    object_size: usize,
    #[arg(long = "object-intensity", default_value_t = 100.0)]
    object_intensity: f64,
    /// Leading object-free frames
    #[arg(long, default_value_t = 20)]
    warmup: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_overrides(pairs: &[String]) -> Result<ParamOverrides> {
    let mut overrides = ParamOverrides::default();
    for pair in pairs {
        let (key, value) = pair.split_once('=').ok_or_else(|| {
            modsm::Error::InvalidParam(format!("--param expects KEY=VALUE, got `{pair}`"))
        })?;
        overrides.set(key.trim(), value.trim())?;
    }
    Ok(overrides)
}

fn run_command(args: RunArgs) -> Result<()> {
    let file = match &args.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let frames_dir = args.frames.or(file.frames).ok_or_else(|| {
        modsm::Error::InvalidParam("--frames is required (flag or config file)".into())
    })?;
    let output_dir = args.out.or(file.out).ok_or_else(|| {
        modsm::Error::InvalidParam("--out is required (flag or config file)".into())
    })?;
    let mode: AblationMode = args
        .mode
        .or(file.mode)
        .as_deref()
        .unwrap_or("saliency")
        .parse()?;

    let flag_overrides = parse_overrides(&args.param)?;
    let config = RunConfig {
        saliency_dir: args.saliency.or(file.saliency),
        truth_dir: args.truth.or(file.truth),
        overrides: flag_overrides.over(&file.params),
        training_count: args
            .train_count
            .or(file.train_count)
            .unwrap_or(cli::DEFAULT_TRAINING_COUNT),
        seed: args.seed.or(file.seed).unwrap_or(0),
        verbose: args.verbose || file.verbose.unwrap_or(false),
        allow_missing_saliency: args.allow_missing_saliency
            || file.allow_missing_saliency.unwrap_or(false),
        roc_out: args.roc,
        ..RunConfig::new(frames_dir, output_dir, mode)
    };
    let summary = cli::cmd_run(&config)?;
    println!(
        "processed {} frames ({} converged) in {} mode -> {}",
        summary.frames_processed,
        summary.converged_frames,
        mode,
        config.output_dir.display()
    );
    Ok(())
}

fn evaluate_command(args: EvaluateArgs) -> Result<()> {
    let report = cli::cmd_evaluate(&args.masks, &args.truth, &args.out)?;
    println!(
        "evaluated {} frames: mean F1 = {:.4} (overall F1 = {:.4})",
        report.frames.len(),
        report.mean_f1,
        report.overall_f1
    );
    Ok(())
}

fn ablate_command(args: AblateArgs) -> Result<()> {
    let config = AblateConfig {
        frames_dir: args.frames,
        saliency_dir: args.saliency,
        truth_dir: args.truth,
        out_csv: args.out,
        overrides: parse_overrides(&args.param)?,
        training_count: args.train_count,
        seed: args.seed,
    };
    let rows = cli::cmd_ablate(&config)?;
    for row in rows {
        println!(
            "{:<12} mean F1 = {:.4}  fp = {}  fn = {}",
            row.mode.to_string(),
            row.mean_f1,
            row.total_false_pos,
            row.total_false_neg
        );
    }
    Ok(())
}

fn synth_command(args: SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        width: args.width,
        height: args.height,
        frames: args.frames,
        noise_sigma: args.noise_sigma,
        flicker_fraction: args.flicker,
        flicker_amplitude: args.flicker_amp,
        object_size: args.object_size,
        object_intensity: args.object_intensity,
        warmup: args.warmup,
        seed: args.seed,
    };
    let dirs = cli::cmd_synth(&spec, &args.out)?;
    println!(
        "wrote {} frames under {} (frames/, truth/, saliency/, saliency_degraded/)",
        spec.frames,
        dirs.frames.parent().unwrap_or(&args.out).display()
    );
    Ok(())
}

fn configure_threads() {
    if let Ok(value) = std::env::var("MODSM_THREADS") {
        match value.trim().parse::<usize>() {
            Ok(n) if n >= 1 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    log::warn!("could not apply MODSM_THREADS={n}: {e}");
                }
            }
            _ => log::warn!("ignoring invalid MODSM_THREADS value `{value}`"),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    configure_threads();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => run_command(args),
        Command::Evaluate(args) => evaluate_command(args),
        Command::Ablate(args) => ablate_command(args),
        Command::Synth(args) => synth_command(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}
