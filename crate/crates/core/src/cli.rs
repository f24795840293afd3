//! The `cfbi` command line: `gen-data`, `train`, `infer` and `eval`.
//!
//! Every command reads an optional run config (`--config`, see
//! [`crate::config`]); flags given on the command line override it. Exit
//! codes: 0 success, 1 usage or config error, 2 data error (missing or
//! malformed files), 3 numeric failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use candle::{DType, Device};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;
use crate::data::{generate_synthetic, load_dataset, load_masks, SynthConfig};
use crate::embedding::LabelMap;
use crate::error::{Error, Result};
use crate::inference::{multiscale_flip_inference, write_predictions};
use crate::metrics::{evaluate, SequencePair};
use crate::model::Cfbi;
use crate::training::{load_checkpoint, train, FeedbackMode, TrainOutput};

/// Kernels whose results may depend on scheduling, and what strict mode does
/// about them.
pub const NONDETERMINISTIC_KERNELS: &[(&str, &str)] = &[(
    "matmul (gemm crate)",
    "blocking of the inner products may change with the worker thread count; strict mode pins one thread",
)];

#[derive(Debug, Parser)]
#[command(name = "cfbi", version, about = "Foreground-background integrated video object segmentation")]
pub struct Cli {
    /// Run config file (flat TOML); flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for data generation, initialisation and sampling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Strict mode: list nondeterministic kernels and pin them to a fixed schedule.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic moving-shapes dataset.
    GenData(GenDataArgs),
    /// Train a model on a dataset directory.
    Train(TrainArgs),
    /// Segment every sequence of a dataset from its first mask.
    Infer(InferArgs),
    /// Score predicted masks against ground truth.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub seqs: usize,
    #[arg(long, default_value_t = 12)]
    pub frames: usize,
    /// Frame height and width.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 2)]
    pub objects: usize,
    /// Add an unlabelled look-alike of object 1.
    #[arg(long)]
    pub distractor: bool,
    /// Maximum initial speed in pixels per frame.
    #[arg(long)]
    pub speed: Option<f64>,
    /// Amplitude of the per-pixel noise in 8-bit levels.
    #[arg(long)]
    pub noise: Option<u8>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Feedback {
    Detached,
    Soft,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for checkpoints, `loss.csv` and `config.toml`.
    #[arg(long)]
    pub out: PathBuf,
    /// Warm-start from this checkpoint instead of a fresh initialisation.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub crop_size: Option<usize>,
    /// Current frames per training sample.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub bootstrap_ratio: Option<f64>,
    #[arg(long)]
    pub min_fg_pixels: Option<usize>,
    #[arg(long, value_enum)]
    pub feedback: Option<Feedback>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Disable the background matching maps and background instance means.
    #[arg(long)]
    pub no_background: bool,
    /// Compute in 64-bit floats.
    #[arg(long)]
    pub f64: bool,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Predictions are written as `<out>/<sequence>/masks/<frame>.png`.
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated input scales, e.g. `1.0,1.3`.
    #[arg(long, value_delimiter = ',')]
    pub scales: Option<Vec<f64>>,
    /// Also run on mirrored frames.
    #[arg(long)]
    pub flip: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of `<sequence>/masks/*.png` predictions.
    #[arg(long)]
    pub pred: PathBuf,
    /// Dataset directory with the ground-truth masks.
    #[arg(long)]
    pub gt: PathBuf,
    /// Where to write the JSON report.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Boundary tolerance in pixels (default: 0.8% of the diagonal, rounded up).
    #[arg(long)]
    pub tolerance: Option<f64>,
}

/// Exit code for an error: 1 usage/config, 2 data, 3 numeric.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidConfig(_) | Error::InvalidInput(_) => 1,
        Error::NotFound(_)
        | Error::InvalidData(_)
        | Error::MissingFirstMask(_)
        | Error::Io(_)
        | Error::Image(_)
        | Error::Json(_)
        | Error::Checkpoint(_) => 2,
        Error::Numeric(_) | Error::Tensor(_) => 3,
    }
}

/// Parses `args`, runs the command and maps the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// Runs a parsed command line.
pub fn run(cli: &Cli) -> Result<()> {
    if cli.deterministic {
        enable_strict_mode();
    }
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match &cli.command {
        Command::GenData(args) => cmd_gen_data(args, &cfg),
        Command::Train(args) => cmd_train(args, cfg),
        Command::Infer(args) => cmd_infer(args, cfg),
        Command::Eval(args) => cmd_eval(args, &cfg),
    }
}

fn enable_strict_mode() {
    eprintln!("strict mode: nondeterministic kernels");
    for (kernel, note) in NONDETERMINISTIC_KERNELS {
        eprintln!("  {kernel}: {note}");
    }
    // Read by candle's matmul and rayon before their first use.
    std::env::set_var("RAYON_NUM_THREADS", "1");
}

pub fn cmd_gen_data(args: &GenDataArgs, cfg: &RunConfig) -> Result<()> {
    let defaults = SynthConfig::default();
    let synth = SynthConfig {
        sequences: args.seqs,
        frames: args.frames,
        height: args.size,
        width: args.size,
        objects: args.objects,
        distractor: args.distractor,
        speed: args.speed.unwrap_or(defaults.speed),
        noise: args.noise.unwrap_or(defaults.noise),
        seed: cfg.seed,
        ..defaults
    };
    let dirs = generate_synthetic(&synth, &args.out)?;
    println!("wrote {} sequences to {}", dirs.len(), args.out.display());
    Ok(())
}

pub fn cmd_train(args: &TrainArgs, mut cfg: RunConfig) -> Result<()> {
    macro_rules! set {
        ($($field:ident),*) => {$(if let Some(v) = args.$field { cfg.$field = v; })*};
    }
    set!(steps, lr, momentum, batch_size, crop_size, n, bootstrap_ratio, checkpoint_every);
    if let Some(v) = args.min_fg_pixels {
        cfg.min_fg_pixels = v as i64;
    }
    if let Some(f) = args.feedback {
        cfg.feedback = match f {
            Feedback::Detached => FeedbackMode::Detached,
            Feedback::Soft => FeedbackMode::Soft,
        };
    }
    if args.no_background {
        cfg.background = false;
    }
    let train_cfg = cfg.train_config()?;
    let dtype = if args.f64 { DType::F64 } else { DType::F32 };
    let model = match &args.init {
        Some(path) => load_checkpoint(path, &Device::Cpu, dtype)?.0,
        None => Cfbi::new(&cfg.model_config()?, cfg.seed, &Device::Cpu, dtype)?,
    };
    let dataset = load_dataset(&args.data)?;
    std::fs::create_dir_all(&args.out)?;
    std::fs::write(args.out.join("config.toml"), cfg.to_toml())?;
    let output = TrainOutput { dir: args.out.clone() };
    let report = train(&model, &dataset, &train_cfg, Some(&output))?;
    if let (Some(first), Some(last)) = (report.losses.first(), report.losses.last()) {
        println!("loss {first:.5} -> {last:.5} over {} steps", report.losses.len());
    }
    if report.below_threshold > 0 {
        println!("{} crops fell below the foreground threshold", report.below_threshold);
    }
    println!("checkpoint {}", output.final_checkpoint().display());
    Ok(())
}

pub fn cmd_infer(args: &InferArgs, mut cfg: RunConfig) -> Result<()> {
    if let Some(scales) = &args.scales {
        cfg.scales = scales.clone();
    }
    if args.flip {
        cfg.flip = true;
    }
    let infer_cfg = cfg.inference_config()?;
    let (model, _) = load_checkpoint(&args.checkpoint, &Device::Cpu, DType::F32)?;
    let dataset = load_dataset(&args.data)?;
    for seq in &dataset {
        let first = seq.first_mask()?;
        let results = multiscale_flip_inference(&model, &seq.frames, first, &infer_cfg)?;
        write_predictions(&args.out.join(&seq.id), &seq.names, first, &results)?;
        log::info!("segmented `{}` ({} frames)", seq.id, seq.len());
    }
    println!("wrote predictions for {} sequences to {}", dataset.len(), args.out.display());
    Ok(())
}

fn sequence_dirs(root: &Path) -> Result<Vec<(String, PathBuf)>> {
    if !root.is_dir() {
        return Err(Error::NotFound(format!("directory {} does not exist", root.display())));
    }
    let mut dirs: Vec<(String, PathBuf)> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("masks").is_dir())
        .map(|p| (p.file_name().unwrap_or_default().to_string_lossy().into_owned(), p))
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::NotFound(format!("no sequences with masks under {}", root.display())));
    }
    Ok(dirs)
}

pub fn cmd_eval(args: &EvalArgs, cfg: &RunConfig) -> Result<()> {
    let tolerance = match args.tolerance {
        Some(t) if !(t.is_finite() && t >= 0.0) => return Err(Error::config(format!("tolerance must be non-negative, got {t}"))),
        Some(t) => Some(t),
        None => cfg.tolerance()?,
    };
    let mut names = Vec::new();
    let mut predicted = Vec::new();
    let mut truth = Vec::new();
    for (name, gt_dir) in sequence_dirs(&args.gt)? {
        let gt = load_masks(&gt_dir)?;
        let pred_dir = args.pred.join(&name);
        let pred = load_masks(&pred_dir)?;
        let pred: std::collections::HashMap<String, LabelMap> = pred.into_iter().collect();
        let mut p = Vec::with_capacity(gt.len());
        let mut g = Vec::with_capacity(gt.len());
        for (frame, mask) in gt {
            let Some(pm) = pred.get(&frame) else {
                return Err(Error::NotFound(format!("no prediction for `{name}` frame {frame}")));
            };
            if (pm.height(), pm.width()) != (mask.height(), mask.width()) {
                return Err(Error::data(format!("`{name}` frame {frame}: prediction and ground truth differ in size")));
            }
            p.push(pm.clone());
            g.push(mask);
        }
        names.push(name);
        predicted.push(p);
        truth.push(g);
    }
    let pairs: Vec<SequencePair<'_>> = names
        .iter()
        .zip(predicted.iter().zip(&truth))
        .map(|(n, (p, g))| SequencePair {
            name: n,
            predicted: p,
            ground_truth: g,
        })
        .collect();
    let report = evaluate(&pairs, tolerance)?;
    if let Some(out) = &args.out {
        if let Some(parent) = out.parent() {
            std::fs::create_dir_all(parent)?;
        }
        report.write(out)?;
    }
    println!("{}", report.summary_line());
    Ok(())
}
