//! Command-line front end.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | file or image I/O |
//! | 2 | usage or configuration |
//! | 3 | dataset layout |
//! | 4 | no salient training samples |
//! | 5 | model file or schema version |
//! | 6 | image too small, dimension mismatch, or grid size limit |
//! | 7 | training diverged |
//! | 8 | unmatched stems in `eval` |

use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::config::PipelineConfig;
use crate::dataset::{discover_pairs, read_manifest, rasters_by_stem};
use crate::error::{Error, Result};
use crate::metrics::DEFAULT_BETA_SQUARED;
use crate::model::ModelFile;
use crate::pipeline::{self, Prediction};
use crate::raster::{load_image, save_gray_png};
use crate::synth::{self, SynthParams};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATASET: i32 = 3;
pub const EXIT_NO_SALIENT: i32 = 4;
pub const EXIT_MODEL: i32 = 5;
pub const EXIT_GEOMETRY: i32 = 6;
pub const EXIT_DIVERGED: i32 = 7;
pub const EXIT_UNMATCHED: i32 = 8;

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io { .. }
        | Error::UnsupportedFormat { .. }
        | Error::Decode { .. }
        | Error::Encode { .. }
        | Error::EmptyImage { .. } => EXIT_IO,
        Error::Config { .. } | Error::InvalidParameter(_) => EXIT_USAGE,
        Error::Dataset(_) | Error::Empty(_) => EXIT_DATASET,
        Error::NoSalientSamples => EXIT_NO_SALIENT,
        Error::Model(_) | Error::SchemaVersion { .. } => EXIT_MODEL,
        Error::ImageTooSmall { .. }
        | Error::DimensionMismatch(_)
        | Error::OutOfBounds { .. }
        | Error::HeightLimit { .. }
        | Error::TooManySites { .. } => EXIT_GEOMETRY,
        Error::Diverged { .. } => EXIT_DIVERGED,
    }
}

#[derive(Debug, Parser)]
#[command(name = "salient", version, about = "Particle-grid salient object detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the feature model and train the CRF on image/mask pairs.
    Train(TrainArgs),
    /// Predict a binary saliency mask for an image or a directory of images.
    Predict(PredictArgs),
    /// Score predicted masks against ground truth.
    Eval(EvalArgs),
    /// Dump per-particle features as JSON lines.
    Features(FeaturesArgs),
    /// Write a seeded synthetic dataset split into train/ and test/.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Dataset root holding img/ and gt/.
    #[arg(long, required_unless_present = "manifest")]
    pub data: Option<PathBuf>,
    /// Tab-separated image/mask list, used instead of --data.
    #[arg(long, conflicts_with = "data")]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// An image, or a directory whose images are all predicted.
    #[arg(long)]
    pub image: PathBuf,
    /// Output mask (a directory when --image is one).
    #[arg(long)]
    pub out: PathBuf,
    /// Optional soft map of the particle marginals (a directory when
    /// --image is one).
    #[arg(long)]
    pub soft: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BETA_SQUARED)]
    pub beta2: f64,
    /// JSON report path; defaults to <pred>/metrics.json.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Score matched stems even when some stems are unmatched.
    #[arg(long)]
    pub ignore_unmatched: bool,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Fitted model; adds distances, raw products and integrated features.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub count: usize,
    /// Number of leading samples written to train/; the rest go to test/.
    #[arg(long, default_value_t = 150)]
    pub train: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Runs one command and returns its exit code; messages go to stderr.
pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Features(a) => cmd_features(&a),
        Command::Synth(a) => cmd_synth(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn cmd_train(args: &TrainArgs) -> Result<i32> {
    let cfg = PipelineConfig::load(&args.config)?;
    let pairs = match (&args.manifest, &args.data) {
        (Some(m), _) => read_manifest(m)?,
        (None, Some(d)) => discover_pairs(d)?,
        (None, None) => return Err(Error::Config { location: "arguments".into(), message: "--data or --manifest is required".into() }),
    };
    let samples = pipeline::load_samples(&pairs)?;
    let (model, report) = pipeline::train(&cfg, &samples)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "training on {} images ({})", samples.len(), report.mode.as_str());
    for (i, obj) in report.objective_history.iter().enumerate() {
        let _ = writeln!(out, "epoch {:>4}  objective {obj:.6}", i + 1);
    }
    let m = &report.training_metrics;
    let _ = writeln!(
        out,
        "training F-measure (beta^2 = {}): macro {:.4}, micro {:.4}",
        m.beta_squared, m.macro_avg.f_measure, m.micro.f_measure
    );
    model.save(&args.out)?;
    let _ = writeln!(out, "model written to {}", args.out.display());
    Ok(EXIT_OK)
}

fn write_prediction(pred: &Prediction, out: &Path, soft: Option<&Path>) -> Result<()> {
    pred.mask.save_png(out)?;
    if let Some(soft) = soft {
        let (w, h) = pred.grid.coverage();
        save_gray_png(w, h, &pred.soft_map(), soft)?;
    }
    Ok(())
}

pub fn cmd_predict(args: &PredictArgs) -> Result<i32> {
    let model = ModelFile::load(&args.model)?;
    if !args.image.is_dir() {
        let img = load_image(&args.image)?;
        let pred = pipeline::predict(&model, &img)?;
        write_prediction(&pred, &args.out, args.soft.as_deref())?;
        return Ok(EXIT_OK);
    }
    let images = rasters_by_stem(&args.image)?;
    if images.is_empty() {
        return Err(Error::Dataset(format!("no images in {}", args.image.display())));
    }
    create_dir(&args.out)?;
    if let Some(soft) = &args.soft {
        create_dir(soft)?;
    }
    let images: Vec<(String, PathBuf)> = images.into_iter().collect();
    images.par_iter().try_for_each(|(stem, path)| {
        let pred = pipeline::predict(&model, &load_image(path)?)?;
        let file = format!("{stem}.png");
        let soft = args.soft.as_ref().map(|d| d.join(&file));
        write_prediction(&pred, &args.out.join(&file), soft.as_deref())
    })?;
    println!("{} masks written to {}", images.len(), args.out.display());
    Ok(EXIT_OK)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<i32> {
    let pairs = pipeline::pair_eval_dirs(&args.pred, &args.gt)?;
    if !pairs.unmatched.is_empty() {
        eprintln!("{} unmatched stem(s): {}", pairs.unmatched.len(), pairs.unmatched.join(", "));
        if !args.ignore_unmatched {
            return Ok(EXIT_UNMATCHED);
        }
    }
    if pairs.matched.is_empty() {
        return Err(Error::Dataset("no prediction has a matching ground-truth mask".into()));
    }
    let report = pipeline::evaluate(&pairs.matched, args.beta2)?;
    print!("{}", report.to_table());
    let path = args.report.clone().unwrap_or_else(|| args.pred.join("metrics.json"));
    let mut json = serde_json::to_string_pretty(&report).map_err(|e| Error::Model(e.to_string()))?;
    json.push('\n');
    write_text(&path, &json)?;
    Ok(EXIT_OK)
}

pub fn cmd_features(args: &FeaturesArgs) -> Result<i32> {
    let cfg = PipelineConfig::load(&args.config)?;
    let model = args.model.as_deref().map(ModelFile::load).transpose()?;
    let img = load_image(&args.image)?;
    let records = pipeline::particle_records(&img, &cfg, model.as_ref())?;
    let mut text = String::new();
    for r in &records {
        text.push_str(&serde_json::to_string(r).map_err(|e| Error::Model(e.to_string()))?);
        text.push('\n');
    }
    write_text(&args.out, &text)?;
    Ok(EXIT_OK)
}

pub fn cmd_synth(args: &SynthArgs) -> Result<i32> {
    if args.train > args.count {
        return Err(Error::InvalidParameter(format!(
            "--train {} exceeds --count {}",
            args.train, args.count
        )));
    }
    let samples = synth::generate(&SynthParams {
        count: args.count,
        seed: args.seed,
        ..SynthParams::default()
    })?;
    let (train, test) = samples.split_at(args.train);
    synth::write_dataset(&args.out.join("train"), train)?;
    synth::write_dataset(&args.out.join("test"), test)?;
    println!("{} training and {} test samples written to {}", train.len(), test.len(), args.out.display());
    Ok(EXIT_OK)
}
