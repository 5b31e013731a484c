//! `facegen <command> [--config PATH] [--key value ...]`

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

/// Invalid settings detected by the CLI itself.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

/// A numerical check failed (for example a gradient check).
#[derive(Debug)]
pub struct NumericFailure(pub String);

impl fmt::Display for NumericFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NumericFailure {}

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "facegen", version, about = "Train a face-attribute CNN and synthesize faces from attribute sets")]
#[command(args_override_self = true)]
struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic labeled face dataset.
    SynthData(SynthArgs),
    /// Train (or fine-tune) the classifier.
    Train(TrainArgs),
    /// Fit one activation Gaussian per attribute.
    FitCgmm(FitArgs),
    /// Learn the attribute weights of a stats file.
    LearnWeights(LearnArgs),
    /// Generate a face from a set of attributes.
    Generate(GenerateArgs),
    /// Class visualization by gradient ascent on class scores.
    Classvis(ClassvisArgs),
    /// Reconstruct an image from its own activations at one layer.
    Invert(InvertArgs),
    /// Compare analytic and finite-difference gradients of the classifier.
    GradCheck(GradCheckArgs),
    /// Pixel-wise mean image of a dataset.
    MeanImage(MeanImageArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Number of images.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Image width and height in pixels (at least 16).
    #[arg(long, default_value_t = 32)]
    size: usize,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Training dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Optional test dataset directory, evaluated after every epoch.
    #[arg(long)]
    test_data: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 1e-4)]
    weight_decay: f64,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    /// `none`, `all`, or a layer (index, `conv-5`, `fc-6`, `fc-7`): freezes
    /// every parameterized layer below it.
    #[arg(long, default_value = "none")]
    freeze_below: String,
    /// Dropout rate of a freshly initialized network.
    #[arg(long, default_value_t = 0.5)]
    dropout: f64,
    /// Start from this checkpoint instead of a fresh network.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch metrics CSV [default: the checkpoint path with a .csv
    /// extension].
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Layer index or name (`conv-5`, `fc-6`, `fc-7`).
    #[arg(long, default_value = "fc-6")]
    layer: String,
    /// Images sampled per attribute.
    #[arg(long, default_value_t = 200)]
    m: usize,
    /// Ridge coefficient stored with the model.
    #[arg(long, default_value_t = 1e-5)]
    lambda: f64,
    /// Stats file to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct LearnArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Stats file to read.
    #[arg(long)]
    stats: PathBuf,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 1000)]
    iters: usize,
    /// Override the ridge coefficient stored in the stats file.
    #[arg(long)]
    lambda: Option<f64>,
    /// Halve the step when it would increase the objective.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    halving: bool,
    /// Stats file to write [default: overwrite --stats].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional objective trace CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum InitArg {
    Noise,
    #[value(alias = "mean_image")]
    MeanImage,
}

#[derive(Args, Debug, Clone)]
struct InversionArgs {
    #[arg(long, default_value_t = 500)]
    iterations: usize,
    /// Largest step size (halved on objective increase).
    #[arg(long, default_value_t = 1.0)]
    step: f64,
    #[arg(long, value_enum, default_value_t = InitArg::Noise)]
    init: InitArg,
    #[arg(long, default_value_t = 0.1)]
    noise_std: f64,
    #[arg(long, default_value_t = 0.5)]
    blur_sigma: f64,
    #[arg(long, default_value_t = 10)]
    blur_period: usize,
    /// Maximum random shift in pixels.
    #[arg(long, default_value_t = 2)]
    jitter: usize,
    #[arg(long, default_value_t = 1e-4)]
    l2_decay: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Mean,
    Sample,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    stats: PathBuf,
    /// Comma-separated attribute names, e.g. `smiling,blond`.
    #[arg(long)]
    attributes: String,
    #[arg(long, value_enum, default_value_t = ModeArg::Mean)]
    mode: ModeArg,
    /// Dataset whose mean image seeds `--init mean-image`.
    #[arg(long)]
    data: Option<PathBuf>,
    #[command(flatten)]
    inversion: InversionArgs,
    /// Output directory (image.ppm, trace.csv, report.txt).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ObjectiveArg {
    Softmax,
    Logits,
}

#[derive(Args, Debug)]
struct ClassvisArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Comma-separated attribute names.
    #[arg(long)]
    attributes: String,
    /// Where the unit gradients are injected.
    #[arg(long, value_enum, default_value_t = ObjectiveArg::Softmax)]
    objective: ObjectiveArg,
    /// Mean image PPM (as written by `mean-image`).
    #[arg(long, conflicts_with = "data")]
    mean: Option<PathBuf>,
    /// Dataset to compute the mean image from.
    #[arg(long)]
    data: Option<PathBuf>,
    #[command(flatten)]
    inversion: InversionArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct InvertArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Image whose activations are reconstructed.
    #[arg(long)]
    image: PathBuf,
    #[arg(long, default_value = "conv-5")]
    layer: String,
    /// Dataset whose mean image seeds `--init mean-image`.
    #[arg(long)]
    data: Option<PathBuf>,
    #[command(flatten)]
    inversion: InversionArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GradCheckArgs {
    /// Checkpoint to check [default: a freshly initialized network].
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Dataset providing the image and labels [default: one synthetic face].
    #[arg(long)]
    data: Option<PathBuf>,
    /// Image index within --data.
    #[arg(long, default_value_t = 0)]
    index: usize,
    /// Image size of the fresh network and synthetic face.
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long, default_value_t = 200)]
    samples: usize,
    #[arg(long, default_value_t = 1e-5)]
    h: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    /// Optional report file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct MeanImageArgs {
    #[arg(long)]
    data: PathBuf,
    /// PPM file to write.
    #[arg(long)]
    out: PathBuf,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return EXIT_CONFIG;
        }
        if cause.is::<NumericFailure>() {
            return EXIT_NUMERIC;
        }
        if cause.is::<std::io::Error>() {
            return EXIT_IO;
        }
        if let Some(e) = cause.downcast_ref::<facegen_core::Error>() {
            return match e {
                _ if e.is_numeric() => EXIT_NUMERIC,
                facegen_core::Error::Io(_) | facegen_core::Error::Format { .. } => EXIT_IO,
                _ => EXIT_CONFIG,
            };
        }
    }
    EXIT_CONFIG
}

fn run() -> anyhow::Result<()> {
    let command = Cli::command();
    let names: Vec<String> = command.get_subcommands().map(|c| c.get_name().to_string()).collect();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let argv = config::expand(std::env::args_os().collect(), &names)?;
    let matches = command.try_get_matches_from(argv).unwrap_or_else(|e| e.exit());
    let cli = Cli::from_arg_matches(&matches).unwrap_or_else(|e| e.exit());
    commands::dispatch(cli)
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
