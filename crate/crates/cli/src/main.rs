mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cic_core::data::{AugmentPolicy, CifarKind};
use cic_core::Error;

/// Exit statuses shared by every subcommand.
pub mod exit {
    pub const OK: u8 = 0;
    pub const CONFIG: u8 = 1;
    pub const DIVERGED: u8 = 2;
    pub const IO: u8 = 3;
    pub const USAGE: u8 = 64;
}

#[derive(Debug, Parser)]
#[command(
    name = "cic",
    version,
    about = "Channel-local convolution networks: build, check, train, evaluate"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a network and write history.csv plus a checkpoint after every epoch.
    Train(TrainArgs),
    /// Report the test error of a saved checkpoint.
    Eval(EvalArgs),
    /// Finite-difference check of a (usually width-shrunk) network's gradients.
    Gradcheck(GradcheckArgs),
    /// Per-layer weight and bias counts.
    Params(ParamsArgs),
    /// Per-layer output shapes.
    Shapes(ShapesArgs),
    /// List the built-in architectures, or print one in config-file form.
    Presets(PresetsArgs),
    /// Check CIFAR binary files for length, label validity and record counts.
    DataVerify(DataVerifyArgs),
}

#[derive(Debug, Clone, Args)]
pub struct NetArgs {
    /// Built-in architecture (see `cic presets`).
    #[arg(long, conflicts_with = "config")]
    pub preset: Option<String>,
    /// Network description file in the text format printed by `cic presets NAME`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Divide every hidden width by this factor.
    #[arg(long = "width-div", alias = "scale", default_value_t = 1)]
    pub width_div: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DatasetArg {
    Cifar10,
    Cifar100,
}

impl DatasetArg {
    pub fn kind(self) -> CifarKind {
        match self {
            DatasetArg::Cifar10 => CifarKind::Cifar10,
            DatasetArg::Cifar100 => CifarKind::Cifar100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AugmentArg {
    None,
    Flip,
    #[value(alias = "padcropflip")]
    Padcrop,
}

impl From<AugmentArg> for AugmentPolicy {
    fn from(a: AugmentArg) -> Self {
        match a {
            AugmentArg::None => AugmentPolicy::None,
            AugmentArg::Flip => AugmentPolicy::Flip,
            AugmentArg::Padcrop => AugmentPolicy::PadCropFlip,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Directory holding the CIFAR binary files (or the extracted archive folder).
    #[arg(long = "data-dir", required_unless_present = "synthetic")]
    pub data_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = DatasetArg::Cifar10)]
    pub dataset: DatasetArg,
    /// Use N generated 32x32 images (and N/5 test images) instead of files on disk.
    #[arg(long, value_name = "N", conflicts_with = "data_dir")]
    pub synthetic: Option<usize>,
    /// Keep only the first N test images.
    #[arg(long = "test-subset", value_name = "N")]
    pub test_subset: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// Keep only the first N training images.
    #[arg(long = "train-subset", value_name = "N")]
    pub train_subset: Option<usize>,
    #[arg(long, value_enum, default_value_t = AugmentArg::None)]
    pub augment: AugmentArg,
    /// Epochs to complete (default: the whole 230-epoch schedule).
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for history.csv and checkpoint.ckpt.
    #[arg(long, default_value = "cic-run")]
    pub out: PathBuf,
    /// Use the full-size learning-rate schedule (peak 0.5) instead of the desk one (peak 0.1).
    #[arg(long = "paper-lr")]
    pub paper_lr: bool,
    #[arg(long = "batch-size")]
    pub batch_size: Option<usize>,
    /// Feed raw [0,1] pixels instead of per-channel standardised ones.
    #[arg(long = "no-normalize")]
    pub no_normalize: bool,
    /// Continue from a checkpoint; the network is taken from the checkpoint.
    #[arg(long, value_name = "CHECKPOINT", conflicts_with_all = ["preset", "config"])]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Seed for `--synthetic` data.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub net: NetArgs,
    /// Relative-error tolerance.
    #[arg(long, default_value_t = cic_core::gradcheck::TOLERANCE)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Spatial size of the probe images.
    #[arg(long, default_value_t = 8)]
    pub size: usize,
    /// Images in the probe batch. With a single 8x8 image the last block's
    /// batch norm sees only 4 values per channel, which makes the check fragile.
    #[arg(long, default_value_t = 2)]
    pub batch: usize,
    /// Also run the per-layer-kind suite with this many random draws each.
    #[arg(long, value_name = "DRAWS")]
    pub layers: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct ParamsArgs {
    #[command(flatten)]
    pub net: NetArgs,
    /// Widths of a single 1x1 MLP chain, e.g. 8,6,4,2.
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["preset", "config"])]
    pub mlp: Option<Vec<usize>>,
    /// One digit per MLP layer: 0 dense, 1 channel-local.
    #[arg(long, requires = "mlp")]
    pub pattern: Option<String>,
    /// Channel window of the channel-local MLP layers.
    #[arg(long = "L", alias = "window", requires = "mlp")]
    pub window: Option<usize>,
    /// Share one weight set across all windows of the MLP layers.
    #[arg(long, requires = "mlp")]
    pub shared: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ShapesArgs {
    #[command(flatten)]
    pub net: NetArgs,
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
}

#[derive(Debug, Clone, Args)]
pub struct PresetsArgs {
    /// Print this preset in config-file form.
    pub name: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct DataVerifyArgs {
    #[arg(long = "data-dir")]
    pub data_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = DatasetArg::Cifar10)]
    pub dataset: DatasetArg,
}

/// Failure of a subcommand, carrying its exit status.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Divergence { .. } => exit::DIVERGED,
            Error::Io { .. } | Error::Format { .. } => exit::IO,
            _ => exit::CONFIG,
        };
        Failure::new(code, e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let informational = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            return ExitCode::from(if informational { exit::OK } else { exit::USAGE });
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
