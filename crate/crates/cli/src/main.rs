mod commands;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use msbprune::{Activation, ConvMode, PruneThreshold, DATA_DIR_ENV};

use crate::error::{CliError, CliResult};

const DEFAULT_SWEEP: &str = "f:0.05,f:0.1,f:0.15,f:0.2,f:0.3,f:0.5";

#[derive(Debug, Parser)]
#[command(
    name = "msbprune",
    version,
    about = "Soft-sparsity convolution experiments on MNIST / LeNet-5"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Directory holding the four MNIST IDX files.
    #[arg(long, global = true, env = DATA_DIR_ENV, default_value = "data/mnist")]
    pub data_dir: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, global = true, default_value_t = 7)]
    pub seed: u64,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
    /// Train and test combined (70k images).
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Exact,
    Zeroskip,
    Approx,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Zero-pixel and intensity statistics of the dataset.
    MnistStats {
        #[arg(long, value_enum, default_value = "all")]
        split: SplitArg,
    },
    /// One 3x3 convolution of a single image, exact vs approximate.
    ConvDemo {
        #[arg(long, default_value_t = 0)]
        image: usize,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Nine comma-separated coefficients; seeded random when omitted.
        #[arg(long, allow_hyphen_values = true)]
        kernel: Option<String>,
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "f:0.01,f:0.05,f:0.1,f:0.2,f:0.3,f:0.5"
        )]
        thresholds: Vec<PruneThreshold>,
        /// Histogram bins over fractional error [0, 1].
        #[arg(long, default_value_t = 50)]
        bins: usize,
        /// Also average counts over the first N images of the split (0 = all).
        #[arg(long)]
        set_images: Option<usize>,
    },
    /// Train a float LeNet-5 and save it as an LNW1 container.
    Train {
        #[arg(long, default_value = "relu")]
        activation: Activation,
        #[arg(long, default_value_t = 3)]
        epochs: usize,
        #[arg(long, default_value_t = 0.05)]
        lr: f32,
        #[arg(long, default_value_t = 16)]
        batch: usize,
        /// Fail if the final-epoch training accuracy is lower.
        #[arg(long, default_value_t = 0.9)]
        min_accuracy: f64,
        /// Destination; defaults to `<out>/float_<activation>.lnw`.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Quantize float weights and compare against float inference.
    Quantize {
        #[arg(long)]
        weights: PathBuf,
        /// Destination; defaults to `<out>/quant_<activation>.lnw`.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Largest tolerated accuracy drop, in percentage points.
        #[arg(long, default_value_t = 0.5)]
        max_drop: f64,
        /// Evaluate on the first N test images only.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Instrumented integer inference on one image or the test set.
    Infer {
        /// Float or quantized LNW1 weights.
        #[arg(long)]
        weights: PathBuf,
        #[arg(long, value_enum, default_value = "exact")]
        mode: ModeArg,
        /// Threshold for approx mode (first entry is used).
        #[arg(long, value_delimiter = ',')]
        thresholds: Vec<PruneThreshold>,
        #[arg(long)]
        image: Option<usize>,
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Exact, zero-skip and approximate runs over the test set.
    Sweep {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = DEFAULT_SWEEP)]
        thresholds: Vec<PruneThreshold>,
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Cycle trace of the accelerator on one 4x4 window.
    FsmTrace {
        /// Sixteen comma-separated window values; seeded random when omitted.
        #[arg(long, allow_hyphen_values = true)]
        window: Option<String>,
        /// Nine comma-separated coefficients; seeded random when omitted.
        #[arg(long, allow_hyphen_values = true)]
        kernel: Option<String>,
        #[arg(long, value_delimiter = ',', default_value = "t:7")]
        thresholds: Vec<PruneThreshold>,
    },
}

fn mode_from(mode: ModeArg, thresholds: &[PruneThreshold]) -> CliResult<ConvMode> {
    Ok(match mode {
        ModeArg::Exact => ConvMode::Exact,
        ModeArg::Zeroskip => ConvMode::ZeroSkip,
        ModeArg::Approx => ConvMode::Approx(
            *thresholds
                .first()
                .ok_or_else(|| CliError::Config("approx mode needs --thresholds".into()))?,
        ),
    })
}

fn run(cli: Cli) -> CliResult<()> {
    let g = &cli.global;
    if g.workers == 0 {
        return Err(CliError::Config("--workers must be at least 1".into()));
    }
    match cli.command {
        Command::MnistStats { split } => commands::mnist_stats(g, split),
        Command::ConvDemo {
            image,
            split,
            kernel,
            thresholds,
            bins,
            set_images,
        } => commands::conv_demo(
            g,
            image,
            split,
            kernel.as_deref(),
            &thresholds,
            bins,
            set_images,
        ),
        Command::Train {
            activation,
            epochs,
            lr,
            batch,
            min_accuracy,
            weights,
        } => {
            let cfg = msbprune::lenet::TrainConfig {
                activation,
                epochs,
                learning_rate: lr,
                batch_size: batch,
                seed: g.seed,
                min_accuracy: Some(min_accuracy),
            };
            commands::train(g, &cfg, weights)
        }
        Command::Quantize {
            weights,
            output,
            max_drop,
            limit,
        } => commands::quantize(g, &weights, output, max_drop, limit),
        Command::Infer {
            weights,
            mode,
            thresholds,
            image,
            limit,
        } => commands::infer(g, &weights, mode_from(mode, &thresholds)?, image, limit),
        Command::Sweep {
            weights,
            thresholds,
            limit,
        } => commands::sweep(g, &weights, &thresholds, limit),
        Command::FsmTrace {
            window,
            kernel,
            thresholds,
        } => commands::fsm_trace(g, window.as_deref(), kernel.as_deref(), &thresholds),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
