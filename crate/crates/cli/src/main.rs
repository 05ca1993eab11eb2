//! `stencilnet`: generate datasets, train learned stencils, predict,
//! de-noise, evaluate and benchmark.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure,
//! 4 I/O or file-format error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stencilnet::datagen::Recipe;
use stencilnet::stencilnet::NoiseMode;
use stencilnet::Error;

#[derive(Parser, Debug)]
#[command(name = "stencilnet", version, about = "Learned stencil discretizations for 1D periodic PDEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// JSON experiment config; flags override its keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed for every random ingredient.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (or file, for predict).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct GenerateArgs {
    #[arg(long)]
    pub recipe: Option<Recipe>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub n_points: Option<usize>,
    #[arg(long)]
    pub length: Option<f64>,
    #[arg(long)]
    pub t_total: Option<f64>,
    /// Comma-separated coarse-graining factors.
    #[arg(long, value_delimiter = ',')]
    pub coarse: Option<Vec<usize>>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct TrainArgs {
    /// Dataset directory written by `generate`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Coarse-graining factor to train on.
    #[arg(long)]
    pub c: Option<usize>,
    #[arg(long)]
    pub q: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub lambda_noise: Option<f64>,
    #[arg(long)]
    pub lambda_wd: Option<f64>,
    #[arg(long)]
    pub radius: Option<usize>,
    /// Comma-separated hidden layer widths.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub noise: Option<NoiseMode>,
    /// Use only the first `n` time rows of the training data.
    #[arg(long)]
    pub rows: Option<usize>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// STN1 file whose row `--row` is the initial condition.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub row: usize,
    #[arg(long)]
    pub steps: usize,
    /// Dataset directory supplying the forcing, when the problem has one.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub c: Option<usize>,
    /// Rollout length as a multiple of the data window.
    #[arg(long)]
    pub horizon_factor: Option<usize>,
    /// Also estimate the maximal Lyapunov exponent.
    #[arg(long)]
    pub lyapunov: bool,
}

#[derive(Args, Debug, Clone, Default)]
pub struct BenchArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Grid sizes to time; repeat or comma-separate.
    #[arg(long, value_delimiter = ',', default_values_t = vec![8192])]
    pub grid: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    pub reps: usize,
    #[arg(long, default_value_t = 3)]
    pub warmup: usize,
    #[arg(long, default_value_t = 0.02)]
    pub viscosity: f64,
    #[arg(long, value_delimiter = ',', default_values_t = vec![2, 4, 8])]
    pub factors: Vec<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a recipe and write fine and coarse STN1 files plus metadata.
    Generate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: GenerateArgs,
    },
    /// Train a model on one coarse variant of a dataset.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: TrainArgs,
    },
    /// Roll a trained model forward from a stored state.
    Predict {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: PredictArgs,
    },
    /// Train with latent noise estimates and write the de-noised data.
    Denoise {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: TrainArgs,
    },
    /// Compare a model rollout with a dataset: MSE, spectrum, Lyapunov.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: EvaluateArgs,
    },
    /// Time solver and model right-hand sides per grid point.
    Bench {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: BenchArgs,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::InvalidArgument(_) | Error::ResolutionMismatch { .. } | Error::Json(_) => 2,
                Error::Numerical(_) | Error::BlowUp { .. } | Error::Diverged { .. } | Error::Internal(_) => 3,
                Error::Io(_) | Error::Format(_) => 4,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 4;
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate { common, args } => commands::generate(&common, &args),
        Command::Train { common, args } => commands::train(&common, &args, false),
        Command::Predict { common, args } => commands::predict_cmd(&common, &args),
        Command::Denoise { common, args } => commands::train(&common, &args, true),
        Command::Evaluate { common, args } => commands::evaluate(&common, &args),
        Command::Bench { common, args } => commands::bench(&common, &args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
