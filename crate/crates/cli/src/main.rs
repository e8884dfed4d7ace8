mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use stepcast::dataset::DatasetError;
use stepcast::evaluation::EvalError;
use stepcast::stepsnet::ModelError;
use stepcast::training::TrainError;

/// Two-stage transformer forecaster on gridded atmospheric data.
#[derive(Debug, Parser)]
#[command(name = "stepcast", version, about)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Key-value config file layered over the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set train.lr=0.002`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true, value_parser = config::parse_override)]
    overrides: Vec<(String, String)>,
    /// Output directory (config key `out_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Root seed (config key `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Dataset directory (config key `data.dir`).
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Preset to start from (config key `preset`).
    #[arg(long, global = true)]
    preset: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic atmosphere dataset.
    SynthData {
        /// Number of 6-hourly snapshots (config key `data.steps`).
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Summarize a dataset and its training-split normalization.
    Stats,
    /// Train on the training split.
    Train {
        /// Optimizer steps (config key `train.steps`).
        #[arg(long)]
        steps: Option<usize>,
        /// Draw one batch and fit it repeatedly.
        #[arg(long)]
        overfit_one_batch: bool,
    },
    /// Roll a checkpoint forward from one test-split snapshot.
    Rollout {
        #[command(flatten)]
        model: ModelArgs,
        /// Index of the initial snapshot within the test split.
        #[arg(long, default_value_t = 0)]
        init: usize,
    },
    /// Score a checkpoint and persistence on the test split.
    Evaluate {
        #[command(flatten)]
        model: ModelArgs,
        /// Worker threads over initial conditions (config key `eval.jobs`).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Track a pressure minimum in forecast and reference.
    Track {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 0)]
        init: usize,
        /// First-guess latitude in degrees.
        #[arg(long, allow_hyphen_values = true)]
        lat: f64,
        /// First-guess longitude in degrees.
        #[arg(long, allow_hyphen_values = true)]
        lon: f64,
    },
    /// Compare raw and EMA weights of one checkpoint.
    CompareEma {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Print parameter and multiply-accumulate counts for the configured model.
    ReportCompute,
    /// Write initial/reference/prediction/bias panels.
    DumpFields {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 0)]
        init: usize,
        /// Lead times in hours, comma separated.
        #[arg(long, value_delimiter = ',', default_values_t = vec![6u32, 24, 48])]
        leads: Vec<u32>,
    },
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Checkpoint file (default: checkpoint.ckpt in the output directory).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Use the raw weights instead of the EMA weights.
    #[arg(long)]
    raw: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(format!("i/o error: {e}"))
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::InvalidInput(m) => CliError::Usage(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::NonFinite(_) => CliError::Numerical(e.to_string()),
            ModelError::Config(_) => CliError::Usage(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFinite(_) | TrainError::NonFiniteLoss { .. } => CliError::Numerical(e.to_string()),
            TrainError::Config(_) => CliError::Usage(e.to_string()),
            TrainError::Model(m) => m.into(),
            TrainError::Dataset(d) => d.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::InvalidInput(m) => CliError::Usage(m),
            EvalError::Model(m) => m.into(),
            EvalError::Dataset(d) => d.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli.global, cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
