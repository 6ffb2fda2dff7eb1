//! Command-line entry points. The binary is a thin wrapper over these
//! functions; every command is driven by one flat JSON config file with
//! command-line overrides, writes a manifest next to its outputs, and is
//! reproducible byte for byte from the same config and seed.

mod commands;
mod config;
mod manifest;

pub use commands::{
    cmd_cv, cmd_eval, cmd_grid, cmd_preprocess, cmd_synth, cmd_sweep, cmd_train, cmd_viz,
};
pub use config::RunConfig;
pub use manifest::{sha256_file, Manifest, ManifestBuilder};

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::eval::EvalError;
use crate::model::ModelError;
use crate::pose::PoseError;
use crate::train::TrainError;
use crate::viz::VizError;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

/// One-line machine-parsable failures: `error[kind]: message`.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("error[config]: {0}")]
    Config(String),
    #[error("error[data]: {0}")]
    Data(String),
    #[error("error[numeric]: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Data(_) => EXIT_DATA,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }
}

impl From<PoseError> for CliError {
    fn from(e: PoseError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            TrainError::Model(ModelError::Graph(_)) => CliError::Numeric(e.to_string()),
            TrainError::Model(_) => CliError::Config(e.to_string()),
            TrainError::Invalid(_) => CliError::Config(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Invalid(_) => CliError::Data(e.to_string()),
            EvalError::Train(t) => t.into(),
            EvalError::Pose(p) => p.into(),
        }
    }
}

impl From<VizError> for CliError {
    fn from(e: VizError) -> Self {
        match e {
            VizError::Invalid(m) => CliError::Config(m),
            VizError::Io(io) => CliError::Data(io.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "skelclass", version, about = "Skeleton-based movement classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate deterministic synthetic two-class keypoint sequences.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Sequences per class (default: config synth_n_per_class).
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Parse, filter, normalize, downsample, and window sequences into a
    /// clip archive.
    Preprocess {
        /// NDJSON sequence file or directory of them.
        #[arg(long)]
        input: PathBuf,
        /// Clip archive to write.
        #[arg(long)]
        out: PathBuf,
        /// Target frame rate (default: config target_fps).
        #[arg(long)]
        fps: Option<u32>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Split a clip archive, train, and write checkpoint + history.
    Train {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Stratified k-fold cross-validation with bootstrap CIs and t-tests.
    Cv {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Fold count (default: config cv_folds).
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a clip archive.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Grid search over the configured hyperparameter lists.
    Grid {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Render attention maps for clips under a trained checkpoint.
    Viz {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Render only this clip index (default: all clips).
        #[arg(long)]
        clip: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train and evaluate across the configured frame rates.
    Sweep {
        /// Directory of raw NDJSON sequences.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load(config: &Option<PathBuf>, seed: Option<u64>) -> Result<RunConfig, CliError> {
    let mut cfg = match config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth { out, n, seed, config } => {
            let cfg = load(&config, seed)?;
            let n = n.unwrap_or(cfg.synth_n_per_class);
            let seed = seed.unwrap_or(cfg.seed);
            cmd_synth(&cfg, &out, n, seed)
        }
        Command::Preprocess { input, out, fps, config } => {
            let cfg = load(&config, None)?;
            let fps = fps.unwrap_or(cfg.target_fps);
            cmd_preprocess(&cfg, &input, &out, fps)
        }
        Command::Train { input, out, seed, config } => {
            let cfg = load(&config, seed)?;
            cmd_train(&cfg, &input, &out)
        }
        Command::Cv { input, out, k, seed, config } => {
            let cfg = load(&config, seed)?;
            let k = k.unwrap_or(cfg.cv_folds);
            cmd_cv(&cfg, &input, &out, k)
        }
        Command::Eval { checkpoint, input, out, config } => {
            let cfg = load(&config, None)?;
            cmd_eval(&cfg, &checkpoint, &input, &out)
        }
        Command::Grid { input, out, seed, config } => {
            let cfg = load(&config, seed)?;
            cmd_grid(&cfg, &input, &out)
        }
        Command::Viz { checkpoint, input, out, clip, config } => {
            let cfg = load(&config, None)?;
            cmd_viz(&cfg, &checkpoint, &input, &out, clip)
        }
        Command::Sweep { input, out, seed, config } => {
            let cfg = load(&config, seed)?;
            cmd_sweep(&cfg, &input, &out)
        }
    }
}

/// Parses argv and runs the selected command; returns the process exit
/// code (0 success, 2 config error, 3 data error, 4 numeric failure).
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_CONFIG,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
