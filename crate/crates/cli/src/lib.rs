//! Command-line driver: synthesize data, train both stages, predict,
//! evaluate and classify.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use dsfcn::cascade::Stage;

use crate::commands::Context;
use crate::config::RunConfig;
pub use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "dsfcn", version, about = "Dual-stage FCN optic disk/cup segmentation")]
pub struct Cli {
    /// Run configuration file (`key = value` lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run seed; overrides `seed` in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides `out_dir` in the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset to the output directory.
    Synth {
        /// Replace an existing dataset in a non-empty output directory.
        #[arg(long)]
        force: bool,
    },
    /// Train one stage and write its checkpoint and loss log.
    Train {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        stage: u8,
        #[arg(long)]
        stage1_checkpoint: Option<PathBuf>,
        /// Dataset root; overrides `data_dir` in the config.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Segment images (files or directories of PNGs) with both stages.
    Predict {
        #[arg(long)]
        stage1_checkpoint: Option<PathBuf>,
        #[arg(long)]
        stage2_checkpoint: Option<PathBuf>,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Score predicted masks against ground truth.
    Evaluate {
        /// Directory with `masks/<id>.png` predictions.
        #[arg(long)]
        pred: PathBuf,
        /// Dataset root with ground-truth masks and optional labels.csv.
        #[arg(long)]
        gt: PathBuf,
    },
    /// Fit or apply the cup-to-disk ratio glaucoma classifier.
    Classify {
        /// Directory with `masks/<id>.png` predictions.
        #[arg(long)]
        pred: PathBuf,
        /// labels.csv to fit against; without it a stored classifier is applied.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Stage-2 checkpoint that stores (or supplies) the classifier.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

pub fn context(cli: &Cli) -> CliResult<Context> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    let seed = cfg
        .seed
        .ok_or_else(|| CliError::Usage("a seed is required: pass --seed or set seed in the config".into()))?;
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .ok_or_else(|| CliError::Usage("an output directory is required: pass --out or set out_dir".into()))?;
    Ok(Context { cfg, seed, out })
}

pub fn run(cli: &Cli) -> CliResult<()> {
    let ctx = context(cli)?;
    match &cli.command {
        Command::Synth { force } => commands::cmd_synth(&ctx, *force),
        Command::Train { stage, stage1_checkpoint, data } => {
            let stage = Stage::from_index(*stage)?;
            commands::cmd_train(&ctx, stage, stage1_checkpoint.as_deref(), data.as_deref())
        }
        Command::Predict { stage1_checkpoint, stage2_checkpoint, inputs } => {
            commands::cmd_predict(&ctx, stage1_checkpoint.as_deref(), stage2_checkpoint.as_deref(), inputs).map(|_| ())
        }
        Command::Evaluate { pred, gt } => commands::cmd_evaluate(&ctx, pred, gt).map(|_| ()),
        Command::Classify { pred, labels, checkpoint } => {
            commands::cmd_classify(&ctx, pred, labels.as_deref(), checkpoint.as_deref()).map(|_| ())
        }
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
