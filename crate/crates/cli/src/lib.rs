//! Command-line front end: simulate data, train and evaluate models,
//! reduce dimension, draw figures and run whole experiments.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;
pub mod svg;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use flowlda::experiment::ModelKind;
use flowlda::flows::BlockKind;

use crate::artifacts::Manifest;
use crate::config::{parse_axes, parse_block_type, parse_model, DataFormat, ExperimentConfig, Overrides, Task};
use crate::error::{CliError, CliResult};

pub const THREADS_ENV: &str = "FLOWLDA_THREADS";

#[derive(Debug, Parser)]
#[command(name = "flowlda", version, about = "Discriminative normalizing flows and LDA")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the warped 4-class simulation and its generator.
    Simulate,
    /// Fit one model to a dataset.
    Train,
    /// Likelihood, cluster recovery and residual leakage of a checkpoint.
    Eval,
    /// Map a dataset to class-space and full latent codes.
    Reduce,
    /// Scatter plot of a dataset, or of its latent codes given a checkpoint.
    Figure,
    /// Run a whole experiment end to end.
    Pipeline,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// lda-fisher, lda-ml, nf, dnf or dnf-subspace.
    #[arg(long, global = true, value_parser = parse_model)]
    pub model: Option<ModelKind>,
    /// Flow block type: linear, coupling or maf.
    #[arg(long, global = true, value_parser = parse_block_type)]
    pub block_type: Option<BlockKind>,
    #[arg(long, global = true)]
    pub blocks: Option<usize>,
    /// Hidden width of the flow conditioners.
    #[arg(long, global = true)]
    pub width: Option<usize>,
    /// Reduced dimension p.
    #[arg(long, global = true)]
    pub class_dim: Option<usize>,
    /// Format of written datasets.
    #[arg(long, global = true, value_enum)]
    pub format: Option<DataFormat>,
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    #[arg(long, global = true)]
    pub heldout: Option<PathBuf>,
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    /// Coordinate pair for figures, e.g. 0,1.
    #[arg(long, global = true, value_parser = parse_axes)]
    pub axes: Option<[usize; 2]>,
    /// Experiment run by `pipeline`.
    #[arg(long, global = true, value_enum)]
    pub task: Option<Task>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
}

impl CommonArgs {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            out: self.out.clone(),
            data: self.data.clone(),
            heldout: self.heldout.clone(),
            checkpoint: self.checkpoint.clone(),
            model: self.model,
            block_type: self.block_type,
            blocks: self.blocks,
            width: self.width,
            class_dim: self.class_dim,
            format: self.format,
            axes: self.axes,
            task: self.task,
            epochs: self.epochs,
        }
    }
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Reduce => "reduce",
            Command::Figure => "figure",
            Command::Pipeline => "pipeline",
        }
    }
}

/// Worker cap from the environment, defaulting to the machine's cores.
pub fn worker_threads() -> CliResult<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(CliError::usage(format!("{THREADS_ENV} must be a positive integer, got '{v}'"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Runs one parsed invocation and writes its manifest.
pub fn run(cli: &Cli) -> CliResult<commands::Output> {
    let cfg = ExperimentConfig::resolve(cli.common.config.as_deref(), &cli.common.overrides())?;
    let threads = worker_threads()?;
    log::info!("{} with seed {} into {}", cli.command.name(), cfg.seed, cfg.out.display());
    let mut out = match cli.command {
        Command::Simulate => commands::simulate(&cfg)?,
        Command::Train => commands::train(&cfg)?,
        Command::Eval => commands::evaluate(&cfg)?,
        Command::Reduce => commands::reduce(&cfg)?,
        Command::Figure => commands::figure(&cfg)?,
        Command::Pipeline => commands::pipeline(&cfg, threads)?,
    };
    if let Some(c) = &cli.common.config {
        out.inputs.insert(0, c.clone());
    }
    let manifest_path = cfg.out.join("manifest.json");
    let mut files = commands::relative_names(&cfg.out, &out.files);
    files.push("manifest.json".into());
    let manifest = Manifest::new(cli.command.name(), cfg.to_json(), cfg.seed, &out.inputs, files)?;
    artifacts::write_json(&manifest_path, &manifest)?;
    out.files.push(manifest_path);
    Ok(out)
}
