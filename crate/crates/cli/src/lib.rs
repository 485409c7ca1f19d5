//! Command-line front end for the phase steering pipeline.

pub mod commands;
pub mod config;
pub mod error;
pub mod layout;
pub mod manifest;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use phasesteer::evaluation::StaticKind;

use commands::Context;
use config::{Overrides, RunConfig};
use error::CliResult;

#[derive(Debug, Parser)]
#[command(name = "phasesteer", version, about = "Phase steering of frozen oscillatory surrogates")]
pub struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override the run directory from the configuration.
    #[arg(long, global = true)]
    pub run_dir: Option<PathBuf>,
    /// Override the seed from the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Suppress progress output.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset into the dataset directory.
    Generate,
    /// Train the sparse autoencoder on the dataset's training window.
    TrainSae,
    /// Fit PCA on the dataset's training window.
    FitPca,
    /// Find and rank oscillatory feature pairs.
    IdentifyPairs,
    /// Optimize the phase rotation of the identified pairs.
    Steer,
    /// Optimize static scale, additive and clamp interventions.
    Baseline {
        /// Run one kind only.
        #[arg(long)]
        kind: Option<StaticKind>,
    },
    /// Compute metrics for the steering and any baselines.
    Evaluate,
    /// Run the pair count x magnitude weight grid and write a Pareto CSV.
    Sweep,
    /// Summarize the run directory.
    Report,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::TrainSae => "train-sae",
            Command::FitPca => "fit-pca",
            Command::IdentifyPairs => "identify-pairs",
            Command::Steer => "steer",
            Command::Baseline { .. } => "baseline",
            Command::Evaluate => "evaluate",
            Command::Sweep => "sweep",
            Command::Report => "report",
        }
    }
}

/// Load the configuration and run one subcommand.
pub fn run(cli: &Cli) -> CliResult<()> {
    let overrides = Overrides {
        run_dir: cli.run_dir.clone(),
        seed: cli.seed,
    };
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    let ctx = Context::new(cfg, cli.quiet);
    match &cli.command {
        Command::Generate => commands::generate(&ctx),
        Command::TrainSae => commands::train_sae(&ctx),
        Command::FitPca => commands::fit_pca(&ctx),
        Command::IdentifyPairs => commands::identify_pairs(&ctx),
        Command::Steer => commands::steer(&ctx),
        Command::Baseline { kind } => match kind {
            Some(k) => commands::baseline(&ctx, &[*k]),
            None => commands::baseline(&ctx, &StaticKind::ALL),
        },
        Command::Evaluate => commands::evaluate(&ctx),
        Command::Sweep => commands::sweep(&ctx),
        Command::Report => commands::report(&ctx),
    }
}
