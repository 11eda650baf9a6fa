//! Command-line front end for `locedit`.
//!
//! Subcommands: `run` edits a JSONL batch, `evaluate` scores paired
//! outputs, `train-energy` fits toy scorers, `locate` prints saliency and
//! located spans, `compare-rerankers` runs a reranker grid.

pub mod commands;
pub mod assets;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "locedit", version, about = "Locate-and-edit constrained text rewriting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every config-driven subcommand.
#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, env = "LOCEDIT_WORKERS", default_value_t = 1)]
    pub workers: usize,
    /// Include per-iteration traces in the output.
    #[arg(long)]
    pub trace: bool,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    pub dry_run: bool,
}

impl CommonArgs {
    pub fn overrides(&self) -> config::Overrides {
        config::Overrides {
            input: self.input.clone(),
            output: self.output.clone(),
            seed: self.seed,
            trace: self.trace,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Edit every record of a JSONL input toward the configured constraints.
    Run(CommonArgs),
    /// Compute the metrics table for `{"id", "original", "output", "prompt_id"}` pairs.
    Evaluate(CommonArgs),
    /// Train toy bag-of-embeddings scorers on `{"text", "label"}` data.
    TrainEnergy(commands::train::TrainArgs),
    /// Show token saliency and the located spans for some texts.
    Locate(commands::locate::LocateArgs),
    /// Run every reranker over a grid of k, m and b.
    CompareRerankers(commands::compare::CompareArgs),
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run(args) => commands::run::execute(&args),
        Command::Evaluate(args) => commands::evaluate::execute(&args),
        Command::TrainEnergy(args) => commands::train::execute(&args),
        Command::Locate(args) => commands::locate::execute(&args),
        Command::CompareRerankers(args) => commands::compare::execute(&args),
    }
}
