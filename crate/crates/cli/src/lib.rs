//! Command-line runner for the mergelab pipeline: pre-training, per-domain
//! fine-tuning, merging, evaluation and the study recipes.

pub mod commands;
pub mod config;
pub mod error;
pub mod experiments;
pub mod methods;
pub mod workspace;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::{Config, Loaded};
pub use error::{CliError, CliResult};
pub use workspace::Workspace;

#[derive(Debug, Parser)]
#[command(name = "mergelab", version, about = "Merge per-domain sequential recommenders without their training data")]
pub struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true, default_value = "mergelab.toml")]
    pub config: PathBuf,
    /// Output directory; overrides `out_dir` from the configuration.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Run a single configured seed instead of all of them.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the shared base model on the pre-training domains.
    Pretrain,
    /// Fine-tune the base model on each target domain.
    Finetune {
        /// Only this domain.
        #[arg(long)]
        domain: Option<String>,
    },
    /// Merge fine-tuned checkpoints as described by a recipe file.
    Merge {
        #[arg(long)]
        recipe: PathBuf,
    },
    /// Evaluate a checkpoint on the test split of the configured domains.
    Eval {
        /// Checkpoint path; `{seed}` is replaced by each seed.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated subset of domains.
        #[arg(long, value_delimiter = ',')]
        domains: Option<Vec<String>>,
    },
    /// Run a study end to end.
    Experiment {
        /// One of overall, scarcity, unseen, domain_count_sweep,
        /// group_analysis, lambda_sweep, dynamics.
        #[arg(long)]
        recipe: String,
    },
}

pub fn run(cli: &Cli) -> CliResult<()> {
    let loaded = Loaded::from_path(&cli.config)?;
    let ws = Workspace::new(loaded, cli.out.clone());
    match &cli.command {
        Command::Pretrain => commands::pretrain(&ws),
        Command::Finetune { domain } => commands::finetune(&ws, domain.as_deref(), cli.seed),
        Command::Merge { recipe } => commands::merge(&ws, recipe, cli.seed),
        Command::Eval { checkpoint, domains } => {
            commands::eval(&ws, checkpoint, domains.as_deref(), cli.seed).map(|_| ())
        }
        Command::Experiment { recipe } => experiments::run(&ws, recipe, cli.seed),
    }
}
