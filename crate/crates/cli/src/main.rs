mod config;
mod run;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use config::{Overrides, RunConfig};
use std::path::PathBuf;

/// Network-slice allocation: simulate workloads, train allocation policies,
/// and compare them against static equal slicing.
#[derive(Parser)]
#[command(name = "slicesim", version, about)]
struct Cli {
    /// Scenario description (TOML).
    #[arg(short, long, global = true, default_value = "config.toml")]
    config: PathBuf,

    /// Directory for logs, checkpoints, and result tables.
    #[arg(short, long, global = true, default_value = "out")]
    out: PathBuf,

    /// Override training.seed_workload.
    #[arg(long, global = true)]
    seed_workload: Option<u64>,

    /// Override training.seed_init.
    #[arg(long, global = true)]
    seed_init: Option<u64>,

    /// Override training.seed_explore.
    #[arg(long, global = true)]
    seed_explore: Option<u64>,

    /// Override scenario.mode (`arrival` or `batch`).
    #[arg(long, global = true)]
    mode: Option<String>,

    /// Override scenario.budget_level (0..=3).
    #[arg(long, global = true)]
    budget_level: Option<u8>,

    /// Override training.workers for evaluation.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the episode workloads this scenario would use, plus a manifest.
    GenData,
    /// Train the two allocation policies and save a checkpoint.
    Train,
    /// Evaluate an allocator on the held-out episodes.
    Eval {
        /// Checkpoint directory (defaults to <out>/checkpoint).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// `policy` (needs a checkpoint) or `equal`.
        #[arg(long, default_value = "policy")]
        allocator: String,
    },
    /// Train and evaluate at every configured budget level, against equal slicing.
    Compare,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let mut cfg = RunConfig::load(&cli.config)
        .with_context(|| format!("reading {}", cli.config.display()))?;
    let overrides = Overrides {
        seed_workload: cli.seed_workload,
        seed_init: cli.seed_init,
        seed_explore: cli.seed_explore,
        mode: cli.mode,
        budget_level: cli.budget_level,
        workers: cli.workers,
    };
    overrides.apply(&mut cfg);
    cfg.validate()?;

    match cli.command {
        Command::GenData => run::gen_data_cmd(&cfg, &cli.out),
        Command::Train => run::train_cmd(&cfg, &cli.out),
        Command::Eval {
            checkpoint,
            allocator,
        } => run::eval_cmd(&cfg, &cli.out, checkpoint, &allocator),
        Command::Compare => run::compare_cmd(&cfg, &cli.out),
    }
}
