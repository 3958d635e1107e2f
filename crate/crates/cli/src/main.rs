use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use dccda_core::experiment::{
    report, run_sweep, run_training, run_verification_suite, summary_table, ExperimentConfig, ConsistencyChannel, VerifyConfig,
};
use dccda_core::par::{Execution, WORKERS_ENV};

#[derive(Parser)]
#[command(name = "dccda", version, about = "Exact checks and training runs for communicating-critic policy gradients")]
struct Cli {
    /// Worker threads for parallel loops (also read from DCCDA_WORKERS).
    #[arg(long, global = true, env = WORKERS_ENV)]
    workers: Option<usize>,
    /// Run every loop on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the exact identities and inequalities on random instances.
    Verify {
        #[arg(long, default_value_t = 100)]
        batch: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        /// Use the lossy action-only channel in the consistency check.
        #[arg(long)]
        action_only: bool,
        /// Monte-Carlo samples per instance for the sampled-variance check.
        #[arg(long, default_value_t = 0)]
        mc_samples: usize,
        /// Print the reports as JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Train every configured method over every seed.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one method over an (alpha, beta) grid.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize every run directory below DIR.
    Report {
        dir: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

fn load(path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(s) = seed {
        config.train.seed = s;
    }
    if let Some(o) = out {
        config.output_dir = o;
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(w) = cli.workers {
        anyhow::ensure!(w > 0, "worker count must be positive");
        std::env::set_var(WORKERS_ENV, w.to_string());
    }
    let exec = if cli.sequential { Execution::Sequential } else { Execution::default() };
    match cli.command {
        Command::Verify { batch, seed, tol, action_only, mc_samples, json } => {
            let config = VerifyConfig {
                batch,
                seed,
                tol,
                consistency_channel: if action_only { ConsistencyChannel::ActionOnly } else { ConsistencyChannel::Perfect },
                mc_samples,
                ..VerifyConfig::default()
            };
            let outcome = run_verification_suite(&config, exec)?;
            if json {
                println!("{}", outcome.to_json()?);
            } else {
                print!("{}", outcome.table());
            }
            Ok(ExitCode::from(outcome.exit_code() as u8))
        }
        Command::Train { config, seed, out } => {
            let config = load(&config, seed, out)?;
            let summaries = run_training(&config, exec)?;
            print!("{}", summary_table(&summaries));
            eprintln!("logs written to {}", config.output_dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep { config, seed, out } => {
            let config = load(&config, seed, out)?;
            let summaries = run_sweep(&config, exec)?;
            print!("{}", summary_table(&summaries));
            eprintln!("sweep written to {}", config.output_dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Report { dir, json } => {
            let summaries = report(&dir)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&summaries)?);
            } else {
                print!("{}", summary_table(&summaries));
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
