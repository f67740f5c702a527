use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hinf_dpi_cli::commands;
use hinf_dpi_cli::config::Config;
use hinf_dpi_cli::{exit, CliError, Result};
use serde::Serialize;

/// Damped-Newton policy iteration for H∞ tracking control.
///
/// Exit codes: 0 success, 1 other failure, 2 config/parse error or missing
/// file, 3 rank condition violated, 4 training did not converge,
/// 5 dataset or weights fingerprint mismatch.
#[derive(Parser)]
#[command(name = "hinf-dpi", version, about, long_about = None)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Directory for output artifacts.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Overrides `collection.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate under behavior signals and write dataset.bin.
    Collect(Common),
    /// Run δ-policy iteration and write weights.json.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset archive (off-policy training only).
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Closed-loop test of trained weights.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        weights: PathBuf,
    },
    /// collect, train and evaluate in sequence.
    Pipeline(Common),
}

fn print<T: Serialize>(summary: &T) -> Result<()> {
    let line = serde_json::to_string(summary).map_err(|e| CliError::Config(e.to_string()))?;
    println!("{line}");
    Ok(())
}

fn load(common: &Common) -> Result<Config> {
    Ok(Config::load(&common.config)?.with_seed(common.seed))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Collect(common) => print(&commands::collect(&load(&common)?, &common.out_dir)?),
        Command::Train { common, dataset } => {
            let summary = commands::train(&load(&common)?, dataset.as_deref(), &common.out_dir)?;
            print(&summary)?;
            commands::require_converged(&summary)
        }
        Command::Evaluate { common, weights } => {
            print(&commands::evaluate(&load(&common)?, &weights, &common.out_dir)?)
        }
        Command::Pipeline(common) => print(&commands::pipeline(&load(&common)?, &common.out_dir)?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { exit::CONFIG } else { exit::OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
