//! `calibnet` command-line entry point.

mod commands;
mod config;
mod error;
mod output;
mod selftest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(name = "calibnet", version, about = "RGB-D salient instance segmentation toolkit")]
struct Cli {
    /// Seed for every pseudo-random choice (falls back to CALIB_SEED, then 0).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `key = value` file with seed and network overrides.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the network on one RGB-D pair and write masks and scores.
    Forward(commands::forward::Args),
    /// Finite-difference checks of every learned operator.
    Gradcheck(commands::gradcheck::Args),
    /// Optimal assignment for a cost matrix.
    Match(commands::matching::Args),
    /// Loss breakdown of the network on one annotated sample.
    Loss(commands::loss::Args),
    /// Mask AP over a dataset manifest.
    Eval(commands::eval::Args),
    /// Parameter and MAC counts.
    Flops(commands::flops::Args),
    /// Dataset quality analytics.
    DatasetStats(commands::stats::Args),
    /// Run the built-in fixtures.
    Selftest(selftest::Args),
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (seed, config) = (cli.seed, cli.config.as_ref());
    match cli.command {
        Command::Forward(a) => commands::forward::run(a, seed, config),
        Command::Gradcheck(a) => commands::gradcheck::run(a, seed),
        Command::Match(a) => commands::matching::run(a),
        Command::Loss(a) => commands::loss::run(a, seed, config),
        Command::Eval(a) => commands::eval::run(a, seed, config),
        Command::Flops(a) => commands::flops::run(a, config),
        Command::DatasetStats(a) => commands::stats::run(a),
        Command::Selftest(a) => selftest::run(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("calibnet: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
