// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "spqr", version, about = "Spectral ensemble-independence experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Common {
    /// Strict JSON config; defaults are used for omitted keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// GOE spectrum against the semicircle law.
    RmtDemo(Common),
    /// KL-test detection error of the spiked model against the optimal curve.
    Detect(Common),
    /// Ensemble Q-learning on a grid world.
    Train(Common),
    /// Independence diagnostics of a saved ensemble.
    Analyze(Common),
    /// Finite-difference audit of every backward pass.
    Gradcheck(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::RmtDemo(c) => commands::rmt_demo(c),
        Command::Detect(c) => commands::detect(c),
        Command::Train(c) => commands::train(c),
        Command::Analyze(c) => commands::analyze(c),
        Command::Gradcheck(c) => commands::gradcheck(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
