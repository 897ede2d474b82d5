use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pfdiff::commands;
use pfdiff::config::{ExperimentConfig, Overrides};
use pfdiff::CliError;

/// Diffusion-based synthesis of feasible AC power-flow operating states.
#[derive(Parser)]
#[command(name = "pfdiff", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Overrides,
}

#[derive(Subcommand)]
enum Command {
    /// Solve load scenarios (or ingest a CSV) into a dataset directory
    GenData,
    /// Train the noise-prediction network on a dataset
    Train,
    /// Generate states from a checkpoint
    Sample,
    /// Compare generated states with a real dataset
    Eval,
    /// Time DDPM against DDIM over several sample counts
    Bench,
    /// Train several widths and record their validation curves
    CapacitySweep,
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = ExperimentConfig::resolve(&cli.flags)?;
    match cli.command {
        Command::GenData => commands::gen_data(&cfg).map(drop),
        Command::Train => commands::train_cmd(&cfg).map(drop),
        Command::Sample => commands::sample_cmd(&cfg).map(drop),
        Command::Eval => commands::eval_cmd(&cfg).map(drop),
        Command::Bench => commands::bench_cmd(&cfg).map(drop),
        Command::CapacitySweep => commands::capacity_sweep_cmd(&cfg).map(drop),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
