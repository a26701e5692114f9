//! `portvm`: run, checkpoint, move, and simulate portable VM workloads.

mod commands;
mod error;
mod inputs;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{bench, net, plan, sim, vm};
use error::CliError;

/// Log filter variable, in `env_logger` syntax (`info`, `portvm_core=debug`, ...).
const LOG_ENV: &str = "PORTVM_LOG";

#[derive(Parser, Debug)]
#[command(name = "portvm", version, about = "Portable VM runtime with attested migration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Execute a module to completion and print its result.
    Run(vm::RunArgs),
    /// Capture a module at a stable point into an encrypted snapshot.
    Checkpoint(vm::CheckpointArgs),
    /// Resume a snapshot to completion and print the result.
    Restore(vm::RestoreArgs),
    /// Accept attested migrations and run what arrives.
    Serve(net::ServeArgs),
    /// Move a workload to a serving node.
    Migrate(net::MigrateArgs),
    /// Decide whether a workload should migrate.
    Decide(plan::DecideArgs),
    /// Run a replication scenario.
    Simulate(sim::SimulateArgs),
    /// Measure migration cost on this machine.
    Calibrate(plan::CalibrateArgs),
    /// Score validators against a labelled corpus.
    Validate(bench::ValidateArgs),
    /// Run the speculative execution benchmark.
    SpeculateBench(bench::SpeculateBenchArgs),
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Run(a) => vm::run(a),
        Command::Checkpoint(a) => vm::checkpoint(a),
        Command::Restore(a) => vm::restore_cmd(a),
        Command::Serve(a) => net::serve(a),
        Command::Migrate(a) => net::migrate_cmd(a),
        Command::Decide(a) => plan::decide_cmd(a),
        Command::Simulate(a) => sim::simulate(a),
        Command::Calibrate(a) => plan::calibrate_cmd(a),
        Command::Validate(a) => bench::validate(a),
        Command::SpeculateBench(a) => bench::speculate_bench(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::from(error::code::OK),
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::AssertionFailed(list) = &e {
                for f in list {
                    eprintln!("  {f}");
                }
            }
            ExitCode::from(e.code())
        }
    }
}
