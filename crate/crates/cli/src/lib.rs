//! Command-line harness: corpus ingestion, training, generation,
//! evaluation, parameter sweeps and latency benchmarks.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod prompts;

use args::{Cli, Command};
use commands::{BenchRun, EvaluateRun, GenerateRun, IngestRun, SweepRun, TrainRun};
pub use error::{CliError, CliResult};

/// Resolves and validates the command's configuration, then runs it.
pub fn run(cli: Cli) -> CliResult<()> {
    let config = cli.config.as_deref();
    match &cli.command {
        Command::Ingest(a) => IngestRun::from_args(config, cli.out, a)?.execute(),
        Command::Train(a) => TrainRun::from_args(config, cli.out, cli.seed, cli.sequential, a)?.execute(),
        Command::Generate(a) => GenerateRun::from_args(config, cli.out, cli.seed, cli.sequential, a)?.execute(),
        Command::Evaluate(a) => EvaluateRun::from_args(config, cli.out, cli.sequential, a)?.execute(),
        Command::Sweep(a) => SweepRun::from_args(config, cli.out, cli.seed, cli.sequential, a)?.execute(),
        Command::Bench(a) => BenchRun::from_args(config, cli.out, cli.seed, a)?.execute(),
    }
}
