//! `driveby`: bus selection and dense-map imputation from the command line.
//!
//! Exit codes: 0 success, 2 usage error, 3 data or validation error,
//! 4 numerical failure.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use driveby_core::Error;

#[derive(Parser, Debug)]
#[command(
    name = "driveby",
    version,
    about = "Select buses for drive-by sensing and impute dense maps"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Experiment config (TOML). Flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Top-level seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker thread cap.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the occupancy tensor from a GTFS feed or a synthetic fleet.
    Ingest(commands::IngestArgs),
    /// Choose k buses and print the four coverage metrics.
    Select(commands::SelectArgs),
    /// Simulate a ground-truth spatiotemporal matrix.
    Simulate(commands::SimulateArgs),
    /// Impute a dense matrix from the cells sampled by a selection.
    Impute(commands::ImputeArgs),
    /// Score an estimate against the truth.
    Evaluate(commands::EvaluateArgs),
    /// Run every table for a config.
    Report(commands::ReportArgs),
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Argument(_) | Error::Budget { .. } => 2,
        Error::Numerical(_) => 4,
        Error::Io { .. }
        | Error::MissingColumn { .. }
        | Error::Row { .. }
        | Error::Data(_)
        | Error::Degenerate(_)
        | Error::InsufficientData(_)
        | Error::Format(_) => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DRIVEBY_LOG", "warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    let result = match cli.command {
        Command::Ingest(a) => commands::ingest(&cli.global, a),
        Command::Select(a) => commands::select(&cli.global, a),
        Command::Simulate(a) => commands::simulate(&cli.global, a),
        Command::Impute(a) => commands::impute(&cli.global, a),
        Command::Evaluate(a) => commands::evaluate(&cli.global, a),
        Command::Report(a) => commands::report(&cli.global, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
