mod args;
mod artifacts;
mod commands;
mod manifest;
mod settings;

use std::process::ExitCode;

use cdtm_core::Error;
use clap::Parser;

use crate::args::{Cli, Command};

/// 2 for bad configuration or input, 1 for failures during computation.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Input(_) | Error::EmptyCorpus(_) | Error::Parse { .. } | Error::Io(_) | Error::Json(_) => 2,
        Error::Domain { .. } | Error::Numerical(_) | Error::AscentViolation { .. } => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CDTM_LOG", "warn")).init();
    let threads = match &cli.command {
        Command::Split(a) => a.common.threads,
        Command::Train(a) => a.common.threads,
        Command::Infer(a) => a.common.threads,
        Command::Coherence(a) => a.common.threads,
        Command::EntropyStats(a) => a.common.threads,
        Command::Grid(a) => a.common.threads,
    };
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("cdtm: cannot start {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::Split(a) => commands::split(a),
        Command::Train(a) => commands::train(a),
        Command::Infer(a) => commands::infer(a),
        Command::Coherence(a) => commands::coherence(a),
        Command::EntropyStats(a) => commands::entropy_stats_cmd(a),
        Command::Grid(a) => commands::grid(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cdtm: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
