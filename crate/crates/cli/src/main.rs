//! detkit command-line front door: reproducible subcommands over the library
//! with config files, seeds, and machine-readable reports.
//!
//! Exit codes: 0 success, 1 check failure, 2 usage or config error.

mod args;
mod commands;
mod manifest;

use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches};

use args::{Cli, ConfigOverlay};

/// How a command run ended.
pub enum Outcome {
    Success,
    /// The command ran but its check did not pass.
    CheckFailed(String),
}

fn main() -> ExitCode {
    let matches = Cli::command().get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(cli) => cli,
        Err(e) => {
            // Shouldn't happen after a successful parse; treat as usage error.
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };

    let overlay = match ConfigOverlay::load(cli.config.as_deref(), &matches) {
        Ok(overlay) => overlay,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };

    match commands::run(cli.command, &overlay) {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::CheckFailed(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(1)
        }
        Err(detkit::Error::Internal(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
