//! `smokegate` command-line tool.
//!
//! Exit codes: 0 success, 1 output write failure, 2 image decode failure,
//! 3 backend or configuration error (including bad flags), 4 manifest error.

mod commands;
mod config;
mod error;

use std::process::ExitCode;

use clap::Parser;

use config::{Cli, CliConfig, Command};
use error::CliError;

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Classify { images } => {
            let cfg = CliConfig::resolve(cli.opts, None, false)?;
            commands::classify(&images, &cfg)
        }
        Command::Detect { image, annotated } => {
            let cfg = CliConfig::resolve(cli.opts, None, false)?;
            commands::detect(&image, annotated.as_deref(), &cfg)
        }
        Command::Evaluate {
            manifest,
            no_split,
            ratio,
        } => {
            let cfg = CliConfig::resolve(cli.opts, ratio, no_split)?;
            commands::evaluate(&manifest, &cfg)
        }
        Command::Split { manifest, ratio } => {
            let cfg = CliConfig::resolve(cli.opts, ratio, false)?;
            commands::split(&manifest, &cfg)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(3)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
