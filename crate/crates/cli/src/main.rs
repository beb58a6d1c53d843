mod args;
mod commands;
mod output;

use std::process::ExitCode;

use clap::Parser;
use kmsig_core::attack::AttackError;
use kmsig_core::detector::DetectorError;
use kmsig_core::gridsim::GridError;
use kmsig_core::io::CsvError;
use kmsig_core::scenario::ScenarioError;

use args::{Cli, Command};

/// A problem with the command's inputs rather than with running it.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct InputError(pub String);

/// Exit code 2 for bad inputs (configs, flags, input files), 1 for failures while running.
fn exit_code(err: &anyhow::Error) -> u8 {
    let input = err.chain().any(|e| {
        if e.is::<InputError>() {
            return true;
        }
        if let Some(s) = e.downcast_ref::<ScenarioError>() {
            return s.is_config_error();
        }
        if let Some(g) = e.downcast_ref::<GridError>() {
            return matches!(
                g,
                GridError::Parse(_) | GridError::Invalid { .. } | GridError::Config(_)
            );
        }
        if let Some(c) = e.downcast_ref::<CsvError>() {
            return !matches!(c, CsvError::Io(_));
        }
        if let Some(d) = e.downcast_ref::<DetectorError>() {
            return matches!(d, DetectorError::Config(_) | DetectorError::TooShort { .. });
        }
        e.is::<AttackError>()
    });
    if input {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Inject(a) => commands::inject_cmd(a),
        Command::Detect(a) => commands::detect(a),
        Command::Run(a) => commands::run(a),
        Command::Report(a) => commands::report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
