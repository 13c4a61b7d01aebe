//! Library side of the `pgfield` command-line tool.
//!
//! [`run`] turns parsed arguments into a [`Report`]; [`main_entry`] adds
//! argument parsing, rendering, output and exit codes. Exit codes: 0 for
//! success (warnings included), 1 when the report cannot be written,
//! 2 for usage errors, 3 for MDPs that fail to parse or validate, and
//! 4 for numerical failures.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use thiserror::Error;

pub mod args;
mod commands;
pub mod output;

pub use args::Cli;
pub use output::{Report, Status};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] pgfield::Error),

    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use pgfield::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Write { .. } => 1,
            CliError::Core(e) => match e {
                E::Dimension { .. } | E::InvalidArgument(_) | E::Io { .. } => 2,
                E::Parse { .. } | E::Validation(_) => 3,
                E::Singular(_) | E::ThetaMismatch => 4,
            },
        }
    }
}

pub fn run(cli: &Cli) -> Result<Report, CliError> {
    commands::dispatch(cli)
}

/// Parse `args`, run, write the report and map the outcome to an exit code.
pub fn main_entry<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code().clamp(0, 255) as u8);
        }
    };
    match run(&cli).and_then(|report| emit(&cli, &report).map(|()| report)) {
        Ok(report) => {
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            match report.status {
                Status::Ok => ExitCode::SUCCESS,
                Status::Invalid => ExitCode::from(3),
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn emit(cli: &Cli, report: &Report) -> Result<(), CliError> {
    let text = report.render(cli.format).map_err(CliError::Usage)?;
    match &cli.out {
        Some(path) => std::fs::write(path, text).map_err(|source| CliError::Write {
            path: path.clone(),
            source,
        }),
        None => std::io::stdout()
            .lock()
            .write_all(text.as_bytes())
            .map_err(|source| CliError::Write {
                path: PathBuf::from("<stdout>"),
                source,
            }),
    }
}
