//! `nb`: simulate, fit, select and evaluate Normal-Block models from the
//! command line. Exit codes: 0 on success (including fits that stopped
//! before converging), 2 on usage or input errors, 1 on internal errors.

mod args;
mod commands;
mod files;
mod io;

use std::fmt;
use std::process::ExitCode;

use clap::Parser;
use normalblock::Error as CoreError;

use args::{Cli, Command};

/// A problem with the command line or the input files.
#[derive(Debug)]
pub struct InputError(String);

impl InputError {
    pub fn new(msg: impl Into<String>) -> Self {
        InputError(msg.into())
    }
}

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

/// Core errors that reflect bad arguments or data rather than a failure of
/// the numerics.
fn is_input_error(err: &anyhow::Error) -> bool {
    err.chain().any(|cause| {
        cause.is::<InputError>()
            || matches!(
                cause.downcast_ref::<CoreError>(),
                Some(
                    CoreError::InvalidParameter(_)
                        | CoreError::InvalidAssignment(_)
                        | CoreError::Shape(_)
                        | CoreError::RankDeficientDesign
                        | CoreError::DegenerateRow(_)
                        | CoreError::DegenerateColumn(_)
                )
            )
    })
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(InputError::new("--jobs must be at least 1").into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global()?;
    }
    match &cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Fit(a) => commands::fit(a),
        Command::Select(a) => commands::select(a),
        Command::Stars(a) => commands::stars(a),
        Command::Metrics(a) => commands::metrics_cmd(a),
        Command::Experiment(a) => commands::experiment_cmd(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("NB_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if is_input_error(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
