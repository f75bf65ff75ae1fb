mod args;
mod commands;
mod config;
mod failure;

use std::process::ExitCode;

use clap::Parser;

use crate::args::Cli;
use crate::failure::{Failure, Stage};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(failure.stage.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let threads = commands::requested_threads(&cli.command)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| Failure {
        stage: Stage::Config,
        source: hubtext_core::Error::Config(format!("thread pool: {e}")),
    })?;
    pool.install(|| commands::run(cli.command))
}
