//! `ev-energy`: batch front end for ingest, synth, train, predict,
//! evaluate, importance and sweep.
//!
//! Exit codes: 0 success, 1 usage, 2 data, 3 numeric failure.

mod cli;
mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use serde::Serialize;

use cli::{Cli, Command};
use commands::Run;
use config::{resolve, ConfigFile, Manifest};
use error::{CliError, EXIT_USAGE};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE as u8 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = match &cli.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let seed = cli.seed.or(config.seed()?).unwrap_or(0);
    let out_dir = cli.out_dir.clone().or(config.out_dir()?).unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::data(format!("cannot create {}: {e}", out_dir.display())))?;
    let mut run = Run {
        seed,
        out_dir,
        inputs: Vec::new(),
        outputs: Vec::new(),
    };
    let name = cli.command.name();
    match &cli.command {
        Command::Ingest(a) => execute(&mut run, name, &resolve(name, &config, a)?, commands::ingest),
        Command::Synth(a) => execute(&mut run, name, &resolve(name, &config, a)?, commands::synth),
        Command::Train(a) => execute(&mut run, name, &resolve(name, &config, a)?, commands::train),
        Command::Predict(a) => execute(&mut run, name, &resolve(name, &config, a)?, commands::predict),
        Command::Evaluate(a) => execute(&mut run, name, &resolve(name, &config, a)?, commands::evaluate),
        Command::Importance(a) => execute(&mut run, name, &resolve(name, &config, a)?, commands::importance),
        Command::Sweep(a) => execute(&mut run, name, &resolve(name, &config, a)?, commands::sweep),
    }
}

fn execute<P: Serialize>(
    run: &mut Run,
    command: &str,
    params: &P,
    work: fn(&mut Run, &P) -> Result<(), CliError>,
) -> Result<(), CliError> {
    log::info!("{command}: seed {}, out-dir {}", run.seed, run.out_dir.display());
    work(run, params)?;
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command,
        seed: run.seed,
        out_dir: &run.out_dir,
        inputs: std::mem::take(&mut run.inputs),
        outputs: std::mem::take(&mut run.outputs),
        params,
    };
    manifest.write()?;
    Ok(())
}
