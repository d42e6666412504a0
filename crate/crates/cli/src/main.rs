//! `budis` command-line interface.

mod commands;
mod config;
mod error;
mod input;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use budis::model::Fitter;
use clap::{Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "budis", version, about = "Small area estimation under informative sampling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run seed; overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default `budis-<command>`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides `fitter` in the config.
    #[arg(long, global = true)]
    fitter: Option<Fitter>,
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Build features and fit the model to a sample.
    Fit,
    /// Poststratified area estimates from an earlier fit.
    Predict,
    /// Repeated-sampling simulation study.
    Simulate,
    /// Build and write features only.
    Features,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Fit => "fit",
            Command::Predict => "predict",
            Command::Simulate => "simulate",
            Command::Features => "features",
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads.filter(|&n| n > 0) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Validation(format!("thread pool: {e}")))?;
    }
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(fitter) = cli.fitter {
        cfg.fitter = fitter;
    }
    cfg.derive_seeds();
    cfg.validate()?;
    let name = cli.command.name();
    let out = cli.out.unwrap_or_else(|| PathBuf::from(format!("budis-{name}")));
    log::info!(
        "command={name} seed={} fitter={} out={}",
        cfg.seed,
        cfg.fitter,
        out.display()
    );
    match cli.command {
        Command::Fit => commands::fit(&cfg, &out),
        Command::Predict => commands::predict(&cfg, &out),
        Command::Simulate => commands::simulate(&cfg, &out),
        Command::Features => commands::features(&cfg, &out),
    }?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
