//! `qgbc`: batch experiments on quantum graphs with quasi-δ vertex conditions.

mod commands;
mod config;
mod exit;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Context;
use crate::exit::{Failure, EXIT_CODES};
use crate::output::Output;

#[derive(Parser)]
#[command(name = "qgbc", version, about, after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `out` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for randomized searches; overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel restarts.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Lowest eigenvalues of the static Laplacian.
    Spectrum,
    /// Partial Cayley transform against its closed form.
    Cayley,
    /// Propagation with a time-dependent potential.
    Propagate,
    /// Convergence of sawtooth-lifted induction propagators.
    StabilitySweep,
    /// Piecewise-linear flux control towards a target state.
    ControlSearch,
    /// Measured constants of the stability hypotheses.
    CheckAssumptions,
}

fn run(cli: &Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::ConfigInvalid { path: "--threads".into(), message: e.to_string() })?;
    }
    let path = cli.config.as_ref().ok_or_else(|| Failure::ConfigInvalid {
        path: "--config".into(),
        message: "no config given".into(),
    })?;
    let config = config::load(path)?;
    let base = path.parent().map(PathBuf::from).unwrap_or_default();
    let out_dir = match (&cli.out, &config.out) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => base.join(o),
        (None, None) => PathBuf::from("qgbc-out"),
    };
    let seed = cli.seed.unwrap_or(config.seed);
    let ctx = Context { out: Output::create(&out_dir)?, config, base, seed };
    log::info!("writing to {}", out_dir.display());
    match cli.command {
        Command::Spectrum => commands::spectrum(&ctx),
        Command::Cayley => commands::cayley(&ctx),
        Command::Propagate => commands::propagate(&ctx),
        Command::StabilitySweep => commands::stability_sweep(&ctx),
        Command::ControlSearch => commands::control_search(&ctx),
        Command::CheckAssumptions => commands::check(&ctx),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("QGBC_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error[{}]: {f}", f.tag());
            ExitCode::from(f.code() as u8)
        }
    }
}
