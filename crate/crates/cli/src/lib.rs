//! Reproducible experiment runner for Activated Random Walk.
//!
//! Every command reads a flat [`Params`] set, runs independent trials keyed
//! by `(seed, trial)`, and writes `trials.csv`, `summary.csv` and
//! `manifest.json`. Per-trial output does not depend on the worker count.

pub mod commands;
pub mod output;
pub mod params;

use std::path::Path;
use std::time::Instant;

use clap::{Parser, Subcommand};

pub use commands::{run, Experiment};
pub use output::{Outcome, Table};
pub use params::Params;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VIOLATION: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;

/// Environment variable that overrides the worker count.
pub const WORKERS_ENV: &str = "ARW_WORKERS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("cannot write output: {0}")]
    Output(String),
}

impl From<arw_core::ArwError> for CliError {
    fn from(e: arw_core::ArwError) -> Self {
        CliError::Config(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(name = "arw", version, about = "Activated Random Walk on Z: stabilization, density estimates and coupling checks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Two random firing orders give the same odometer and final state.
    #[command(after_help = commands::help::ABELIAN)]
    AbelianCheck(Params),
    /// The trap procedure's odometer dominates the legal odometer.
    #[command(after_help = commands::help::LEAST_ACTION)]
    LeastActionCheck(Params),
    /// Chi-square test of instructions read after an exploration.
    #[command(after_help = commands::help::SMP)]
    SmpCheck(Params),
    /// Aggregate density from the spread of n particles at the origin.
    #[command(after_help = commands::help::SPREAD)]
    Spread(Params),
    /// Inner density from killed stabilizations of 1_I.
    #[command(after_help = commands::help::INNER)]
    Inner(Params),
    /// Outer density from windowed samples of w(0) on a density grid.
    #[command(after_help = commands::help::OUTER)]
    Outer(Params),
    /// Stationary chain: add a particle at v, stabilize with sink.
    #[command(after_help = commands::help::CHAIN)]
    Chain(Params),
    /// Point-source IDLA cluster shape and martingale.
    #[command(after_help = commands::help::IDLA_SHAPE)]
    IdlaShape(Params),
    /// Killed IDLA filling of B_{n(1-eps)/2}.
    #[command(after_help = commands::help::IDLA_FILL)]
    IdlaFill(Params),
    /// IDLA on a Bernoulli(zeta) environment of open sites.
    #[command(after_help = commands::help::PERCOLATED)]
    PercolatedIdla(Params),
    /// Exact ARW / killed-ARW coupling on an interval.
    #[command(after_help = commands::help::COUPLE)]
    Couple(Params),
    /// Pointwise check of u_n <= v_n + w'.
    #[command(after_help = commands::help::DECOMPOSE)]
    Decompose(Params),
    /// Total odometer of the trap procedure.
    #[command(after_help = commands::help::TRAP)]
    TrapOdometer(Params),
}

impl Command {
    pub fn split(self) -> (Experiment, Params) {
        use Experiment as E;
        match self {
            Command::AbelianCheck(p) => (E::AbelianCheck, p),
            Command::LeastActionCheck(p) => (E::LeastActionCheck, p),
            Command::SmpCheck(p) => (E::SmpCheck, p),
            Command::Spread(p) => (E::Spread, p),
            Command::Inner(p) => (E::Inner, p),
            Command::Outer(p) => (E::Outer, p),
            Command::Chain(p) => (E::Chain, p),
            Command::IdlaShape(p) => (E::IdlaShape, p),
            Command::IdlaFill(p) => (E::IdlaFill, p),
            Command::PercolatedIdla(p) => (E::PercolatedIdla, p),
            Command::Couple(p) => (E::Couple, p),
            Command::Decompose(p) => (E::Decompose, p),
            Command::TrapOdometer(p) => (E::TrapOdometer, p),
        }
    }
}

/// Worker count after the environment override.
pub fn effective_workers(params: &Params) -> Result<usize, CliError> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| CliError::Config(format!("{WORKERS_ENV} must be an integer, got {v:?}"))),
        Err(_) => Ok(params.workers.unwrap_or(0)),
    }
}

/// Resolve the config file, run, and write the artifacts. Returns the exit
/// code.
pub fn execute(experiment: Experiment, flags: &Params) -> Result<(Outcome, i32), CliError> {
    let params = Params::resolve_file(flags)?;
    let workers = effective_workers(&params)?;
    let out_dir = params.out.clone().unwrap_or_else(|| Path::new("arw-out").join(experiment.name()));
    let start = Instant::now();
    let outcome = run(experiment, params, workers)?;
    let elapsed = start.elapsed().as_secs_f64();
    output::write_all(&out_dir, &outcome, workers, elapsed)?;
    let code = if outcome.violations > 0 { EXIT_VIOLATION } else { EXIT_OK };
    Ok((outcome, code))
}
