//! Activated Random Walk on the integer line.
//!
//! Instruction stacks are addressed by `(seed, site, index)` through a pure
//! counter-based map, so every stabilization in this crate can be replayed,
//! shifted and coupled exactly. On top of the stacks sit the firing engines
//! (full-line, killed, IDLA, trap grid), the IDLA processes, Monte Carlo
//! estimators for the inner, outer and aggregate densities, and exact
//! per-seed coupling checks.

pub mod config;
pub mod couplings;
pub mod densities;
pub mod engine;
pub mod error;
pub mod idla;
pub mod stacks;
pub mod stats;
mod strip;
pub mod trials;

/// A lattice site.
pub type Site = i64;

pub use config::{Configuration, Interval, Odometer, Region, SiteState};
pub use engine::{
    boundary_source_stabilize, default_step_cap, fire, is_stable, stabilize, stabilize_idla, trap_stabilize,
    FireOutcome, FiringPolicy, Legality, Mode, StabilizationResult, Status,
};
pub use error::{ArwError, Result};
pub use idla::{ClusterTrace, GapSample, PercolationEnv};
pub use stacks::{empirical_law, Instruction, InstructionSource, LawTable, SleepRate, StackShift};
pub use trials::derive_trial_seed;
