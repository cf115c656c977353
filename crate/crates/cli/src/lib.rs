//! Experiment runner for `cacheopt`: TOML scenarios, named presets, sweeps
//! over schemes and bounds, CSV output.

pub mod activity;
pub mod commands;
pub mod config;
pub mod error;
pub mod presets;
pub mod sweep;

pub use config::{Config, Scenario, Scheme, Solver, SweepVariable};
pub use error::{CliError, CliResult};
pub use sweep::{run_random_activity, run_sweep, write_rows, SweepRow, SweepSpec};
