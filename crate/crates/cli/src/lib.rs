//! Experiment driver: JSON-configured runs, hyperparameter grids, ablation
//! suites and comparison reports on top of `fscil-core`.
//!
//! Exit codes: 0 on success, 2 for configuration errors, 1 for failures at
//! run time.

pub mod commands;
pub mod config;
pub mod error;
pub mod plot;
pub mod record;

pub use commands::{cmd_ablation, cmd_grid, cmd_report, cmd_run, execute, prepare, Overrides};
pub use config::RunConfig;
pub use error::{CliError, CliResult};
pub use record::RunRecord;
