//! Subcommand implementations behind the `amc` binary.

pub mod commands;
pub mod config;

pub use commands::{CalcQuery, Outcome, METRICS_HEADER};
pub use config::{load_config, parse_config, RunConfig};
