//! Experiment runner for `spinpop-core`: TOML configuration, data file
//! formats, run manifests and the `spinpop` subcommands.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod manifest;

pub use commands::execute;
pub use config::{Command, ExperimentConfig, Mode};
pub use error::{CliError, ConfigError};
