//! Configuration-driven runs of the `pgsae` models: fitting, poststratified
//! prediction, design-based simulation and synthetic population generation.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

pub use commands::{cmd_fit, cmd_predict, cmd_simulate, cmd_synthpop, run, Summary};
pub use config::{Command, RunConfig};
pub use error::{exit, CliError, CliResult};
