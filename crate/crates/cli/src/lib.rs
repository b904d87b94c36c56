//! Configuration-driven front end for `heom-core`.

pub mod commands;
pub mod config;
pub mod error;

pub use config::{parse_config, RunSpec};
pub use error::{CliError, CliResult};
