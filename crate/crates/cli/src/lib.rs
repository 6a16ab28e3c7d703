//! Operator surface for the super-resolution pipeline: configuration,
//! dataset resolution, artifact manifests and the subcommands.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod manifest;

pub use config::RunConfig;
pub use error::{CliError, CliResult};
