//! Command layer for the link-context learning pipeline: run configuration,
//! run directories, the subcommands and their reports and plots.

pub mod commands;
pub mod config;
pub mod error;
pub mod reports;
pub mod rundir;
pub mod svg;

pub use commands::{Ablation, GenOptions, Session, Target};
pub use config::RunConfig;
pub use error::{exit_code, CliError};
pub use rundir::RunDir;
