use std::path::PathBuf;

use thiserror::Error;

/// Failures owned by the command layer. Core failures pass through as
/// `lcl_core::Error` inside the `anyhow` chain.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),

    #[error("unknown config key `{0}`")]
    UnknownKey(String),

    #[error("stage {stage} needs the {needs} checkpoint at {path}; run `lcl train {needs}` first")]
    Dependency { stage: String, needs: String, path: PathBuf },

    #[error("missing input {path}: {hint}")]
    MissingInput { path: PathBuf, hint: String },

    #[error("run directory {0} already holds a run; pass --force to overwrite it")]
    Exists(PathBuf),

    #[error("run directory is locked by another writer (remove {0} if it is stale)")]
    Locked(PathBuf),
}

pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DEPENDENCY: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::UnknownKey(_) => EXIT_CONFIG,
            CliError::Dependency { .. } | CliError::MissingInput { .. } => EXIT_DEPENDENCY,
            CliError::Exists(_) | CliError::Locked(_) => EXIT_OTHER,
        }
    }
}

fn core_exit_code(e: &lcl_core::Error) -> i32 {
    match e {
        lcl_core::Error::Config(_) => EXIT_CONFIG,
        lcl_core::Error::Missing { .. } => EXIT_DEPENDENCY,
        lcl_core::Error::Numerical(_) => EXIT_NUMERICAL,
        _ => EXIT_OTHER,
    }
}

/// Process exit code for an error: the first classified cause wins.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CliError>() {
            return e.exit_code();
        }
        if let Some(e) = cause.downcast_ref::<lcl_core::Error>() {
            return core_exit_code(e);
        }
        if cause.downcast_ref::<toml::de::Error>().is_some() {
            return EXIT_CONFIG;
        }
    }
    EXIT_OTHER
}
