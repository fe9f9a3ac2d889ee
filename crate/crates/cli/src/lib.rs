//! Command implementations behind the `cb` binary.

pub mod compare;
pub mod config;
pub mod inspect;
pub mod manifest;
pub mod pipeline;

use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Stage(String),
    #[error("run directory {0} is locked by another pipeline process")]
    Locked(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> CliError {
        CliError::Stage(format!("{}: {e}", path.display()))
    }

    /// Message without the variant prefix.
    pub fn message(&self) -> String {
        match self {
            CliError::Config(m) | CliError::Stage(m) => m.clone(),
            CliError::Locked(_) => self.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Stage(_) | CliError::Locked(_) => 3,
        }
    }
}

impl From<clutterbridge::CoreError> for CliError {
    fn from(e: clutterbridge::CoreError) -> Self {
        CliError::Stage(e.to_string())
    }
}
