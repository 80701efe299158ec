use std::path::PathBuf;

use thiserror::Error;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_MISSING: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing artifact {}: {hint}", path.display())]
    Missing { path: PathBuf, hint: String },
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Missing { .. } => EXIT_MISSING,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }

    pub fn missing(path: impl Into<PathBuf>, hint: impl Into<String>) -> Self {
        CliError::Missing { path: path.into(), hint: hint.into() }
    }
}

impl From<embnav::Error> for CliError {
    fn from(e: embnav::Error) -> Self {
        match e {
            embnav::Error::Config(m) => CliError::Config(m),
            embnav::Error::MissingArtifact(path) => {
                CliError::Missing { path, hint: "run the stage that produces it first".into() }
            }
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
