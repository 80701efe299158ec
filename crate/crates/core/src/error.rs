use thiserror::Error;

/// Errors surfaced by the simulator, encoders, agents and training loops.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },
    #[error("index {index} out of range (limit {limit})")]
    OutOfRange { index: usize, limit: usize },
    #[error("goal unreachable: {0}")]
    Unreachable(String),
    #[error("episode already terminated")]
    EpisodeTerminated,
    #[error("action {0} is not valid for this task")]
    InvalidAction(String),
    #[error("scene mismatch: {0}")]
    SceneMismatch(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(std::path::PathBuf),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
