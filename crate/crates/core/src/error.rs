use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid manifest:\n{}", .0.iter().map(|v| format!("  {v}")).collect::<Vec<_>>().join("\n"))]
    InvalidManifest(Vec<crate::manifest::Violation>),

    #[error("invalid payoff matrix `{id}`: {rule}")]
    MatrixValidation { id: String, rule: String },

    #[error("scoring error in conversation `{conversation_id}`: {message}")]
    Scoring {
        conversation_id: String,
        message: String,
    },

    #[error("aggregation error: {0}")]
    Aggregation(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error(transparent)]
    Agent(#[from] AgentError),

    #[error("run not found: {0}")]
    RunNotFound(PathBuf),

    #[error("run is locked by another process ({0})")]
    RunLocked(PathBuf),

    #[error("{path}: line {line}: {message}")]
    CorruptRecord {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("analysis error: {0}")]
    Analysis(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}

/// Failure talking to an agent, after any retries.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("agent `{agent}` failed after {attempts} attempt(s){}: {message}", status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
pub struct AgentError {
    pub agent: String,
    pub status: Option<u16>,
    pub attempts: u32,
    pub message: String,
}
