use thiserror::Error;

/// Errors surfaced by the engine and its agents.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum AoiError {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("duplicate id: {0}")]
    Duplicate(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unsafe script rejected: {0}")]
    UnsafeScript(String),

    #[error("empty script: {0}")]
    EmptyScript(String),

    #[error("planning error: {0}")]
    Planning(String),

    #[error("decomposition error: {0}")]
    Decomposition(String),

    #[error("degenerate evidence: {0}")]
    DegenerateEvidence(String),

    #[error("environment unavailable: {0}")]
    Transport(String),

    #[error("scenario error: {0}")]
    Scenario(String),

    #[error("summarizer contract broken by {implementation}: {message}")]
    Summarizer {
        implementation: String,
        message: String,
    },

    #[error("fatal engine error: {0}")]
    Fatal(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for AoiError {
    fn from(err: std::io::Error) -> Self {
        AoiError::Io(err.to_string())
    }
}

impl From<serde_json::Error> for AoiError {
    fn from(err: serde_json::Error) -> Self {
        AoiError::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, AoiError>;
