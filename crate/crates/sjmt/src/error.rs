use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes incompatible for an operation.
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// An argument outside the mathematical domain of an operation.
    #[error("domain error in {op}: {msg}")]
    Domain { op: &'static str, msg: String },

    /// Caller broke an API contract (documented precondition).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid configuration value.
    #[error("config error: {0}")]
    Config(String),

    /// Dataset-level problem (empty dataset, unknown name, ...).
    #[error("data error: {0}")]
    Data(String),

    /// A file could not be parsed; carries the location.
    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    /// Parsed fine but the contents contradict the manifest.
    #[error("validation error: {0}")]
    Validation(String),

    /// Training produced non-finite or runaway values.
    #[error("training diverged at step {step}: {reason}")]
    Divergence { step: usize, reason: String },

    /// Gradient checking detected a non-deterministic objective.
    #[error("non-deterministic objective: {0}")]
    Determinism(String),

    /// A stored artifact does not match what the caller expects.
    #[error("artifact mismatch: {0}")]
    ArtifactMismatch(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
