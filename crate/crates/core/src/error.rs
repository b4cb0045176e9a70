use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },

    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },

    #[error("function `{name}` takes {expected} argument(s), got {found} (byte {offset})")]
    Arity {
        name: String,
        expected: usize,
        found: usize,
        offset: usize,
    },

    #[error("evaluation error: {0}")]
    Domain(String),

    #[error("invalid equation: {0}")]
    InvalidSpec(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("tree enumeration capped at {cap} nodes, {requested} requested")]
    TreeCap { requested: usize, cap: usize },

    #[error("malformed tree string at byte {offset}: {message}")]
    TreeSyntax { offset: usize, message: String },

    #[error("circulant embedding not positive semidefinite: eigenvalue {index} = {value:e}")]
    NotPsd { index: usize, value: f64 },

    #[error("solution diverged at step {step} (t = {time})")]
    Diverged { step: usize, time: f64 },

    #[error("{failed} of {total} Monte Carlo paths failed, above the 0.1% budget")]
    TooManyFailedPaths { failed: usize, total: usize },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
