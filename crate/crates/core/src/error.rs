use thiserror::Error;

/// Errors produced by the core library.
#[derive(Debug, Error)]
pub enum Error {
    /// Two adjacent layers (or a layer and a declared shape) do not compose.
    #[error("shape mismatch between {upstream} and {downstream}: {detail}")]
    ShapeMismatch {
        upstream: String,
        downstream: String,
        detail: String,
    },

    #[error("invalid tap index {index}: {reason}")]
    InvalidTap { index: usize, reason: String },

    #[error("invalid layer spec `{0}`")]
    LayerSyntax(String),

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("input contains non-finite values ({0})")]
    NonFinite(&'static str),

    /// The optimized objective became NaN or infinite.
    #[error("divergence at epoch {epoch}, batch {batch}: {detail}")]
    Divergence {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("malformed data: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
