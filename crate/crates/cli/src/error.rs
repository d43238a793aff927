use thiserror::Error;

/// CLI failures, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("numeric error: {0}")]
    Numeric(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) | CliError::Checkpoint(_) | CliError::Io(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Data(_) => "data",
            CliError::Checkpoint(_) => "checkpoint",
            CliError::Io(_) => "io",
            CliError::Numeric(_) => "numeric",
        }
    }
}

impl From<flint_core::Error> for CliError {
    fn from(e: flint_core::Error) -> Self {
        use flint_core::Error as E;
        match e {
            E::NonFinite(_) | E::Divergence { .. } => CliError::Numeric(e.to_string()),
            E::Data(_) | E::Empty(_) => CliError::Data(e.to_string()),
            E::Io(io) => CliError::Io(io),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<image::ImageError> for CliError {
    fn from(e: image::ImageError) -> Self {
        CliError::Data(format!("image: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(format!("json: {e}"))
    }
}
