use thiserror::Error;

/// Errors raised by the kernels, filters, policies and data loaders.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    /// The innovation covariance has a zero pivot (no information and no noise).
    #[error("singular innovation covariance (zero Jacobian with zero observation noise?)")]
    SingularInnovation,

    #[error("unsupported dimension {dim} (maximum {max})")]
    UnsupportedDimension { dim: usize, max: usize },

    /// Malformed data file; `field` names the offending header field or section.
    #[error("format error in {field}: {message}")]
    Format { field: String, message: String },

    #[error("end of stream")]
    EndOfStream,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
