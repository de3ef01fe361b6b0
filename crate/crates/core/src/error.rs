use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("degenerate curve: {0}")]
    DegenerateCurve(String),

    #[error("{what} = {value} is out of range {range}")]
    OutOfRange {
        what: &'static str,
        value: f64,
        range: &'static str,
    },

    #[error("shape mismatch for {what}: expected {expected}, found {found}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("{what} too short: need at least {required} ticks, got {found}")]
    TooShort {
        what: &'static str,
        required: usize,
        found: usize,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("schema mismatch: expected `{expected}`, found `{found}`")]
    Schema { expected: String, found: String },

    #[error("version mismatch: expected `{expected}`, found `{found}`")]
    VersionMismatch { expected: String, found: String },

    #[error("checksum mismatch in {0}")]
    Checksum(String),

    #[error("malformed input at line {line}: {message}")]
    Malformed { line: usize, message: String },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }

    /// Short stable identifier, used by the CLI for machine-readable errors.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidParameter { .. } => "invalid_parameter",
            Error::DegenerateCurve(_) => "degenerate_curve",
            Error::OutOfRange { .. } => "out_of_range",
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::TooShort { .. } => "too_short",
            Error::Empty(_) => "empty",
            Error::Divergence { .. } => "divergence",
            Error::Schema { .. } => "schema",
            Error::VersionMismatch { .. } => "version_mismatch",
            Error::Checksum(_) => "checksum",
            Error::Malformed { .. } => "malformed",
            Error::Protocol(_) => "protocol",
            Error::File { .. } | Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
