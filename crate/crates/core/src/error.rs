use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the detection pipeline.
#[derive(Debug, Error)]
pub enum McdError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("unsupported channel count {0} (expected 1 or 3)")]
    UnsupportedChannels(usize),

    #[error("no anterior segment found")]
    NoAnteriorSegment,

    #[error("prompts outside dark region")]
    PromptsOutsideDarkRegion,

    #[error("degenerate histogram: {0}")]
    DegenerateHistogram(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("malformed {what} at {location}: {detail}")]
    Format {
        what: &'static str,
        location: String,
        detail: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {detail}")]
    Image { path: PathBuf, detail: String },
}

/// Coarse classification used for process exit codes and FFI status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Caller supplied something structurally wrong.
    Usage,
    /// Missing or ill-formed input files.
    Data,
    /// The computation itself failed (degenerate inputs, divergence).
    Runtime,
}

impl McdError {
    pub fn class(&self) -> ErrorClass {
        match self {
            McdError::InvalidArgument(_) => ErrorClass::Usage,
            McdError::Io { .. }
            | McdError::Image { .. }
            | McdError::Format { .. }
            | McdError::DimensionMismatch { .. }
            | McdError::UnsupportedChannels(_) => ErrorClass::Data,
            McdError::NoAnteriorSegment
            | McdError::PromptsOutsideDarkRegion
            | McdError::DegenerateHistogram(_)
            | McdError::NonFinite(_)
            | McdError::Divergence { .. }
            | McdError::Infeasible(_) => ErrorClass::Runtime,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        McdError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, location: impl Into<String>, detail: impl Into<String>) -> Self {
        McdError::Format {
            what,
            location: location.into(),
            detail: detail.into(),
        }
    }
}

pub type Result<T, E = McdError> = std::result::Result<T, E>;
