use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Malformed file contents. `field` names the offending header field or check.
    #[error("format error in {field}: {reason}")]
    Format { field: &'static str, reason: String },

    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest error: {0}")]
    Manifest(String),

    /// Input carries no usable signal (constant image, empty mask, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("frame {0} is a template frame and already carries a manual label")]
    InvalidTarget(usize),

    #[error("vendor `{0}` not present in dataset")]
    MissingVendor(String),

    #[error("propagation failed for frames {}", .0.iter().map(|(i, e)| format!("{i} ({e})")).collect::<Vec<_>>().join(", "))]
    Frames(Vec<(usize, Error)>),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn format(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the data rather than by files or arguments.
    pub fn is_degenerate(&self) -> bool {
        match self {
            Error::Degenerate(_) => true,
            Error::Frames(errs) => errs.iter().all(|(_, e)| e.is_degenerate()),
            _ => false,
        }
    }
}
