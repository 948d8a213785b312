//! Error type shared across the crate.

use std::fmt;

/// Errors produced by geometry, trajectory, layer and I/O operations.
#[derive(Debug)]
pub enum Error {
    /// A dimension precondition failed (joint count, vector length, shape mismatch).
    InvalidDimension(String),
    /// A configuration collapsed to the origin after centering; no pre-shape exists.
    ZeroNorm { context: String },
    /// The logarithmic map or parallel transport is undefined for antipodal points.
    Antipodal { context: String },
    /// A vector violated the tangency constraint at its base point.
    NotTangent { deviation: f64 },
    /// A sequence is too short for the requested operation.
    TooShort { frames: usize, minimum: usize },
    /// A class label lies outside the configured range.
    LabelOutOfRange { label: usize, classes: usize },
    /// A dataset was empty where at least one sequence is required.
    EmptyDataset,
    /// Underlying file I/O failure.
    Io(std::io::Error),
    /// A file did not parse as the expected format.
    Format(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidDimension(msg) => write!(f, "invalid dimension: {msg}"),
            Error::ZeroNorm { context } => {
                write!(f, "degenerate configuration with zero norm ({context})")
            }
            Error::Antipodal { context } => {
                write!(f, "operation undefined for antipodal pre-shapes ({context})")
            }
            Error::NotTangent { deviation } => write!(
                f,
                "vector is not tangent at its base point (|<v, base>| = {deviation:.3e})"
            ),
            Error::TooShort { frames, minimum } => {
                write!(f, "sequence has {frames} frames, need at least {minimum}")
            }
            Error::LabelOutOfRange { label, classes } => {
                write!(f, "label {label} out of range for {classes} classes")
            }
            Error::EmptyDataset => write!(f, "dataset contains no sequences"),
            Error::Io(e) => write!(f, "i/o error: {e}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
