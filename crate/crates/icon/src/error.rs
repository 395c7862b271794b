//! Crate-wide error type.

/// Errors surfaced by any module in this crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Array shapes do not line up; names the operation and the offending operand.
    #[error("{op}: dimension mismatch: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// Invalid configuration value or combination.
    #[error("config error: {0}")]
    Config(String),

    /// Class label outside `[0, num_classes)`.
    #[error("label {index} out of range for {classes} classes")]
    LabelOutOfRange { index: usize, classes: usize },

    /// Evaluation preconditions violated (empty input, missing class, ...).
    #[error("evaluation error: {0}")]
    Evaluation(String),

    /// A loss term evaluated to NaN or infinity; names the term.
    #[error("non-finite value in loss term '{term}'")]
    NonFinite { term: &'static str },

    /// Malformed input file; reports the 1-based line number.
    #[error("parse error at {path}:{line}: {detail}")]
    Parse {
        path: String,
        line: usize,
        detail: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Checkpoint could not be read or does not match the expected format.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
