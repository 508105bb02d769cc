//! Error type shared by all modules.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument violates an operation's precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A mel filter ended up with no FFT bin inside its support.
    #[error("degenerate filterbank: filter {index} has no FFT bin support")]
    DegenerateFilterbank { index: usize },

    /// The amplitude calibration reference tone produced an unusable estimate.
    #[error("calibration failure: {0}")]
    CalibrationFailure(String),

    /// The candidate signal carries no energy to normalize against.
    #[error("degenerate candidate: {0}")]
    DegenerateCandidate(String),

    /// A numeric procedure failed beyond repair (singular system, non-finite result).
    #[error("numeric failure: {0}")]
    NumericFailure(String),

    /// A file uses a codec or layout this tool does not handle.
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    /// Malformed input data; `offset` is the byte position of the problem.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn parse(offset: u64, msg: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            message: msg.into(),
        }
    }
}
