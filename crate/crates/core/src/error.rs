use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the codec can report, grouped by who is at fault.
#[derive(Debug, Error)]
pub enum Error {
    /// A numeric parameter is outside its legal domain (q <= 0, L < 1, ...).
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Input data is unusable (NaN coordinates, out-of-range values).
    #[error("invalid input: {0}")]
    Input(String),

    /// The caller broke an API precondition (empty set, length mismatch).
    #[error("usage error: {0}")]
    Usage(String),

    /// A file or packet does not follow its declared format.
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: usize, msg: String },

    /// A declared length runs past the end of the available bytes.
    #[error("truncated input at byte {offset}: need {needed} bytes, {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },

    /// An entropy-coded or packed substream cannot be decoded.
    #[error("corrupt stream: {0}")]
    CorruptStream(String),

    /// Decoding finished but the result is inconsistent with what was sent.
    #[error("integrity failure: {0}")]
    Integrity(String),

    /// A structural invariant does not hold (occupancy code 0, unsorted level).
    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures that mean "the bytes decoded, but not to what the
    /// encoder sent": model mismatch, bit flips inside payloads, and so on.
    pub fn is_integrity(&self) -> bool {
        matches!(
            self,
            Error::Integrity(_) | Error::CorruptStream(_) | Error::Invariant(_)
        )
    }

    pub(crate) fn into_integrity(self, stage: &str) -> Error {
        match self {
            Error::Integrity(m) | Error::CorruptStream(m) | Error::Invariant(m) => {
                Error::Integrity(format!("{stage}: {m}"))
            }
            other => other,
        }
    }
}
