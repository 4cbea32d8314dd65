use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaqError {
    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("row {row} has zero range; enable the epsilon floor to allocate it")]
    DegenerateRow { row: usize },

    #[error("invalid quantizer range [{lo}, {hi}]")]
    InvalidRange { lo: f64, hi: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {0}")]
    BadVersion(u32),

    #[error("truncated payload: need {needed} bytes, have {available}")]
    TruncatedPayload { needed: usize, available: usize },

    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),

    #[error("code {code} at row {row}, column {col} does not fit in {bits} bits")]
    CodeOverflow { row: usize, col: usize, code: u32, bits: u8 },

    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for BaqError {
    fn from(e: std::io::Error) -> Self {
        BaqError::Io(e.to_string())
    }
}

impl From<csv::Error> for BaqError {
    fn from(e: csv::Error) -> Self {
        BaqError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, BaqError>;
