use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {op}: expected {expected}, got {found}")]
    DimensionMismatch {
        op: &'static str,
        expected: String,
        found: String,
    },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("matrix is not symmetric (relative asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix has eigenvalue {eigenvalue:e} below tolerance {tolerance:e}")]
    NegativeSpectrum { eigenvalue: f64, tolerance: f64 },

    #[error("singular matrix: eigenvalue {0:e} cannot be raised to a negative power")]
    Singular(f64),

    #[error("{algorithm} did not converge after {sweeps} sweeps")]
    NoConvergence {
        algorithm: &'static str,
        sweeps: usize,
    },

    #[error("degenerate input: {0}")]
    Degenerate(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("enumeration limit exceeded: {0}")]
    EnumerationLimit(String),

    #[error("probe layer has no Kronecker factorization: {0}")]
    KfacUnavailable(String),

    #[error("bad magic number: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },

    #[error("truncated {what}: needed {needed} bytes, found {found}")]
    Truncated {
        what: &'static str,
        needed: usize,
        found: usize,
    },

    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("class subsampling produced an empty dataset")]
    EmptyResult,
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_mismatch(op: &'static str, expected: impl ToString, found: impl ToString) -> Error {
    Error::DimensionMismatch {
        op,
        expected: expected.to_string(),
        found: found.to_string(),
    }
}
