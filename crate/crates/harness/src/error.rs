use shampoo_kron::Error as CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Validation(String),
    #[error("numerical failure: {0}")]
    Numerical(CoreError),
    #[error("{0}")]
    Io(String),
    #[error("self-test failed: {0}")]
    SelfTest(String),
}

impl HarnessError {
    /// Process exit code: 1 validation or I/O, 2 self-test, 3 numerical.
    pub fn exit_code(&self) -> u8 {
        match self {
            HarnessError::Validation(_) | HarnessError::Io(_) => 1,
            HarnessError::SelfTest(_) => 2,
            HarnessError::Numerical(_) => 3,
        }
    }
}

impl From<CoreError> for HarnessError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::InvalidArgument(_)
            | CoreError::EnumerationLimit(_)
            | CoreError::KfacUnavailable(_)
            | CoreError::BadMagic { .. }
            | CoreError::Truncated { .. }
            | CoreError::CountMismatch { .. }
            | CoreError::EmptyResult => HarnessError::Validation(e.to_string()),
            _ => HarnessError::Numerical(e),
        }
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}
