use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("atom vanished: shift {shift} moves the whole support outside the band range")]
    AtomVanished { shift: f64 },
    #[error("degenerate field: all pooled statistics are identical")]
    DegenerateField,
    #[error("degenerate band {band}: zero median absolute deviation")]
    DegenerateBand { band: usize },
    #[error("correlation matrix is not positive semidefinite")]
    NotPsd,
    #[error("model assumption violated: {0}")]
    AssumptionViolated(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 for bad input, 3 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::DegenerateField
            | Error::DegenerateBand { .. }
            | Error::NotPsd
            | Error::AssumptionViolated(_)
            | Error::Numeric(_) => 3,
            _ => 2,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
