use alloc::string::String;

/// Errors produced by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("event out of bounds: {0}")]
    OutOfBounds(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
    #[error("non-finite activation in layer `{0}`")]
    NonFinite(String),
    #[error("stale activation tape: {0}")]
    StaleTape(String),
}

impl Error {
    /// Short machine-readable code for the variant.
    pub fn code(&self) -> &'static str {
        match self {
            Error::OutOfBounds(_) => "E_BOUNDS",
            Error::Shape(_) => "E_SHAPE",
            Error::InvalidArgument(_) => "E_ARG",
            Error::Degenerate(_) => "E_DEGENERATE",
            Error::NonFinite(_) => "E_NONFINITE",
            Error::StaleTape(_) => "E_TAPE",
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;
