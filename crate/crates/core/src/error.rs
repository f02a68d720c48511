use thiserror::Error;

pub type Result<T> = std::result::Result<T, HbstError>;

#[derive(Debug, Error)]
pub enum HbstError {
    /// Caller violated an operation precondition (width mismatch, bad parameters, ...).
    #[error("usage error: {0}")]
    Usage(String),
    /// A file or byte stream does not follow its documented layout.
    #[error("format error: {0}")]
    Format(String),
    /// Two results that must agree do not (e.g. a tree result that is not a subset of the oracle).
    #[error("consistency error: {0}")]
    Consistency(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl HbstError {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        HbstError::Usage(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        HbstError::Format(msg.into())
    }

    /// True for errors caused by bad input data rather than bad invocation.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, HbstError::Usage(_))
    }
}
