use thiserror::Error;

/// Errors produced anywhere in the engine.
///
/// Every variant maps onto one coarse [`ErrorCategory`] so the command line
/// front end can pick an exit status without string matching.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),
    #[error("degenerate task: {0}")]
    DegenerateTask(String),
    #[error("training failure: {0}")]
    Training(String),
    #[error("search space too large: {0}")]
    Guard(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Training,
    Internal,
}

impl ErrorCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Config => "config",
            ErrorCategory::Data => "data",
            ErrorCategory::Training => "training",
            ErrorCategory::Internal => "internal",
        }
    }
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) | Error::Guard(_) => ErrorCategory::Config,
            Error::Data(_) | Error::Validation(_) | Error::DegenerateTask(_) | Error::Io(_) => {
                ErrorCategory::Data
            }
            Error::Training(_) => ErrorCategory::Training,
            Error::Dimension(_) | Error::DegenerateBatch(_) => ErrorCategory::Internal,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! bail {
    ($kind:ident, $($arg:tt)*) => {
        return Err($crate::error::Error::$kind(format!($($arg)*)))
    };
}
pub(crate) use bail;
