use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Input,
    Validation,
    Degenerate,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Input => 2,
            ErrorCategory::Validation => 3,
            ErrorCategory::Degenerate => 4,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("inconsistent outcome table: {0}")]
    InvalidTable(String),

    #[error("threshold undefined: recovery and disruption rates are both zero")]
    UndefinedThreshold,

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("seeding: {0}")]
    Seeding(String),

    #[error("pairing: {0}")]
    Pairing(String),

    #[error("pilot needs {requested} matched tasks but only {available} are available")]
    InsufficientPilot { requested: usize, available: usize },

    #[error("config: {0}")]
    Config(String),

    #[error("episode log line {line}: {reason}")]
    Log { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::EmptyInput(_)
            | Error::Io(_)
            | Error::Log { .. }
            | Error::Config(_)
            | Error::Pairing(_)
            | Error::InsufficientPilot { .. } => ErrorCategory::Input,
            Error::InvalidParameter { .. } | Error::InvalidTable(_) | Error::LengthMismatch(_) | Error::Seeding(_) => {
                ErrorCategory::Validation
            }
            Error::UndefinedThreshold | Error::DegenerateFit(_) | Error::UndefinedMetric(_) => {
                ErrorCategory::Degenerate
            }
        }
    }
}

pub(crate) fn check_unit(name: &str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::param(name, format!("must lie in [0, 1], got {value}")))
    }
}
