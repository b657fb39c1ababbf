use thiserror::Error;

/// Errors raised anywhere in the crate.
#[derive(Debug, Error)]
pub enum GsdError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate angle: relaxation angle is zero, ratio form divides by sin(0)")]
    DegenerateAngle,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate norm statistics: mu ({mu}) - sigma ({sigma}) must be positive")]
    DegenerateStatistics { mu: f64, sigma: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("undefined correlation: {0} series is constant")]
    UndefinedCorrelation(&'static str),

    #[error("divergence: {0}")]
    Divergence(String),

    #[error("magic mismatch: expected {expected:?}, found {found:?}")]
    MagicMismatch { expected: String, found: String },

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, GsdError>;

impl GsdError {
    pub(crate) fn parse(offset: u64, message: impl Into<String>) -> Self {
        GsdError::Parse {
            offset,
            message: message.into(),
        }
    }
}
