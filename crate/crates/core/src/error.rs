use thiserror::Error;

/// Errors raised by the forecasting and analytics kernels.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum CoreError {
    #[error("insufficient history: need {needed} periods, have {available}")]
    InsufficientHistory { needed: usize, available: usize },
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("all-zero series: {0}")]
    AllZero(&'static str),
    #[error("infeasible plan: {0}")]
    Infeasible(String),
    #[error("missing forecast for model {0}")]
    MissingMember(String),
    #[error("no records for segment {segment} at horizon {horizon}")]
    NoRecords { segment: String, horizon: u32 },
    #[error("invalid period {year}-{month:02}")]
    InvalidPeriod { year: i32, month: u32 },
}

pub type Result<T> = std::result::Result<T, CoreError>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> CoreError {
    CoreError::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
