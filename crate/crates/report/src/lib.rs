//! Pipeline orchestration over the artifact store and the report loop:
//! normalize a request into a [`JobSpec`], execute it into a
//! [`Reflection`], validate the contract rules, then assemble a
//! [`ReportArtifact`] with role-specific narrative.

pub mod assemble;
pub mod config;
pub mod execute;
pub mod job;
pub mod narrative;
pub mod pipeline;
pub mod reflection;
pub mod validate;

pub use assemble::{assemble_report, persist_report, ReportArtifact, Section};
pub use config::ForecastConfig;
pub use execute::execute_jobspec;
pub use job::{normalize_request, JobSpec, ReportFamily, Role};
pub use narrative::{HttpProvider, NarrativeProvider, TemplateProvider};
pub use pipeline::{run_backtest_stage, run_forecast, RunSummary};
pub use reflection::{Reflection, Violation, ViolationKind};
pub use validate::validate_contract;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    /// A request or configuration value is out of range; `name` is the
    /// parameter as the caller spelled it.
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: String, reason: String },
    #[error("missing {0}")]
    MissingArtifact(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error(transparent)]
    Store(sparecast_store::StoreError),
    #[error(transparent)]
    Core(#[from] sparecast_core::CoreError),
    #[error("corrupt artifact: {0}")]
    Corrupt(String),
}

impl From<sparecast_store::StoreError> for ReportError {
    fn from(e: sparecast_store::StoreError) -> Self {
        match e {
            sparecast_store::StoreError::NotFound(what) => ReportError::NotFound(what),
            other => ReportError::Store(other),
        }
    }
}

pub type Result<T> = std::result::Result<T, ReportError>;

pub(crate) fn invalid(name: &str, reason: impl Into<String>) -> ReportError {
    ReportError::InvalidParameter { name: name.to_string(), reason: reason.into() }
}
