//! Dataset ingestion and the on-disk artifact store.
//!
//! Layout under the store root:
//!
//! ```text
//! datasets/<dataset_id>/{demand.csv, exogenous.csv, history.csv, dataset.json}
//! current                      id of the most recently imported dataset
//! runs/<run_id>/{record.json, payload.json}
//! latest/<dataset_id>/<kind>   id of the newest run of that kind
//! ```
//!
//! Run directories are staged under `tmp/` and renamed into place, so a
//! reader sees either the whole run or nothing.

pub mod hash;
pub mod ingest;
pub mod store;

pub use hash::{canonicalize, sha256_hex};
pub use ingest::{
    load_demand_csv, load_exogenous_csv, load_history_csv, parse_demand, parse_exogenous, parse_history,
    DatasetVersion, DemandLoad, ExogLoad, HistoryLoad,
};
pub use store::{config_hash, run_id_for, ArtifactKind, ArtifactStore, Dataset, RunRecord};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("line {line}: malformed row: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: duplicate observation for {what}")]
    Duplicate { line: usize, what: String },
    #[error("line {line}: negative value in {field}")]
    Negative { line: usize, field: String },
    #[error("header mismatch: expected {expected:?}, found {found:?}")]
    Header { expected: String, found: String },
    #[error("not found: {0}")]
    NotFound(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("storage failure: {0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] sparecast_core::CoreError),
}

impl From<std::io::Error> for StoreError {
    fn from(e: std::io::Error) -> Self {
        StoreError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for StoreError {
    fn from(e: serde_json::Error) -> Self {
        StoreError::Io(format!("json: {e}"))
    }
}

pub type Result<T> = std::result::Result<T, StoreError>;
