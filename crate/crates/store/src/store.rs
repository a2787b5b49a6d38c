use crate::hash::{canonicalize, sha256_hex};
use crate::ingest::{parse_demand, parse_exogenous, parse_history, DatasetVersion};
use crate::{Result, StoreError};
use serde::{Deserialize, Serialize};
use sparecast_core::fixture::HistoryRow;
use sparecast_core::{DemandSeries, ExogenousFrame, SeriesKey};
use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Forecasts,
    Residuals,
    Weights,
    ScorecardReport,
    TrendReport,
    MonthlyTrendReport,
}

impl ArtifactKind {
    pub const ALL: [ArtifactKind; 6] = [
        ArtifactKind::Forecasts,
        ArtifactKind::Residuals,
        ArtifactKind::Weights,
        ArtifactKind::ScorecardReport,
        ArtifactKind::TrendReport,
        ArtifactKind::MonthlyTrendReport,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ArtifactKind::Forecasts => "forecasts",
            ArtifactKind::Residuals => "residuals",
            ArtifactKind::Weights => "weights",
            ArtifactKind::ScorecardReport => "scorecard_report",
            ArtifactKind::TrendReport => "trend_report",
            ArtifactKind::MonthlyTrendReport => "monthly_trend_report",
        }
    }
}

impl fmt::Display for ArtifactKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArtifactKind {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| StoreError::Invalid(format!("unknown artifact kind {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub dataset_id: String,
    pub config_hash: String,
    pub kind: ArtifactKind,
    /// Relative to the store root.
    pub payload_path: String,
    /// sha256 of the payload bytes.
    pub content_hash: String,
    /// Runs whose payloads this one was computed from.
    pub inputs: Vec<String>,
}

/// sha256 over the JSON encoding of a configuration value. Struct fields
/// serialize in declaration order and maps are `BTreeMap`s, so the encoding
/// is canonical.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    sha256_hex(&serde_json::to_vec(config).expect("config serializes"))
}

pub fn run_id_for(dataset_id: &str, config_hash: &str, kind: ArtifactKind) -> String {
    let digest = sha256_hex(format!("{dataset_id}|{config_hash}|{kind}").as_bytes());
    format!("{}-{}", kind.as_str().replace('_', "-"), &digest[..24])
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 128 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub version: DatasetVersion,
    pub series: BTreeMap<SeriesKey, DemandSeries>,
    pub exog: BTreeMap<String, Vec<ExogenousFrame>>,
    pub history: Vec<HistoryRow>,
    pub defects: Vec<String>,
}

#[derive(Debug)]
pub struct ArtifactStore {
    root: PathBuf,
    writer: Mutex<()>,
}

impl ArtifactStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        for d in ["datasets", "runs", "latest", "tmp"] {
            fs::create_dir_all(root.join(d))?;
        }
        Ok(Self { root, writer: Mutex::new(()) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, ()> {
        self.writer.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn stage(&self) -> Result<tempfile::TempDir> {
        Ok(tempfile::Builder::new().prefix("stage-").tempdir_in(self.root.join("tmp"))?)
    }

    fn write_pointer(&self, path: &Path, value: &str) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut tmp = tempfile::NamedTempFile::new_in(self.root.join("tmp"))?;
        std::io::Write::write_all(&mut tmp, value.as_bytes())?;
        tmp.as_file().sync_all()?;
        tmp.persist(path).map_err(|e| StoreError::Io(e.to_string()))?;
        Ok(())
    }

    /// Imports canonicalized copies of the input tables. The dataset id is
    /// derived from their content, so importing the same files twice yields
    /// the same dataset.
    pub fn import_dataset(&self, demand: &[u8], exogenous: &[u8], history: Option<&[u8]>) -> Result<DatasetVersion> {
        let demand_load = parse_demand(demand)?;
        parse_exogenous(exogenous)?;
        if let Some(h) = history {
            parse_history(h)?;
        }
        let files: Vec<(&str, Vec<u8>)> = [("demand.csv", Some(demand)), ("exogenous.csv", Some(exogenous)), ("history.csv", history)]
            .into_iter()
            .filter_map(|(n, b)| b.map(|b| (n, canonicalize(b))))
            .collect();
        let mut joined = Vec::new();
        for (name, bytes) in &files {
            joined.extend_from_slice(name.as_bytes());
            joined.push(0);
            joined.extend_from_slice(sha256_hex(bytes).as_bytes());
            joined.push(b'\n');
        }
        let content_hash = sha256_hex(&joined);
        let version = DatasetVersion {
            dataset_id: format!("ds-{}", &content_hash[..16]),
            content_hash,
            loaded_at: demand_load.version.loaded_at.clone(),
            row_count: demand_load.version.row_count,
        };
        let _guard = self.lock();
        let target = self.root.join("datasets").join(&version.dataset_id);
        if !target.exists() {
            let stage = self.stage()?;
            for (name, bytes) in &files {
                fs::write(stage.path().join(name), bytes)?;
            }
            fs::write(stage.path().join("dataset.json"), serde_json::to_vec_pretty(&version)?)?;
            rename_into_place(stage, &target)?;
        }
        self.write_pointer(&self.root.join("current"), &version.dataset_id)?;
        self.dataset_version(&version.dataset_id)
    }

    pub fn current_dataset(&self) -> Result<String> {
        match fs::read_to_string(self.root.join("current")) {
            Ok(s) => Ok(s.trim().to_string()),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(StoreError::NotFound("no dataset imported".into())),
            Err(e) => Err(e.into()),
        }
    }

    fn dataset_dir(&self, dataset_id: &str) -> Result<PathBuf> {
        let dir = self.root.join("datasets").join(dataset_id);
        if !valid_id(dataset_id) || !dir.is_dir() {
            return Err(StoreError::NotFound(format!("dataset {dataset_id}")));
        }
        Ok(dir)
    }

    pub fn dataset_version(&self, dataset_id: &str) -> Result<DatasetVersion> {
        let dir = self.dataset_dir(dataset_id)?;
        Ok(serde_json::from_slice(&fs::read(dir.join("dataset.json"))?)?)
    }

    pub fn load_dataset(&self, dataset_id: &str) -> Result<Dataset> {
        let dir = self.dataset_dir(dataset_id)?;
        let version = self.dataset_version(dataset_id)?;
        let demand = parse_demand(&fs::read(dir.join("demand.csv"))?)?;
        let exog = parse_exogenous(&fs::read(dir.join("exogenous.csv"))?)?;
        let history_path = dir.join("history.csv");
        let history = if history_path.exists() { parse_history(&fs::read(history_path)?)?.rows } else { Vec::new() };
        let mut defects = demand.defects;
        defects.extend(exog.defects);
        Ok(Dataset { version, series: demand.series, exog: exog.frames, history, defects })
    }

    pub fn find_run(&self, dataset_id: &str, config_hash: &str, kind: ArtifactKind) -> Option<RunRecord> {
        self.record(&run_id_for(dataset_id, config_hash, kind)).ok()
    }

    /// Stores a run payload. Identical `(dataset_id, config_hash, kind)`
    /// returns the existing record without touching the stored bytes.
    pub fn persist_artifact(
        &self,
        dataset_id: &str,
        config_hash: &str,
        kind: ArtifactKind,
        inputs: Vec<String>,
        payload: &[u8],
    ) -> Result<RunRecord> {
        self.persist_with_attachments(dataset_id, config_hash, kind, inputs, payload, &[])
    }

    /// As [`Self::persist_artifact`], with named side files stored in the
    /// same atomic write.
    pub fn persist_with_attachments(
        &self,
        dataset_id: &str,
        config_hash: &str,
        kind: ArtifactKind,
        inputs: Vec<String>,
        payload: &[u8],
        attachments: &[(&str, &[u8])],
    ) -> Result<RunRecord> {
        if let Some((name, _)) = attachments.iter().find(|(n, _)| !valid_attachment(n)) {
            return Err(StoreError::Invalid(format!("attachment name {name:?}")));
        }
        if payload.is_empty() {
            return Err(StoreError::Invalid("empty payload".into()));
        }
        if !valid_id(dataset_id) || !valid_id(config_hash) {
            return Err(StoreError::Invalid("dataset_id and config_hash must be plain identifiers".into()));
        }
        let run_id = run_id_for(dataset_id, config_hash, kind);
        let _guard = self.lock();
        let target = self.root.join("runs").join(&run_id);
        let record = if target.exists() {
            self.record(&run_id)?
        } else {
            let record = RunRecord {
                run_id: run_id.clone(),
                dataset_id: dataset_id.to_string(),
                config_hash: config_hash.to_string(),
                kind,
                payload_path: format!("runs/{run_id}/payload.json"),
                content_hash: sha256_hex(payload),
                inputs,
            };
            let stage = self.stage()?;
            write_synced(&stage.path().join("payload.json"), payload)?;
            write_synced(&stage.path().join("record.json"), &serde_json::to_vec_pretty(&record)?)?;
            for (name, bytes) in attachments {
                write_synced(&stage.path().join(format!("attachment-{name}")), bytes)?;
            }
            rename_into_place(stage, &target)?;
            record
        };
        self.write_pointer(&self.root.join("latest").join(dataset_id).join(kind.as_str()), &run_id)?;
        Ok(record)
    }

    /// Points the `latest` pointer for the record's dataset and kind at it.
    pub fn mark_latest(&self, record: &RunRecord) -> Result<()> {
        let _guard = self.lock();
        self.write_pointer(&self.root.join("latest").join(&record.dataset_id).join(record.kind.as_str()), &record.run_id)
    }

    pub fn record(&self, run_id: &str) -> Result<RunRecord> {
        if !valid_id(run_id) {
            return Err(StoreError::NotFound(format!("run {run_id}")));
        }
        let path = self.root.join("runs").join(run_id).join("record.json");
        match fs::read(&path) {
            Ok(b) => Ok(serde_json::from_slice(&b)?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(StoreError::NotFound(format!("run {run_id}"))),
            Err(e) => Err(e.into()),
        }
    }

    pub fn fetch_artifact(&self, run_id: &str) -> Result<(RunRecord, Vec<u8>)> {
        let record = self.record(run_id)?;
        let payload = fs::read(self.root.join("runs").join(run_id).join("payload.json"))?;
        Ok((record, payload))
    }

    pub fn fetch_attachment(&self, run_id: &str, name: &str) -> Result<Vec<u8>> {
        self.record(run_id)?;
        let missing = || StoreError::NotFound(format!("attachment {name} of run {run_id}"));
        if !valid_attachment(name) {
            return Err(missing());
        }
        fs::read(self.root.join("runs").join(run_id).join(format!("attachment-{name}"))).map_err(|_| missing())
    }

    /// Newest run of `kind` persisted against `dataset_id`.
    pub fn latest(&self, dataset_id: &str, kind: ArtifactKind) -> Result<RunRecord> {
        let missing = || StoreError::NotFound(format!("{kind} run for dataset {dataset_id}"));
        if !valid_id(dataset_id) {
            return Err(missing());
        }
        let id = fs::read_to_string(self.root.join("latest").join(dataset_id).join(kind.as_str())).map_err(|_| missing())?;
        self.record(id.trim())
    }

    pub fn list_runs(&self) -> Result<Vec<RunRecord>> {
        let mut out = Vec::new();
        for entry in fs::read_dir(self.root.join("runs"))? {
            let name = entry?.file_name();
            if let Ok(r) = self.record(&name.to_string_lossy()) {
                out.push(r);
            }
        }
        out.sort_by(|a, b| a.run_id.cmp(&b.run_id));
        Ok(out)
    }
}

fn valid_attachment(name: &str) -> bool {
    valid_id(name.trim_end_matches(".json"))
}

fn write_synced(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    std::io::Write::write_all(&mut f, bytes)?;
    f.sync_all()?;
    Ok(())
}

fn rename_into_place(stage: tempfile::TempDir, target: &Path) -> Result<()> {
    let staged = stage.keep();
    match fs::rename(&staged, target) {
        Ok(()) => Ok(()),
        // Another writer got there first with the same content-derived id.
        Err(_) if target.exists() => {
            let _ = fs::remove_dir_all(&staged);
            Ok(())
        }
        Err(e) => {
            let _ = fs::remove_dir_all(&staged);
            Err(e.into())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_ids_are_deterministic_and_distinct() {
        let a = run_id_for("ds-1", "abc", ArtifactKind::Weights);
        assert_eq!(a, run_id_for("ds-1", "abc", ArtifactKind::Weights));
        assert_ne!(a, run_id_for("ds-2", "abc", ArtifactKind::Weights));
        assert_ne!(a, run_id_for("ds-1", "abc", ArtifactKind::Forecasts));
        assert!(a.starts_with("weights-"));
        assert!(valid_id(&a));
    }

    #[test]
    fn traversal_ids_rejected() {
        for id in ["../etc", "a/b", "", ".", "x\0"] {
            assert!(!valid_id(id), "{id:?}");
        }
    }

    #[test]
    fn kinds_round_trip() {
        for k in ArtifactKind::ALL {
            assert_eq!(k.as_str().parse::<ArtifactKind>().unwrap(), k);
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{}\"", k.as_str()));
        }
    }
}
