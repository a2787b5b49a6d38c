#![allow(dead_code)]

use serde_json::{json, Value};
use sparecast_core::fixture::{demo_dataset, part_id, DEMO_SEED};
use sparecast_report::{normalize_request, run_backtest_stage, ForecastConfig, JobSpec};
use sparecast_store::ingest::{demand_csv, exogenous_csv, history_csv};
use sparecast_store::ArtifactStore;
use std::path::Path;

/// Two countries and twelve parts of the demo fixture, backtested.
pub fn small_store(dir: &Path, with_history: bool) -> (ArtifactStore, String) {
    let d = demo_dataset(DEMO_SEED);
    let parts: Vec<String> = (0..12).map(part_id).collect();
    let keep = |c: &str, p: &str| (c == "DE" || c == "FR") && parts.iter().any(|x| x == p);
    let series = d.series.into_iter().filter(|(k, _)| keep(&k.country, &k.part)).collect();
    let exog = d.exog.into_iter().filter(|(c, _)| c == "DE" || c == "FR").collect();
    let history: Vec<_> = d.forecast_history.into_iter().filter(|h| keep(&h.key.country, &h.key.part)).collect();
    let store = ArtifactStore::open(dir).unwrap();
    let hist = history_csv(&history);
    let v = store
        .import_dataset(
            demand_csv(&series).as_bytes(),
            exogenous_csv(&exog).as_bytes(),
            with_history.then_some(hist.as_bytes()),
        )
        .unwrap();
    run_backtest_stage(&store, &v.dataset_id, &small_config()).unwrap();
    (store, v.dataset_id)
}

pub fn small_config() -> ForecastConfig {
    ForecastConfig { clusters: 3, ..ForecastConfig::default() }
}

pub fn job(store: &ArtifactStore, params: Value) -> JobSpec {
    let Value::Object(m) = params else { panic!("object") };
    normalize_request(&m).unwrap().resolve(store).unwrap()
}

pub fn scorecard_job(store: &ArtifactStore) -> JobSpec {
    job(store, json!({"family": "scorecard", "months": 6}))
}
