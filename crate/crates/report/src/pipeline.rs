//! Segmentation, backtest, weight learning and forecasting against the
//! artifact store. Each stage is keyed by `(dataset, config hash, kind)`,
//! so repeating a run returns the stored artifacts.

use crate::config::ForecastConfig;
use crate::{ReportError, Result};
use serde::{Deserialize, Serialize};
use sparecast_core::ensemble::{
    blend_values, calibrate_intervals, combine_available, combined_residuals, learn_all_weights, make_plan,
    run_backtest_audited, weight_segments, weight_table, BacktestRecord, BacktestResult, EnsembleWeights,
    IntervalCalibration, RollingOriginPlan, SegmentId, SkipRecord, MIN_KEY_RECORDS,
};
use sparecast_core::forecast::{run_model, to_forecast_set, RegistryEntry, TrainingData};
use sparecast_core::scorecard::EvalRecord;
use sparecast_core::segmentation::{segment_dataset, SegmentAssignment};
use sparecast_core::{DemandSeries, ForecastSet, Horizon, PeriodId, SeriesKey};
use sparecast_store::{ArtifactKind, ArtifactStore, Dataset, RunRecord};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageAudit {
    pub fits_checked: usize,
    /// Fits that consumed an observation dated after their origin.
    pub violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestPayload {
    pub config: ForecastConfig,
    pub plan: RollingOriginPlan,
    pub leakage_audit: LeakageAudit,
    pub records: Vec<BacktestRecord>,
    pub skips: Vec<SkipRecord>,
}

impl BacktestPayload {
    pub fn result(&self) -> BacktestResult {
        BacktestResult { records: self.records.clone(), skips: self.skips.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsPayload {
    pub config_hash: String,
    pub assignments: Vec<SegmentAssignment>,
    /// Series key to weight segment.
    pub segment_of: BTreeMap<String, SegmentId>,
    /// Segment, then horizon.
    pub weights: BTreeMap<String, BTreeMap<u32, EnsembleWeights>>,
    pub intervals: BTreeMap<String, BTreeMap<u32, IntervalCalibration>>,
}

impl WeightsPayload {
    pub fn segment_map(&self) -> BTreeMap<SeriesKey, SegmentId> {
        self.assignments
            .iter()
            .filter_map(|a| self.segment_of.get(&a.key.to_string()).map(|s| (a.key.clone(), s.clone())))
            .collect()
    }

    pub fn weights_for(&self, segment: &SegmentId) -> Vec<EnsembleWeights> {
        self.weights.get(&segment.to_string()).map(|m| m.values().cloned().collect()).unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyForecast {
    pub segment: SegmentId,
    pub forecast: ForecastSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedKey {
    pub key: SeriesKey,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastsPayload {
    pub config_hash: String,
    pub origin: PeriodId,
    pub registry: Vec<RegistryEntry>,
    pub forecasts: Vec<KeyForecast>,
    pub skipped: Vec<SkippedKey>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub dataset_id: String,
    pub config_hash: String,
    pub backtest_run: String,
    pub weights_run: String,
    pub forecasts_run: Option<String>,
}

/// First period and number of months spanned by the dataset.
pub fn span(series: &BTreeMap<SeriesKey, DemandSeries>) -> Option<(PeriodId, usize)> {
    let first = series.values().map(|s| s.first_period()).min()?;
    let last = series.values().map(|s| s.last_period()).max()?;
    Some((first, first.months_until(last) as usize + 1))
}

pub fn segment(dataset: &Dataset, config: &ForecastConfig) -> Result<BTreeMap<SeriesKey, SegmentAssignment>> {
    if config.clusters > dataset.series.len() {
        return Err(crate::invalid("clusters", format!("{} clusters for {} series", config.clusters, dataset.series.len())));
    }
    Ok(segment_dataset(&dataset.series, &dataset.exog, &config.segmentation())?)
}

pub fn backtest(
    dataset: &Dataset,
    config: &ForecastConfig,
    segments: &BTreeMap<SeriesKey, SegmentAssignment>,
) -> Result<BacktestPayload> {
    let (first, len) = span(&dataset.series).ok_or_else(|| ReportError::MissingArtifact("demand series".into()))?;
    let plan = make_plan(first, len, config.n_origins, config.gap, &config.horizons(), config.min_train_length)
        .map_err(|e| crate::invalid("n_origins", e.to_string()))?;
    let fits = AtomicUsize::new(0);
    let leaks = AtomicUsize::new(0);
    let audit = |_: &str, origin: PeriodId, _: &SeriesKey, seen: PeriodId| {
        fits.fetch_add(1, Ordering::Relaxed);
        if seen > origin {
            leaks.fetch_add(1, Ordering::Relaxed);
        }
    };
    let result = run_backtest_audited(&dataset.series, &dataset.exog, &plan, &config.specs(), segments, Some(&audit))?;
    Ok(BacktestPayload {
        config: config.clone(),
        plan,
        leakage_audit: LeakageAudit { fits_checked: fits.into_inner(), violations: leaks.into_inner() },
        records: result.records,
        skips: result.skips,
    })
}

pub fn learn(
    config: &ForecastConfig,
    segments: &BTreeMap<SeriesKey, SegmentAssignment>,
    backtest: &BacktestPayload,
) -> Result<WeightsPayload> {
    let result = backtest.result();
    let segment_of = weight_segments(segments, &result, MIN_KEY_RECORDS);
    let table = weight_table(learn_all_weights(&result, &segment_of, &config.horizons()));
    let residuals = combined_residuals(&result, &table, &segment_of);
    let calibrations = calibrate_intervals(&residuals, config.interval_level)?;
    let mut weights: BTreeMap<String, BTreeMap<u32, EnsembleWeights>> = BTreeMap::new();
    for ((s, h), w) in table {
        weights.entry(s.to_string()).or_default().insert(h.get(), w);
    }
    let mut intervals: BTreeMap<String, BTreeMap<u32, IntervalCalibration>> = BTreeMap::new();
    for c in calibrations {
        intervals.entry(c.segment.to_string()).or_default().insert(c.horizon.get(), c);
    }
    Ok(WeightsPayload {
        config_hash: config.hash(),
        assignments: segments.values().cloned().collect(),
        segment_of: segment_of.into_iter().map(|(k, s)| (k.to_string(), s)).collect(),
        weights,
        intervals,
    })
}

/// Refits every model on the full history and combines the members with
/// each series' segment weights and interval offsets.
pub fn forecast(dataset: &Dataset, config: &ForecastConfig, weights: &WeightsPayload) -> Result<ForecastsPayload> {
    let (first, len) = span(&dataset.series).ok_or_else(|| ReportError::MissingArtifact("demand series".into()))?;
    let origin = first.offset(len as i64 - 1);
    let horizons = config.horizons();
    let leads: Vec<u32> = horizons.iter().map(|h| h.get() + config.gap).collect();
    let segments: BTreeMap<SeriesKey, SegmentAssignment> =
        weights.assignments.iter().map(|a| (a.key.clone(), a.clone())).collect();
    let specs = config.specs();
    let outputs: Vec<_> = {
        use rayon::prelude::*;
        specs
            .par_iter()
            .map(|s| (s.model_id.clone(), run_model(s, TrainingData::new(&dataset.series, &dataset.exog, &segments), &leads)))
            .collect()
    };
    let dataset_hash = &dataset.version.content_hash;
    let registry = specs
        .iter()
        .map(|s| RegistryEntry {
            model_id: s.model_id.clone(),
            stream: s.stream(),
            hyperparameters: s.hyperparameters.clone(),
            trained_through: origin,
            training_hash: dataset_hash.clone(),
        })
        .collect();
    let segment_of = weights.segment_map();
    let mut forecasts = Vec::new();
    let mut skipped = Vec::new();
    for key in dataset.series.keys() {
        let Some(seg) = segment_of.get(key) else {
            skipped.push(SkippedKey { key: key.clone(), reason: "no segment".into() });
            continue;
        };
        let w = weights.weights_for(seg);
        let mut members = BTreeMap::new();
        for (model, out) in &outputs {
            if let Some(Ok(values)) = out.get(key) {
                members.insert(model.clone(), to_forecast_set(key, origin, &horizons, config.gap, values, model)?);
            }
        }
        let combined = if members.is_empty() {
            Err(sparecast_core::CoreError::MissingMember("no member forecast".into()))
        } else {
            combine_available(&members, &w)
        };
        match combined {
            Ok(mut set) => {
                let cal = weights.intervals.get(&seg.to_string());
                for p in &mut set.points {
                    if let Some(c) = cal.and_then(|c| c.get(&p.horizon.get())) {
                        *p = c.apply(p);
                    }
                }
                forecasts.push(KeyForecast { segment: seg.clone(), forecast: set });
            }
            Err(e) => skipped.push(SkippedKey { key: key.clone(), reason: e.to_string() }),
        }
    }
    Ok(ForecastsPayload { config_hash: config.hash(), origin, registry, forecasts, skipped })
}

/// Ensemble forecasts at the shortest horizon over the backtest, as
/// evaluation records for the scorecard when no forecast history exists.
pub fn ensemble_eval_records(dataset: &Dataset, backtest: &BacktestPayload, weights: &WeightsPayload) -> Vec<EvalRecord> {
    let Some(&h) = backtest.plan.horizons.first() else { return Vec::new() };
    let lead = backtest.plan.lead(h) as i64;
    let segment_of = weights.segment_map();
    let mut rows: BTreeMap<(&SeriesKey, PeriodId), (f64, BTreeMap<&str, f64>)> = BTreeMap::new();
    for r in backtest.records.iter().filter(|r| r.horizon == h) {
        rows.entry((&r.key, r.origin)).or_insert_with(|| (r.actual, BTreeMap::new())).1.insert(&r.model_id, r.forecast);
    }
    let mut out = Vec::new();
    for ((key, origin), (actual, values)) in rows {
        let Some(seg) = segment_of.get(key) else { continue };
        let Some(w) = weights.weights.get(&seg.to_string()).and_then(|m| m.get(&h.get())) else { continue };
        let Ok(f) = blend_values(&values, &w.weights, true) else { continue };
        let period = origin.offset(lead);
        let revenue = dataset.series[key].get(period).map_or(0.0, |o| o.revenue);
        out.push(EvalRecord { key: key.clone(), period, actual, forecast: f, revenue });
    }
    out
}

/// Forecast history joined to actuals.
pub fn history_eval_records(dataset: &Dataset) -> Vec<EvalRecord> {
    dataset
        .history
        .iter()
        .filter_map(|h| {
            let obs = dataset.series.get(&h.key)?.get(h.period)?;
            Some(EvalRecord { key: h.key.clone(), period: h.period, actual: obs.actuals, forecast: h.forecast, revenue: obs.revenue })
        })
        .collect()
}

fn to_json<T: Serialize>(v: &T) -> Vec<u8> {
    serde_json::to_vec(v).expect("payload serializes")
}

pub fn read_payload<T: for<'de> Deserialize<'de>>(store: &ArtifactStore, run: &RunRecord) -> Result<T> {
    let (_, bytes) = store.fetch_artifact(&run.run_id)?;
    serde_json::from_slice(&bytes).map_err(|e| ReportError::Corrupt(format!("{}: {e}", run.run_id)))
}

/// Segments, backtests and learns weights, persisting the backtest and
/// weight artifacts. Reuses stored artifacts for the same config.
pub fn run_backtest_stage(store: &ArtifactStore, dataset_id: &str, config: &ForecastConfig) -> Result<(RunRecord, RunRecord)> {
    let config = config.normalized()?;
    let hash = config.hash();
    if let (Some(b), Some(w)) = (
        store.find_run(dataset_id, &hash, ArtifactKind::Residuals),
        store.find_run(dataset_id, &hash, ArtifactKind::Weights),
    ) {
        store.mark_latest(&b)?;
        store.mark_latest(&w)?;
        return Ok((b, w));
    }
    let dataset = store.load_dataset(dataset_id)?;
    let segments = segment(&dataset, &config)?;
    let bt = backtest(&dataset, &config, &segments)?;
    let weights = learn(&config, &segments, &bt)?;
    let b = store.persist_artifact(dataset_id, &hash, ArtifactKind::Residuals, vec![], &to_json(&bt))?;
    let w = store.persist_artifact(dataset_id, &hash, ArtifactKind::Weights, vec![b.run_id.clone()], &to_json(&weights))?;
    Ok((b, w))
}

/// Full run: backtest stage plus final forecasts.
pub fn run_forecast(store: &ArtifactStore, dataset_id: &str, config: &ForecastConfig) -> Result<RunSummary> {
    let config = config.normalized()?;
    let hash = config.hash();
    let (b, w) = run_backtest_stage(store, dataset_id, &config)?;
    let f = match store.find_run(dataset_id, &hash, ArtifactKind::Forecasts) {
        Some(f) => {
            store.mark_latest(&f)?;
            f
        }
        None => {
            let dataset = store.load_dataset(dataset_id)?;
            let weights: WeightsPayload = read_payload(store, &w)?;
            let payload = forecast(&dataset, &config, &weights)?;
            store.persist_artifact(dataset_id, &hash, ArtifactKind::Forecasts, vec![b.run_id.clone(), w.run_id.clone()], &to_json(&payload))?
        }
    };
    Ok(RunSummary {
        dataset_id: dataset_id.to_string(),
        config_hash: hash,
        backtest_run: b.run_id,
        weights_run: w.run_id,
        forecasts_run: Some(f.run_id),
    })
}

pub fn segments_csv(assignments: &BTreeMap<SeriesKey, SegmentAssignment>) -> String {
    let mut out = String::from("country,part,revenue_tier,size_class,cluster_id,pattern,adi,cv2,seasonality_strength,price_band\n");
    for a in assignments.values() {
        let adi = if a.adi.is_finite() { a.adi.to_string() } else { "inf".into() };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            a.key.country,
            a.key.part,
            a.revenue_tier.as_str(),
            a.size_class.as_str(),
            a.cluster_id,
            a.pattern.as_str(),
            adi,
            a.cv2,
            a.seasonality_strength,
            a.price_band.as_str()
        );
    }
    out
}

pub fn backtest_csv(records: &[BacktestRecord]) -> String {
    let mut out = String::from("country,part,model_id,origin,horizon,actual,forecast,error\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.key.country, r.key.part, r.model_id, r.origin, r.horizon, r.actual, r.forecast, r.error
        );
    }
    out
}

pub fn horizon_of(h: u32) -> Horizon {
    Horizon::new(h).expect("positive horizon")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_headers() {
        assert!(backtest_csv(&[]).starts_with("country,part,model_id,origin,horizon,actual,forecast,error\n"));
        assert_eq!(segments_csv(&BTreeMap::new()).lines().count(), 1);
    }
}
