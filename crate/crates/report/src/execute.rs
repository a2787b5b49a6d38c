use crate::job::{JobSpec, ReportFamily};
use crate::pipeline::{self, read_payload, BacktestPayload, WeightsPayload};
use crate::reflection::{
    proof_doc, BenchmarkRow, MomTableDoc, MonthlyBody, OverallBody, Reflection, ScorecardBody, TransitionProof,
};
use crate::validate::validate_contract;
use crate::{invalid, ReportError, Result};
use sparecast_core::ensemble::blend_values;
use sparecast_core::exact::{self, Exact};
use sparecast_core::num::compensated_sum;
use sparecast_core::scorecard::{
    compute_scorecard, entity_rows, evaluated_months, point_metrics, EntityLevel, EvalRecord, ScorecardRequest,
};
use sparecast_core::segmentation::{RevenueTier, SegmentAssignment, SizeClass};
use sparecast_core::trend::{
    entity_monthly, intersection_profile, metric_series, metric_trend, mix_concentration, mom_decomposition,
    momentum_alerts, value_signals, TrendVerdict, ASP_SWING_THRESHOLD, OVERALL,
};
use sparecast_core::{DemandSeries, ExogenousFrame, PeriodId, Regime, SeriesKey};
use sparecast_store::{run_id_for, ArtifactKind, ArtifactStore, Dataset};
use std::collections::{BTreeMap, BTreeSet};

pub const HISTORY_SOURCE: &str = "forecast_history";
pub const ENSEMBLE_SOURCE: &str = "ensemble_backtest";

/// Everything a report reads, loaded from the store.
pub struct Inputs {
    pub dataset: Dataset,
    pub backtest: BacktestPayload,
    pub weights: WeightsPayload,
    pub runs: Vec<String>,
}

pub fn load_inputs(store: &ArtifactStore, spec: &JobSpec) -> Result<Inputs> {
    let dataset_id = spec.dataset_id.as_deref().ok_or_else(|| ReportError::MissingArtifact("dataset_id".into()))?;
    let config_hash =
        spec.config_hash.as_deref().ok_or_else(|| ReportError::MissingArtifact("backtest artifact (no config)".into()))?;
    let dataset = store.load_dataset(dataset_id).map_err(|_| ReportError::NotFound(format!("dataset {dataset_id}")))?;
    let find = |kind: ArtifactKind, what: &str| {
        store.find_run(dataset_id, config_hash, kind).ok_or_else(|| {
            ReportError::MissingArtifact(format!("{what} artifact (run {})", run_id_for(dataset_id, config_hash, kind)))
        })
    };
    let b = find(ArtifactKind::Residuals, "backtest")?;
    let w = find(ArtifactKind::Weights, "weights")?;
    Ok(Inputs {
        backtest: read_payload(store, &b)?,
        weights: read_payload(store, &w)?,
        dataset,
        runs: vec![b.run_id, w.run_id],
    })
}

/// Runs the analytics a job asks for and embeds the contract check results.
pub fn execute_jobspec(store: &ArtifactStore, spec: &JobSpec) -> Result<Reflection> {
    let inputs = load_inputs(store, spec)?;
    execute_with(&inputs, spec)
}

pub fn execute_with(inputs: &Inputs, spec: &JobSpec) -> Result<Reflection> {
    let dataset = &inputs.dataset;
    let scope = &spec.scope;
    let series: BTreeMap<SeriesKey, DemandSeries> =
        dataset.series.iter().filter(|(k, _)| scope.contains(k)).map(|(k, s)| (k.clone(), s.clone())).collect();
    if series.is_empty() {
        return Err(invalid("scope", "no entities in scope"));
    }
    let (source, all_records) = if dataset.history.is_empty() {
        (ENSEMBLE_SOURCE, pipeline::ensemble_eval_records(dataset, &inputs.backtest, &inputs.weights))
    } else {
        (HISTORY_SOURCE, pipeline::history_eval_records(dataset))
    };
    let records: Vec<EvalRecord> = all_records.into_iter().filter(|r| scope.contains(&r.key)).collect();
    let assignments: BTreeMap<SeriesKey, SegmentAssignment> =
        inputs.weights.assignments.iter().map(|a| (a.key.clone(), a.clone())).collect();

    let (first, len) = pipeline::span(&series).expect("non-empty");
    let last = first.offset(len as i64 - 1);
    let mut window = (first.offset((len as i64 - spec.window_months as i64).max(0)), last);

    let mut reflection = Reflection {
        job: spec.clone(),
        dataset_hash: dataset.version.content_hash.clone(),
        runs: inputs.runs.clone(),
        evaluation_source: source.to_string(),
        window_start: window.0,
        window_end: window.1,
        scorecard: None,
        overall: None,
        monthly: None,
        trajectory: None,
        checks: Vec::new(),
        violations: Vec::new(),
    };
    match spec.report_family {
        ReportFamily::PerformanceScorecard => {
            let body = scorecard_body(spec, &records, &series, &assignments, inputs)?;
            window = (body.scorecard.window_start, body.scorecard.window_end);
            reflection.scorecard = Some(body);
        }
        ReportFamily::TrendOverall => {
            if spec.window_months > len {
                return Err(invalid("window_months", format!("out of range: {len} months of data")));
            }
            reflection.overall = Some(overall_body(&series, &records, &assignments, window)?);
        }
        ReportFamily::TrendMonthly => {
            if len < 2 {
                return Err(invalid("window_months", "monthly trend needs two months of data"));
            }
            reflection.monthly = Some(monthly_body(&series, &assignments)?);
        }
    }
    (reflection.window_start, reflection.window_end) = window;
    if spec.toggles.trend {
        reflection.trajectory = Some(trajectory(spec, &records, &assignments, &dataset.exog)?);
    }
    let (checks, violations) = validate_contract(&reflection);
    reflection.checks = checks;
    reflection.violations = violations;
    Ok(reflection)
}

fn scorecard_body(
    spec: &JobSpec,
    records: &[EvalRecord],
    series: &BTreeMap<SeriesKey, DemandSeries>,
    assignments: &BTreeMap<SeriesKey, SegmentAssignment>,
    inputs: &Inputs,
) -> Result<ScorecardBody> {
    let request = ScorecardRequest {
        window_months: spec.window_months,
        deviation: spec.deviation(),
        include_revenue_views: true,
        top_n: spec.top_n,
        ..ScorecardRequest::default()
    };
    let sizes: BTreeMap<SeriesKey, SizeClass> = assignments.iter().map(|(k, a)| (k.clone(), a.size_class)).collect();
    let scorecard = compute_scorecard(records, &request, &sizes).map_err(|e| match e {
        sparecast_core::CoreError::InvalidParameter { name, reason } => invalid(name, format!("out of range: {reason}")),
        other => other.into(),
    })?;
    let dataset_revenue = compensated_sum(
        records
            .iter()
            .filter(|r| r.period >= scorecard.window_start && r.period <= scorecard.window_end)
            .filter_map(|r| series.get(&r.key)?.get(r.period).map(|o| o.revenue)),
    );
    Ok(ScorecardBody { dataset_revenue, benchmark: benchmark(spec, inputs), scorecard })
}

/// Backtest WMAPE per model and horizon, with the ensemble alongside.
fn benchmark(spec: &JobSpec, inputs: &Inputs) -> Vec<BenchmarkRow> {
    let segment_of = inputs.weights.segment_map();
    let mut pairs: BTreeMap<(String, u32), Vec<(f64, f64)>> = BTreeMap::new();
    let mut rows: BTreeMap<(&SeriesKey, PeriodId, u32), (f64, BTreeMap<&str, f64>)> = BTreeMap::new();
    for r in inputs.backtest.records.iter().filter(|r| spec.scope.contains(&r.key)) {
        pairs.entry((r.model_id.clone(), r.horizon.get())).or_default().push((r.actual, r.forecast));
        rows.entry((&r.key, r.origin, r.horizon.get())).or_insert_with(|| (r.actual, BTreeMap::new())).1.insert(&r.model_id, r.forecast);
    }
    for ((key, _, h), (actual, values)) in rows {
        let w = segment_of.get(key).and_then(|s| inputs.weights.weights.get(&s.to_string())).and_then(|m| m.get(&h));
        if let Some(f) = w.and_then(|w| blend_values(&values, &w.weights, true).ok()) {
            pairs.entry(("ensemble".into(), h)).or_default().push((actual, f));
        }
    }
    pairs
        .into_iter()
        .map(|((model_id, horizon), p)| BenchmarkRow {
            model_id,
            horizon,
            wmape: point_metrics(&p).ok().and_then(|m| m.wmape),
            n: p.len(),
        })
        .collect()
}

fn window_totals(
    series: &BTreeMap<SeriesKey, DemandSeries>,
    window: (PeriodId, PeriodId),
    entity_of: impl Fn(&SeriesKey) -> String,
) -> BTreeMap<String, (f64, f64)> {
    let mut parts: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (k, s) in series {
        let e = parts.entry(entity_of(k)).or_default();
        for o in s.observations().iter().filter(|o| o.period >= window.0 && o.period <= window.1) {
            e.0.push(o.actuals);
            e.1.push(o.revenue);
        }
    }
    parts.into_iter().map(|(e, (a, r))| (e, (compensated_sum(a), compensated_sum(r)))).collect()
}

fn overall_body(
    series: &BTreeMap<SeriesKey, DemandSeries>,
    records: &[EvalRecord],
    assignments: &BTreeMap<SeriesKey, SegmentAssignment>,
    window: (PeriodId, PeriodId),
) -> Result<OverallBody> {
    let by_key = window_totals(series, window, |k| k.to_string());
    let countries = value_signals(&window_totals(series, window, |k| k.country.clone()))?;
    let materials = value_signals(&window_totals(series, window, |k| k.part.clone()))?;
    let windowed: Vec<EvalRecord> =
        records.iter().filter(|r| r.period >= window.0 && r.period <= window.1).cloned().collect();
    let key_mape: BTreeMap<String, Option<f64>> =
        entity_rows(&windowed, EntityLevel::Key).into_iter().map(|r| (r.entity, r.mape)).collect();
    let members: Vec<(String, String, f64, f64, Option<f64>)> = series
        .keys()
        .map(|k| {
            let id = k.to_string();
            let band = assignments.get(k).map_or("unassigned", |a| a.price_band.as_str());
            let (a, r) = by_key[&id];
            (k.country.clone(), band.to_string(), a, r, key_mape.get(&id).copied().flatten())
        })
        .collect();
    Ok(OverallBody {
        window_start: window.0,
        window_end: window.1,
        dataset_actuals: compensated_sum(by_key.values().map(|t| t.0)),
        dataset_revenue: compensated_sum(by_key.values().map(|t| t.1)),
        country_concentration: mix_concentration(&countries.rows)?,
        material_concentration: mix_concentration(&materials.rows)?,
        countries,
        materials,
        intersections: intersection_profile(&members),
    })
}

fn monthly_body(series: &BTreeMap<SeriesKey, DemandSeries>, assignments: &BTreeMap<SeriesKey, SegmentAssignment>) -> Result<MonthlyBody> {
    let (first, len) = pipeline::span(series).expect("non-empty");
    let last = first.offset(len as i64 - 1);
    let by_country = entity_monthly::<Exact>(series, |k| k.country.clone(), exact::from_f64);
    let by_key = entity_monthly::<Exact>(series, |k| k.to_string(), exact::from_f64);
    let latest_country = MomTableDoc::from_table("country", &mom_decomposition(&by_country, last)?);
    let latest_key = MomTableDoc::from_table("key", &mom_decomposition(&by_key, last)?);
    let mut proofs = Vec::new();
    for (level, monthly) in [("country", &by_country), ("key", &by_key)] {
        for i in 1..len {
            let t = first.offset(i as i64);
            let table = mom_decomposition(monthly, t)?;
            let nonpositive = table
                .actuals
                .iter()
                .filter(|r| r.prior.as_ref().is_none_or(|p| *p <= Exact::from_integer(0.into())))
                .count();
            proofs.push(TransitionProof {
                level: level.to_string(),
                period: t,
                actuals: proof_doc(&table.proof_actuals),
                revenue: proof_doc(&table.proof_revenue),
                rows: table.actuals.len(),
                nonpositive_prior_rows: nonpositive,
                pct_unavailable_rows: table.actuals.iter().filter(|r| r.pct_change.is_none()).count(),
            });
        }
    }
    let float_monthly = entity_monthly::<f64>(series, |k| k.to_string(), |x| x);
    let large: BTreeSet<String> =
        assignments.values().filter(|a| a.size_class == SizeClass::Large).map(|a| a.key.to_string()).collect();
    let (momentum, alerts) = momentum_alerts(&float_monthly, last, &large, ASP_SWING_THRESHOLD);
    Ok(MonthlyBody { latest_country, latest_key, proofs, momentum, alerts })
}

/// Regime per period taken by majority across countries, for entities
/// that span several countries. Ties go to the earlier regime in
/// declaration order.
pub fn modal_frames(exog: &BTreeMap<String, Vec<ExogenousFrame>>, countries: &BTreeSet<String>) -> Vec<ExogenousFrame> {
    let mut votes: BTreeMap<PeriodId, ([usize; 4], ExogenousFrame)> = BTreeMap::new();
    for frames in exog.iter().filter(|(c, _)| countries.contains(*c)).map(|(_, f)| f) {
        for f in frames {
            votes.entry(f.period).or_insert(([0; 4], *f)).0[f.regime.index()] += 1;
        }
    }
    let mut out: Vec<ExogenousFrame> = Vec::with_capacity(votes.len());
    for (_, (counts, template)) in votes {
        let best = (0..4).max_by_key(|&i| (counts[i], std::cmp::Reverse(i))).expect("four regimes");
        let regime = Regime::ALL[best];
        let since = match out.last() {
            Some(p) if p.regime == regime && regime != Regime::None && p.period.succ() == template.period => {
                p.months_since_regime_start + 1
            }
            _ => 0,
        };
        out.push(ExogenousFrame { regime, months_since_regime_start: since, ..template });
    }
    out
}

/// Verdicts for the overall series, each country, and each intermittency
/// pattern of the long tail, over the job window.
fn trajectory(
    spec: &JobSpec,
    records: &[EvalRecord],
    assignments: &BTreeMap<SeriesKey, SegmentAssignment>,
    exog: &BTreeMap<String, Vec<ExogenousFrame>>,
) -> Result<Vec<TrendVerdict>> {
    let months = evaluated_months(records);
    let Some(&start) = months.get(months.len().saturating_sub(spec.window_months)) else {
        return Ok(Vec::new());
    };
    let windowed: Vec<EvalRecord> = records.iter().filter(|r| r.period >= start).cloned().collect();
    let countries: BTreeSet<String> = windowed.iter().map(|r| r.key.country.clone()).collect();
    let modal = modal_frames(exog, &countries);
    let mut out = Vec::new();
    for (entity, by_metric) in metric_series(&windowed, |k| k.country.clone()) {
        let frames = if entity == OVERALL { &modal } else { exog.get(&entity).unwrap_or(&modal) };
        for (metric, points) in by_metric.into_iter().filter(|(_, p)| p.len() >= 3) {
            out.push(metric_trend(&entity, metric, &points, frames)?);
        }
    }
    let tail: Vec<EvalRecord> = windowed
        .iter()
        .filter(|r| assignments.get(&r.key).is_some_and(|a| a.revenue_tier == RevenueTier::LongTail))
        .cloned()
        .collect();
    let pattern_of = |k: &SeriesKey| format!("pattern:{}", assignments[k].pattern.as_str());
    for (entity, by_metric) in metric_series(&tail, pattern_of) {
        if entity == OVERALL {
            continue;
        }
        for (metric, points) in by_metric.into_iter().filter(|(_, p)| p.len() >= 3) {
            out.push(metric_trend(&entity, metric, &points, &modal)?);
        }
    }
    Ok(out)
}
