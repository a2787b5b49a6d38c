//! Mix and concentration diagnostics, month-over-month decomposition with
//! exact reconciliation, and metric trajectories with change points.

use crate::domain::{DemandSeries, ExogenousFrame, Regime, SeriesKey};
use crate::error::{invalid, CoreError, Result};
use crate::num::{self, lit, Real};
use crate::period::PeriodId;
use crate::scorecard::{self, BandDistribution, EvalRecord};
use num_traits::{Num, Signed, ToPrimitive};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShareRow {
    pub entity: String,
    pub actuals: f64,
    pub revenue: f64,
    pub share_a: f64,
    pub share_r: f64,
    pub asp: Option<f64>,
    pub prem_disc: f64,
}

/// Shares of total actuals and revenue per entity from `(A, R)` totals.
pub fn share_rows(totals: &BTreeMap<String, (f64, f64)>) -> Result<Vec<ShareRow>> {
    let ta = num::compensated_sum(totals.values().map(|t| t.0));
    let tr = num::compensated_sum(totals.values().map(|t| t.1));
    if !(ta > 0.0 && tr > 0.0) {
        return Err(CoreError::AllZero("dataset totals"));
    }
    Ok(totals
        .iter()
        .map(|(e, &(a, r))| ShareRow {
            entity: e.clone(),
            actuals: a,
            revenue: r,
            share_a: a / ta,
            share_r: r / tr,
            asp: (a != 0.0).then(|| r / a),
            prem_disc: r / tr - a / ta,
        })
        .collect())
}

pub fn hhi<T: Real>(shares: &[T]) -> T {
    num::compensated_sum(shares.iter().map(|&s| s * s))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub rank: usize,
    pub entity: String,
    pub cumulative_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Concentration {
    pub pareto: Vec<ParetoPoint>,
    pub hhi: f64,
    /// `(k, share of the top k)` for k in 1, 3, 5.
    pub top_k: Vec<(usize, f64)>,
}

pub fn mix_concentration(rows: &[ShareRow]) -> Result<Concentration> {
    let total = num::compensated_sum(rows.iter().map(|r| r.revenue));
    if !(total > 0.0) {
        return Err(CoreError::AllZero("revenue"));
    }
    let mut ranked: Vec<(&str, f64)> = rows.iter().map(|r| (r.entity.as_str(), r.revenue / total)).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let mut cum = 0.0;
    let pareto: Vec<ParetoPoint> = ranked
        .iter()
        .enumerate()
        .map(|(i, (e, s))| {
            cum += s;
            ParetoPoint { rank: i + 1, entity: e.to_string(), cumulative_share: cum }
        })
        .collect();
    let shares: Vec<f64> = ranked.iter().map(|r| r.1).collect();
    let top_k = [1, 3, 5]
        .into_iter()
        .map(|k| (k, num::compensated_sum(shares.iter().take(k).copied())))
        .collect();
    Ok(Concentration { pareto, hhi: hhi(&shares), top_k })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AspSummary {
    pub count: usize,
    pub coverage: f64,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

pub const ASP_WINSOR: (f64, f64) = (0.01, 0.99);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueSignals {
    pub rows: Vec<ShareRow>,
    pub asp_summary: AspSummary,
}

/// Share rows plus a summary of defined ASPs after winsorizing at the
/// 1st and 99th percentiles.
pub fn value_signals(totals: &BTreeMap<String, (f64, f64)>) -> Result<ValueSignals> {
    let rows = share_rows(totals)?;
    let asps: Vec<f64> = rows.iter().filter_map(|r| r.asp).collect();
    let w = num::winsorize(&asps, ASP_WINSOR.0, ASP_WINSOR.1);
    let fold = |f: fn(f64, f64) -> f64| w.iter().copied().reduce(f);
    let asp_summary = AspSummary {
        count: w.len(),
        coverage: if rows.is_empty() { 0.0 } else { w.len() as f64 / rows.len() as f64 },
        mean: num::mean(&w),
        median: num::median(&w),
        min: fold(f64::min),
        max: fold(f64::max),
    };
    Ok(ValueSignals { rows, asp_summary })
}

pub const MIN_INTERSECTION_SUPPORT: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntersectionCell {
    pub row: String,
    pub column: String,
    pub actuals: f64,
    pub revenue: f64,
    pub materials: usize,
    pub bands: BandDistribution,
    /// Band shares weighted by revenue; a rough indicator only.
    pub revenue_weighted_band_shares: [f64; 4],
    pub heuristic: bool,
    pub low_support: bool,
}

/// Member rows are `(row label, column label, A, R, mape)` per material.
pub fn intersection_profile(members: &[(String, String, f64, f64, Option<f64>)]) -> Vec<IntersectionCell> {
    let mut cells: BTreeMap<(&str, &str), Vec<&(String, String, f64, f64, Option<f64>)>> = BTreeMap::new();
    for m in members {
        cells.entry((&m.0, &m.1)).or_default().push(m);
    }
    cells
        .into_iter()
        .filter(|(_, ms)| ms.iter().any(|m| m.2 != 0.0 || m.3 != 0.0))
        .map(|((r, c), ms)| {
            let mapes: Vec<Option<f64>> = ms.iter().map(|m| m.4).collect();
            let mut weighted = [0.0; 4];
            let mut rev = 0.0;
            for m in &ms {
                if let Some(e) = m.4 {
                    weighted[scorecard::band_of(e)] += m.3;
                    rev += m.3;
                }
            }
            if rev > 0.0 {
                weighted.iter_mut().for_each(|w| *w /= rev);
            }
            IntersectionCell {
                row: r.to_string(),
                column: c.to_string(),
                actuals: num::compensated_sum(ms.iter().map(|m| m.2)),
                revenue: num::compensated_sum(ms.iter().map(|m| m.3)),
                materials: ms.len(),
                bands: scorecard::band_distribution(&mapes),
                revenue_weighted_band_shares: weighted,
                heuristic: true,
                low_support: ms.len() < MIN_INTERSECTION_SUPPORT,
            }
        })
        .collect()
}

/// Monthly `(actuals, revenue)` per entity.
pub type EntityMonthly<N> = BTreeMap<String, BTreeMap<PeriodId, (N, N)>>;

/// Aggregates series to entities with `to_n` converting each amount.
pub fn entity_monthly<N: Num + Clone>(
    series: &BTreeMap<SeriesKey, DemandSeries>,
    entity_of: impl Fn(&SeriesKey) -> String,
    to_n: impl Fn(f64) -> N,
) -> EntityMonthly<N> {
    let mut out: EntityMonthly<N> = BTreeMap::new();
    for (k, s) in series {
        let e = out.entry(entity_of(k)).or_default();
        for o in s.observations() {
            let c = e.entry(o.period).or_insert((N::zero(), N::zero()));
            c.0 = c.0.clone() + to_n(o.actuals);
            c.1 = c.1.clone() + to_n(o.revenue);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomRow<N> {
    pub entity: String,
    pub current: Option<N>,
    pub prior: Option<N>,
    pub delta: N,
    /// Not available when the prior month is missing or not positive.
    pub pct_change: Option<f64>,
    pub contribution_share: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconciliationProof<N> {
    pub sum_of_deltas: N,
    pub total_delta: N,
    pub difference: N,
}

impl<N: Num + Clone> ReconciliationProof<N> {
    pub fn holds(&self) -> bool {
        self.difference.is_zero()
    }
}

/// `Σ deltas` against `Σ current − Σ prior` over a partition.
pub fn reconcile<N: Num + Clone>(rows: &[MomRow<N>]) -> ReconciliationProof<N> {
    let sum = |f: &dyn Fn(&MomRow<N>) -> N| rows.iter().fold(N::zero(), |acc, r| acc + f(r));
    let sum_of_deltas = sum(&|r| r.delta.clone());
    let total_delta = sum(&|r| r.current.clone().unwrap_or_else(N::zero)) - sum(&|r| r.prior.clone().unwrap_or_else(N::zero));
    let difference = sum_of_deltas.clone() - total_delta.clone();
    ReconciliationProof { sum_of_deltas, total_delta, difference }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomTable<N> {
    pub period: PeriodId,
    pub prior_period: PeriodId,
    pub actuals: Vec<MomRow<N>>,
    pub revenue: Vec<MomRow<N>>,
    /// Entities by descending `|ΔA|`, ties by entity id.
    pub ranking: Vec<String>,
    pub proof_actuals: ReconciliationProof<N>,
    pub proof_revenue: ReconciliationProof<N>,
}

fn mom_rows<N>(monthly: &EntityMonthly<N>, t: PeriodId, pick: fn(&(N, N)) -> &N) -> Vec<MomRow<N>>
where
    N: Num + Clone + PartialOrd + ToPrimitive,
{
    let prior_t = t.pred();
    let mut rows: Vec<MomRow<N>> = monthly
        .iter()
        .filter_map(|(e, months)| {
            let current = months.get(&t).map(|c| pick(c).clone());
            let prior = months.get(&prior_t).map(|c| pick(c).clone());
            if current.is_none() && prior.is_none() {
                return None;
            }
            let delta = current.clone().unwrap_or_else(N::zero) - prior.clone().unwrap_or_else(N::zero);
            let pct_change = prior
                .as_ref()
                .filter(|p| **p > N::zero())
                .and_then(|p| (delta.clone() / p.clone()).to_f64());
            Some(MomRow { entity: e.clone(), current, prior, delta, pct_change, contribution_share: None })
        })
        .collect();
    let total = rows.iter().fold(N::zero(), |acc, r| acc + r.delta.clone());
    if !total.is_zero() {
        for r in &mut rows {
            r.contribution_share = (r.delta.clone() / total.clone()).to_f64();
        }
    }
    rows
}

/// Month-over-month deltas at `t` versus `t − 1`. Entities missing in one
/// of the months are compared against zero; no rows are invented.
pub fn mom_decomposition<N>(monthly: &EntityMonthly<N>, t: PeriodId) -> Result<MomTable<N>>
where
    N: Num + Clone + PartialOrd + ToPrimitive + Signed,
{
    let months: BTreeSet<PeriodId> = monthly.values().flat_map(|m| m.keys().copied()).collect();
    if months.len() < 2 || !months.contains(&t) || !months.contains(&t.pred()) {
        return Err(CoreError::InsufficientHistory { needed: 2, available: months.len() });
    }
    let actuals = mom_rows(monthly, t, |c| &c.0);
    let revenue = mom_rows(monthly, t, |c| &c.1);
    let mut order: Vec<&MomRow<N>> = actuals.iter().collect();
    order.sort_by(|a, b| {
        b.delta
            .abs()
            .partial_cmp(&a.delta.abs())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.entity.cmp(&b.entity))
    });
    let ranking = order.iter().map(|r| r.entity.clone()).collect();
    Ok(MomTable {
        period: t,
        prior_period: t.pred(),
        proof_actuals: reconcile(&actuals),
        proof_revenue: reconcile(&revenue),
        actuals,
        revenue,
        ranking,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlertKind {
    ConsecutiveDecline,
    AspSwing,
    PriceMixTailwind,
    PricePressure,
}

impl AlertKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AlertKind::ConsecutiveDecline => "consecutive decline",
            AlertKind::AspSwing => "asp swing",
            AlertKind::PriceMixTailwind => "price/mix tailwind",
            AlertKind::PricePressure => "price pressure",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub entity: String,
    pub kind: AlertKind,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentumRow {
    pub entity: String,
    pub delta: f64,
    pub prior_delta: f64,
    pub momentum: f64,
}

pub const ASP_SWING_THRESHOLD: f64 = 0.10;

/// Momentum `ΔA_t − ΔA_{t−1}` and rule-based alerts at month `t`. `large`
/// names the entities eligible for the consecutive-decline alert.
pub fn momentum_alerts(
    monthly: &EntityMonthly<f64>,
    t: PeriodId,
    large: &BTreeSet<String>,
    asp_threshold: f64,
) -> (Vec<MomentumRow>, Vec<Alert>) {
    let mut momentum = Vec::new();
    let mut alerts = Vec::new();
    for (e, months) in monthly {
        let at = |p: PeriodId| months.get(&p).copied();
        let (Some(now), Some(prev)) = (at(t), at(t.pred())) else { continue };
        let d = now.0 - prev.0;
        let dr = now.1 - prev.1;
        if let Some(prev2) = at(t.offset(-2)) {
            let dp = prev.0 - prev2.0;
            momentum.push(MomentumRow { entity: e.clone(), delta: d, prior_delta: dp, momentum: d - dp });
            if large.contains(e) && d < 0.0 && dp < 0.0 {
                alerts.push(Alert { entity: e.clone(), kind: AlertKind::ConsecutiveDecline, value: d });
            }
        }
        if now.0 > 0.0 && prev.0 > 0.0 {
            let swing = (now.1 / now.0) / (prev.1 / prev.0) - 1.0;
            if swing.abs() > asp_threshold {
                alerts.push(Alert { entity: e.clone(), kind: AlertKind::AspSwing, value: swing });
            }
        }
        if dr > 0.0 && d < 0.0 {
            alerts.push(Alert { entity: e.clone(), kind: AlertKind::PriceMixTailwind, value: dr });
        } else if d > 0.0 && dr < 0.0 {
            alerts.push(Alert { entity: e.clone(), kind: AlertKind::PricePressure, value: dr });
        }
    }
    alerts.sort_by(|a, b| (a.kind, &a.entity).cmp(&(b.kind, &b.entity)));
    (momentum, alerts)
}

/// Binary segmentation on mean shifts. Returns ascending indices where a
/// new segment starts. Splits are accepted when the squared-error
/// reduction exceeds `penalty` (default twice the series variance).
pub fn change_points<T: Real>(series: &[T], min_segment: usize, penalty: Option<T>) -> Vec<usize> {
    let min_segment = min_segment.max(1);
    if series.len() < 2 * min_segment {
        return Vec::new();
    }
    let penalty = penalty.unwrap_or_else(|| lit::<T>(2.0) * num::population_variance(series).unwrap_or(T::zero()));
    let mut out = Vec::new();
    let mut stack = vec![(0, series.len())];
    while let Some((lo, hi)) = stack.pop() {
        if let Some((k, gain)) = best_split(&series[lo..hi], min_segment) {
            if gain > penalty {
                out.push(lo + k);
                stack.push((lo, lo + k));
                stack.push((lo + k, hi));
            }
        }
    }
    out.sort_unstable();
    out
}

fn sse<T: Real>(xs: &[T]) -> T {
    let m = num::mean(xs).unwrap_or(T::zero());
    num::compensated_sum(xs.iter().map(|&x| (x - m) * (x - m)))
}

/// Split index maximizing the squared-error reduction; leftmost on ties.
pub fn best_split<T: Real>(xs: &[T], min_segment: usize) -> Option<(usize, T)> {
    if xs.len() < 2 * min_segment {
        return None;
    }
    let whole = sse(xs);
    let mut best: Option<(usize, T)> = None;
    for k in min_segment..=xs.len() - min_segment {
        let gain = whole - sse(&xs[..k]) - sse(&xs[k..]);
        let tol = lit::<T>(1e-9) * whole.abs().max(T::one());
        if best.is_none_or(|(_, b)| gain > b + tol) {
            best = Some((k, gain));
        }
    }
    best
}

pub const UNATTRIBUTED: &str = "unattributed (possible model drift)";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribution {
    pub period: PeriodId,
    pub label: String,
}

/// Months where a non-normal regime begins.
pub fn regime_transitions(frames: &[ExogenousFrame]) -> Vec<(PeriodId, Regime)> {
    let mut sorted: Vec<&ExogenousFrame> = frames.iter().collect();
    sorted.sort_by_key(|f| f.period);
    let mut prev = Regime::None;
    let mut out = Vec::new();
    for f in sorted {
        if f.regime != prev && f.regime != Regime::None {
            out.push((f.period, f.regime));
        }
        prev = f.regime;
    }
    out
}

/// Labels each change with a regime starting within one month of it; the
/// nearest transition wins and equal distances go to the earlier one.
pub fn regime_attribution(changes: &[PeriodId], frames: &[ExogenousFrame]) -> Vec<Attribution> {
    let transitions = regime_transitions(frames);
    changes
        .iter()
        .map(|&c| {
            let label = transitions
                .iter()
                .filter(|(p, _)| p.months_until(c).abs() <= 1)
                .min_by_key(|(p, _)| (p.months_until(c).abs(), *p))
                .map_or(UNATTRIBUTED.to_string(), |(_, r)| r.as_str().to_string());
            Attribution { period: c, label }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrendMetric {
    Mape,
    Wmape,
    Bias,
}

impl TrendMetric {
    pub const ALL: [TrendMetric; 3] = [TrendMetric::Mape, TrendMetric::Wmape, TrendMetric::Bias];

    pub fn as_str(self) -> &'static str {
        match self {
            TrendMetric::Mape => "mape",
            TrendMetric::Wmape => "wmape",
            TrendMetric::Bias => "bias",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Improving,
    Deteriorating,
    Stable,
}

impl Classification {
    pub fn as_str(self) -> &'static str {
        match self {
            Classification::Improving => "improving",
            Classification::Deteriorating => "deteriorating",
            Classification::Stable => "stable",
        }
    }
}

/// Slope floor in percentage points per month.
pub const SLOPE_FLOOR_PP: f64 = 0.5;
pub const SLOPE_SE_MULTIPLIER: f64 = 1.5;
pub const MIN_CHANGE_SEGMENT: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendVerdict {
    pub entity: String,
    pub metric: TrendMetric,
    /// Percentage points per month (of `|bias|` for bias).
    pub slope: f64,
    pub slope_stderr: f64,
    pub threshold: f64,
    pub classification: Classification,
    pub change_points: Vec<PeriodId>,
    pub regime_attribution: Vec<Attribution>,
}

/// Classifies a metric trajectory given in percentage points per month.
pub fn classify_slope<T: Real>(values: &[T]) -> Result<(T, T, T, Classification)> {
    if values.len() < 3 {
        return Err(CoreError::InsufficientHistory { needed: 3, available: values.len() });
    }
    let fit = num::ols_line(values).expect("at least three points");
    let threshold = lit::<T>(SLOPE_FLOOR_PP).max(lit::<T>(SLOPE_SE_MULTIPLIER) * fit.slope_stderr);
    let class = if fit.slope <= -threshold {
        Classification::Improving
    } else if fit.slope >= threshold {
        Classification::Deteriorating
    } else {
        Classification::Stable
    };
    Ok((fit.slope, fit.slope_stderr, threshold, class))
}

/// Verdict for one entity's monthly metric series (percentage points).
/// Bias is judged on its magnitude so drift away from zero deteriorates.
pub fn metric_trend(
    entity: &str,
    metric: TrendMetric,
    points: &[(PeriodId, f64)],
    frames: &[ExogenousFrame],
) -> Result<TrendVerdict> {
    let values: Vec<f64> = points
        .iter()
        .map(|p| if metric == TrendMetric::Bias { p.1.abs() } else { p.1 })
        .collect();
    let (slope, slope_stderr, threshold, classification) = classify_slope(&values)?;
    let raw: Vec<f64> = points.iter().map(|p| p.1).collect();
    let change_points: Vec<PeriodId> =
        change_points(&raw, MIN_CHANGE_SEGMENT, None).into_iter().map(|i| points[i].0).collect();
    let regime_attribution = regime_attribution(&change_points, frames);
    Ok(TrendVerdict {
        entity: entity.to_string(),
        metric,
        slope,
        slope_stderr,
        threshold,
        classification,
        change_points,
        regime_attribution,
    })
}

/// Monthly `(mape, wmape, bias)` in percentage points per entity, with
/// `"overall"` covering all records. Months without a defined value are
/// left out of that metric's series.
pub fn metric_series(
    records: &[EvalRecord],
    entity_of: impl Fn(&SeriesKey) -> String,
) -> BTreeMap<String, BTreeMap<TrendMetric, Vec<(PeriodId, f64)>>> {
    let mut groups: BTreeMap<String, BTreeMap<PeriodId, Vec<(f64, f64)>>> = BTreeMap::new();
    for r in records {
        for e in [OVERALL.to_string(), entity_of(&r.key)] {
            groups.entry(e).or_default().entry(r.period).or_default().push((r.actual, r.forecast));
        }
    }
    groups
        .into_iter()
        .map(|(e, months)| {
            let mut series: BTreeMap<TrendMetric, Vec<(PeriodId, f64)>> = BTreeMap::new();
            for (p, pairs) in months {
                let m = scorecard::point_metrics(&pairs).expect("non-empty month");
                for (metric, v) in [(TrendMetric::Mape, m.mape), (TrendMetric::Wmape, m.wmape), (TrendMetric::Bias, m.bias_pct)] {
                    if let Some(v) = v {
                        series.entry(metric).or_default().push((p, v * 100.0));
                    }
                }
            }
            (e, series)
        })
        .collect()
}

pub const OVERALL: &str = "overall";

/// Verdicts for every entity and metric over the last `window_months`.
pub fn trajectory(
    records: &[EvalRecord],
    entity_of: impl Fn(&SeriesKey) -> String,
    window_months: usize,
    frames: &[ExogenousFrame],
) -> Result<Vec<TrendVerdict>> {
    if window_months < 3 {
        return Err(invalid("window_months", "trend needs at least 3 months"));
    }
    let months = scorecard::evaluated_months(records);
    let Some(&start) = months.len().checked_sub(window_months).and_then(|i| months.get(i)).or(months.first()) else {
        return Err(CoreError::EmptyInput("records"));
    };
    let windowed: Vec<EvalRecord> = records.iter().filter(|r| r.period >= start).cloned().collect();
    let mut out = Vec::new();
    for (entity, by_metric) in metric_series(&windowed, entity_of) {
        for (metric, points) in by_metric {
            if points.len() >= 3 {
                out.push(metric_trend(&entity, metric, &points, frames)?);
            }
        }
    }
    Ok(out)
}
