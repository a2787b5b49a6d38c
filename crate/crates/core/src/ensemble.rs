//! Rolling-origin backtests, simplex weight learning, combination, interval
//! calibration and residual drift checks.

use crate::domain::{DemandSeries, ExogenousFrame, ForecastPoint, ForecastSet, Horizon, SeriesKey};
use crate::error::{invalid, CoreError, Result};
use crate::forecast::{run_model, ModelSpec, TrainingData};
use crate::num::{self, lit, Real};
use crate::period::PeriodId;
use crate::segmentation::{PriceBand, RevenueTier, SegmentAssignment};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RollingOriginPlan {
    pub origins: Vec<PeriodId>,
    pub gap: u32,
    pub horizons: Vec<Horizon>,
    pub min_train_length: usize,
}

impl RollingOriginPlan {
    pub fn max_horizon(&self) -> u32 {
        self.horizons.iter().map(|h| h.get()).max().unwrap_or(0)
    }

    /// Lead (months past the origin) evaluated for horizon `h`.
    pub fn lead(&self, h: Horizon) -> u32 {
        self.gap + h.get()
    }
}

/// Zero-based positions of the last training month for each origin.
pub fn plan_positions(
    history_length: usize,
    n_origins: usize,
    gap: u32,
    max_horizon: u32,
    min_train_length: usize,
) -> Result<Vec<usize>> {
    if n_origins == 0 {
        return Err(CoreError::Infeasible("n_origins must be at least 1".into()));
    }
    let reserve = gap as usize + max_horizon as usize + 1;
    if min_train_length == 0 || history_length < reserve || history_length - reserve + 1 < min_train_length {
        return Err(CoreError::Infeasible(format!(
            "{history_length} months cannot hold {min_train_length} training months plus gap {gap} and horizon {max_horizon}"
        )));
    }
    let last = history_length - reserve;
    let first = (min_train_length - 1).max((last + 1).saturating_sub(n_origins));
    Ok((first..=last).collect())
}

/// Origins are the last `n_origins` months that leave `min_train_length`
/// training months and a full evaluation window after the gap.
pub fn make_plan(
    first_period: PeriodId,
    history_length: usize,
    n_origins: usize,
    gap: u32,
    horizons: &[Horizon],
    min_train_length: usize,
) -> Result<RollingOriginPlan> {
    let mut horizons = horizons.to_vec();
    horizons.sort();
    horizons.dedup();
    if horizons.is_empty() {
        return Err(invalid("horizons", "at least one horizon is required"));
    }
    let max_h = horizons[horizons.len() - 1].get();
    let origins = plan_positions(history_length, n_origins, gap, max_h, min_train_length)?
        .into_iter()
        .map(|i| first_period.offset(i as i64))
        .collect();
    Ok(RollingOriginPlan { origins, gap, horizons, min_train_length })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestRecord {
    pub key: SeriesKey,
    pub model_id: String,
    pub origin: PeriodId,
    pub horizon: Horizon,
    pub actual: f64,
    pub forecast: f64,
    pub error: f64,
}

impl BacktestRecord {
    pub fn new(key: SeriesKey, model_id: impl Into<String>, origin: PeriodId, horizon: Horizon, actual: f64, forecast: f64) -> Self {
        Self { key, model_id: model_id.into(), origin, horizon, actual, forecast, error: actual - forecast }
    }
}

/// A model that could not be fitted for one series at one origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub key: SeriesKey,
    pub model_id: String,
    pub origin: PeriodId,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BacktestResult {
    pub records: Vec<BacktestRecord>,
    pub skips: Vec<SkipRecord>,
}

impl BacktestResult {
    fn sort(&mut self) {
        self.records.sort_by(|a, b| {
            (&a.key, &a.model_id, a.origin, a.horizon).cmp(&(&b.key, &b.model_id, b.origin, b.horizon))
        });
        self.skips
            .sort_by(|a, b| (&a.key, &a.model_id, a.origin).cmp(&(&b.key, &b.model_id, b.origin)));
    }

    pub fn model_ids(&self) -> BTreeSet<String> {
        self.records.iter().map(|r| r.model_id.clone()).collect()
    }
}

/// Receives `(model_id, origin, key, latest period consumed)` for each fit.
pub type FitAudit<'a> = &'a (dyn Fn(&str, PeriodId, &SeriesKey, PeriodId) + Sync);

pub fn run_backtest(
    series: &BTreeMap<SeriesKey, DemandSeries>,
    exog: &BTreeMap<String, Vec<ExogenousFrame>>,
    plan: &RollingOriginPlan,
    specs: &[ModelSpec],
    segments: &BTreeMap<SeriesKey, SegmentAssignment>,
) -> Result<BacktestResult> {
    run_backtest_audited(series, exog, plan, specs, segments, None)
}

/// Refits every model at every origin on data up to the origin and scores
/// the forecasts of `origin + gap + h` against actuals.
pub fn run_backtest_audited(
    series: &BTreeMap<SeriesKey, DemandSeries>,
    exog: &BTreeMap<String, Vec<ExogenousFrame>>,
    plan: &RollingOriginPlan,
    specs: &[ModelSpec],
    segments: &BTreeMap<SeriesKey, SegmentAssignment>,
    audit: Option<FitAudit<'_>>,
) -> Result<BacktestResult> {
    if plan.origins.is_empty() || plan.horizons.is_empty() {
        return Err(CoreError::Infeasible("empty plan".into()));
    }
    for spec in specs {
        spec.validate()?;
    }
    let leads: Vec<u32> = plan.horizons.iter().map(|&h| plan.lead(h)).collect();
    let folds: Vec<(PeriodId, &ModelSpec)> =
        plan.origins.iter().flat_map(|&o| specs.iter().map(move |s| (o, s))).collect();
    let parts: Vec<BacktestResult> = folds
        .par_iter()
        .map(|&(origin, spec)| {
            let train: BTreeMap<SeriesKey, DemandSeries> = series
                .iter()
                .filter_map(|(k, s)| s.truncated_through(origin).map(|t| (k.clone(), t)))
                .collect();
            let observer = |key: &SeriesKey, seen: PeriodId| {
                if let Some(a) = audit {
                    a(&spec.model_id, origin, key, seen);
                }
            };
            let mut data = TrainingData::new(&train, exog, segments);
            data.observer = Some(&observer);
            let mut out = BacktestResult::default();
            for (key, result) in run_model(spec, data, &leads) {
                match result {
                    Ok(values) => {
                        for (&h, &value) in plan.horizons.iter().zip(&values) {
                            let target = origin.offset(plan.lead(h) as i64);
                            if let Some(obs) = series[&key].get(target) {
                                out.records.push(BacktestRecord::new(
                                    key.clone(),
                                    &spec.model_id,
                                    origin,
                                    h,
                                    obs.actuals,
                                    value,
                                ));
                            }
                        }
                    }
                    Err(e) => out.skips.push(SkipRecord {
                        key,
                        model_id: spec.model_id.clone(),
                        origin,
                        reason: e.to_string(),
                    }),
                }
            }
            out
        })
        .collect();
    let mut result = BacktestResult::default();
    for p in parts {
        result.records.extend(p.records);
        result.skips.extend(p.skips);
    }
    result.sort();
    Ok(result)
}

/// Group over which one weight vector is learned.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum SegmentId {
    Key(SeriesKey),
    Band(PriceBand),
    Cluster(u32),
}

impl fmt::Display for SegmentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SegmentId::Key(k) => write!(f, "key:{k}"),
            SegmentId::Band(b) => write!(f, "band:{}", b.as_str()),
            SegmentId::Cluster(c) => write!(f, "cluster:{c}"),
        }
    }
}

impl FromStr for SegmentId {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || invalid("segment", format!("cannot parse {s:?}"));
        let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
        match kind {
            "key" => {
                let (c, p) = rest.split_once('/').ok_or_else(bad)?;
                Ok(SegmentId::Key(SeriesKey::new(c, p)?))
            }
            "band" => [PriceBand::Low, PriceBand::Mid, PriceBand::High]
                .into_iter()
                .find(|b| b.as_str() == rest)
                .map(SegmentId::Band)
                .ok_or_else(bad),
            "cluster" => rest.parse().map(SegmentId::Cluster).map_err(|_| bad()),
            _ => Err(bad()),
        }
    }
}

impl From<SegmentId> for String {
    fn from(s: SegmentId) -> String {
        s.to_string()
    }
}

impl TryFrom<String> for SegmentId {
    type Error = CoreError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

pub const MIN_KEY_RECORDS: usize = 30;

/// High-tier series get their own weights when they have enough validation
/// records for one model, otherwise they share weights with their price
/// band. Long-tail series share weights by cluster.
pub fn weight_segments(
    assignments: &BTreeMap<SeriesKey, SegmentAssignment>,
    backtest: &BacktestResult,
    min_key_records: usize,
) -> BTreeMap<SeriesKey, SegmentId> {
    let mut counts: BTreeMap<(&SeriesKey, &str), usize> = BTreeMap::new();
    for r in &backtest.records {
        *counts.entry((&r.key, r.model_id.as_str())).or_default() += 1;
    }
    let mut per_key: BTreeMap<&SeriesKey, usize> = BTreeMap::new();
    for ((k, _), n) in counts {
        let e = per_key.entry(k).or_default();
        *e = (*e).max(n);
    }
    assignments
        .iter()
        .map(|(k, a)| {
            let seg = match a.revenue_tier {
                RevenueTier::High if per_key.get(k).copied().unwrap_or(0) >= min_key_records => SegmentId::Key(k.clone()),
                RevenueTier::High => SegmentId::Band(a.price_band),
                RevenueTier::LongTail => SegmentId::Cluster(a.cluster_id),
            };
            (k.clone(), seg)
        })
        .collect()
}

/// Combined-forecast WMAPE as a function of the weights. Rows are
/// validation points, columns are models.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightProblem<T> {
    pub model_ids: Vec<String>,
    pub forecasts: Vec<Vec<T>>,
    pub actuals: Vec<T>,
}

impl<T: Real> WeightProblem<T> {
    pub fn new(model_ids: Vec<String>, forecasts: Vec<Vec<T>>, actuals: Vec<T>) -> Result<Self> {
        if model_ids.is_empty() || actuals.is_empty() {
            return Err(CoreError::EmptyInput("weight problem"));
        }
        if forecasts.len() != actuals.len() || forecasts.iter().any(|r| r.len() != model_ids.len()) {
            return Err(invalid("forecasts", "shape does not match models and actuals"));
        }
        Ok(Self { model_ids, forecasts, actuals })
    }

    fn denominator(&self) -> T {
        let d = num::compensated_sum(self.actuals.iter().copied());
        if d > T::zero() {
            d
        } else {
            T::one()
        }
    }

    /// `Σ|a − w·f| / Σ a`; falls back to the plain absolute error sum when
    /// all actuals are zero.
    pub fn wmape(&self, w: &[T]) -> T {
        let errors = self.forecasts.iter().zip(&self.actuals).map(|(row, &a)| {
            let f = row.iter().zip(w).fold(T::zero(), |acc, (&f, &w)| acc + f * w);
            (a - f).abs()
        });
        num::compensated_sum(errors) / self.denominator()
    }

    fn subgradient(&self, w: &[T]) -> Vec<T> {
        let mut g = vec![T::zero(); w.len()];
        for (row, &a) in self.forecasts.iter().zip(&self.actuals) {
            let f = row.iter().zip(w).fold(T::zero(), |acc, (&f, &w)| acc + f * w);
            let s = if f > a { T::one() } else if f < a { -T::one() } else { T::zero() };
            for (gi, &fi) in g.iter_mut().zip(row) {
                *gi = *gi + s * fi;
            }
        }
        let d = self.denominator();
        g.into_iter().map(|x| x / d).collect()
    }

    pub fn vertex(&self, i: usize) -> Vec<T> {
        let mut w = vec![T::zero(); self.model_ids.len()];
        w[i] = T::one();
        w
    }

    /// Index and WMAPE of the best single model; ties go to the
    /// lexicographically smallest model id.
    pub fn best_single(&self) -> (usize, T) {
        let mut best: Option<(usize, T)> = None;
        for i in 0..self.model_ids.len() {
            let v = self.wmape(&self.vertex(i));
            best = match best {
                None => Some((i, v)),
                Some((j, b)) if v < b || (v == b && self.model_ids[i] < self.model_ids[j]) => Some((i, v)),
                keep => keep,
            };
        }
        best.expect("non-empty")
    }

    pub fn solve(&self) -> Vec<T> {
        let m = self.model_ids.len();
        if m == 1 {
            return vec![T::one()];
        }
        let mut w = if m <= 4 { self.grid_then_polish() } else { self.subgradient_then_exchange() };
        normalize(&mut w);
        let (i, single) = self.best_single();
        if !improves(self.wmape(&w), single) {
            self.vertex(i)
        } else {
            w
        }
    }

    fn grid_then_polish(&self) -> Vec<T> {
        let m = self.model_ids.len();
        let mut best = simplex_grid(m, 20)
            .into_iter()
            .map(|c| c.iter().map(|&u| lit::<T>(u as f64 / 20.0)).collect::<Vec<_>>())
            .fold(None::<(Vec<T>, T)>, |acc, w| {
                let v = self.wmape(&w);
                match acc {
                    Some((bw, bv)) if !improves(v, bv) => Some((bw, bv)),
                    _ => Some((w, v)),
                }
            })
            .expect("grid is non-empty");
        for (step, radius) in [(0.01, 5i64), (0.0025, 4)] {
            best = self.local_grid(best, lit(step), radius);
        }
        best.0
    }

    /// Exhaustive search of `w* + step·d` over integer offsets
    /// `|d_i| ≤ radius` on the first `m − 1` coordinates.
    fn local_grid(&self, (center, mut best_v): (Vec<T>, T), step: T, radius: i64) -> (Vec<T>, T) {
        let m = center.len();
        let mut best = center.clone();
        let mut d = vec![-radius; m - 1];
        loop {
            let mut w = Vec::with_capacity(m);
            let mut ok = true;
            for (c, &di) in center.iter().zip(&d) {
                let x = *c + step * lit(di as f64);
                ok &= x >= -lit::<T>(1e-12);
                w.push(x.max(T::zero()));
            }
            let rest = T::one() - w.iter().fold(T::zero(), |a, &b| a + b);
            ok &= rest >= -lit::<T>(1e-12);
            if ok {
                w.push(rest.max(T::zero()));
                let v = self.wmape(&w);
                if improves(v, best_v) {
                    best_v = v;
                    best = w;
                }
            }
            let mut i = 0;
            while i < d.len() {
                d[i] += 1;
                if d[i] <= radius {
                    break;
                }
                d[i] = -radius;
                i += 1;
            }
            if i == d.len() {
                break;
            }
        }
        (best, best_v)
    }

    fn subgradient_then_exchange(&self) -> Vec<T> {
        let m = self.model_ids.len();
        let mut w = vec![T::one() / num::from_usize::<T>(m); m];
        let mut best = (w.clone(), self.wmape(&w));
        for t in 1..=500 {
            let g = self.subgradient(&w);
            let eta = lit::<T>(0.1) / num::from_usize::<T>(t).sqrt();
            let stepped: Vec<T> = w.iter().zip(&g).map(|(&wi, &gi)| wi - eta * gi).collect();
            w = num::project_to_simplex(&stepped);
            let v = self.wmape(&w);
            if improves(v, best.1) {
                best = (w.clone(), v);
            }
        }
        let (mut w, mut v) = best;
        for delta in [0.05, 0.01, 0.0025] {
            let delta = lit::<T>(delta);
            for _ in 0..200 {
                let mut improved = false;
                for i in 0..m {
                    for j in 0..m {
                        let amount = delta.min(w[i]);
                        if i == j || amount <= T::zero() {
                            continue;
                        }
                        let mut c = w.clone();
                        c[i] = c[i] - amount;
                        c[j] = c[j] + amount;
                        let cv = self.wmape(&c);
                        if improves(cv, v) {
                            w = c;
                            v = cv;
                            improved = true;
                        }
                    }
                }
                if !improved {
                    break;
                }
            }
        }
        w
    }
}

/// Strict improvement beyond floating-point noise, so ties keep the
/// incumbent.
fn improves<T: Real>(candidate: T, incumbent: T) -> bool {
    candidate < incumbent - lit::<T>(1e-12) * incumbent.abs().max(T::one())
}

fn normalize<T: Real>(w: &mut [T]) {
    for x in w.iter_mut() {
        *x = x.max(T::zero());
    }
    let s = num::compensated_sum(w.iter().copied());
    for x in w.iter_mut() {
        *x = *x / s;
    }
}

/// All compositions of `units` into `m` non-negative parts, in
/// lexicographic order.
pub fn simplex_grid(m: usize, units: u32) -> Vec<Vec<u32>> {
    fn rec(m: usize, left: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if m == 1 {
            prefix.push(left);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for u in 0..=left {
            prefix.push(u);
            rec(m - 1, left - u, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if m > 0 {
        rec(m, units, &mut Vec::new(), &mut out);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleWeights {
    pub segment: SegmentId,
    pub horizon: Horizon,
    pub weights: BTreeMap<String, f64>,
    pub validation_wmape: f64,
    pub best_single_model: String,
    pub best_single_wmape: f64,
    pub n_records: usize,
}

/// Validation rows of one segment at one horizon, restricted to models
/// with a record for every `(key, origin)` seen in the segment.
pub fn weight_problem(
    backtest: &BacktestResult,
    segment_of: &BTreeMap<SeriesKey, SegmentId>,
    segment: &SegmentId,
    horizon: Horizon,
) -> Result<WeightProblem<f64>> {
    let no_records = || CoreError::NoRecords { segment: segment.to_string(), horizon: horizon.get() };
    let mut table: BTreeMap<(&SeriesKey, PeriodId), (f64, BTreeMap<&str, f64>)> = BTreeMap::new();
    for r in backtest
        .records
        .iter()
        .filter(|r| r.horizon == horizon && segment_of.get(&r.key) == Some(segment))
    {
        table
            .entry((&r.key, r.origin))
            .or_insert_with(|| (r.actual, BTreeMap::new()))
            .1
            .insert(&r.model_id, r.forecast);
    }
    let all_models: BTreeSet<&str> = table.values().flat_map(|(_, m)| m.keys().copied()).collect();
    let eligible: Vec<&str> = all_models
        .into_iter()
        .filter(|m| table.values().all(|(_, row)| row.contains_key(m)))
        .collect();
    if table.is_empty() || eligible.is_empty() {
        return Err(no_records());
    }
    let (forecasts, actuals) = table
        .values()
        .map(|(a, row)| (eligible.iter().map(|m| row[m]).collect::<Vec<_>>(), *a))
        .unzip();
    WeightProblem::new(eligible.iter().map(|s| s.to_string()).collect(), forecasts, actuals)
}

pub fn learn_weights(
    backtest: &BacktestResult,
    segment_of: &BTreeMap<SeriesKey, SegmentId>,
    segment: &SegmentId,
    horizon: Horizon,
) -> Result<EnsembleWeights> {
    let problem = weight_problem(backtest, segment_of, segment, horizon)?;
    let w = problem.solve();
    let (best, best_v) = problem.best_single();
    Ok(EnsembleWeights {
        segment: segment.clone(),
        horizon,
        validation_wmape: problem.wmape(&w),
        weights: problem.model_ids.iter().cloned().zip(w).collect(),
        best_single_model: problem.model_ids[best].clone(),
        best_single_wmape: best_v,
        n_records: problem.actuals.len(),
    })
}

/// Weights for every segment and horizon that has records.
pub fn learn_all_weights(
    backtest: &BacktestResult,
    segment_of: &BTreeMap<SeriesKey, SegmentId>,
    horizons: &[Horizon],
) -> Vec<EnsembleWeights> {
    let segments: BTreeSet<&SegmentId> = segment_of.values().collect();
    let jobs: Vec<(&SegmentId, Horizon)> =
        segments.into_iter().flat_map(|s| horizons.iter().map(move |&h| (s, h))).collect();
    jobs.par_iter()
        .filter_map(|&(s, h)| learn_weights(backtest, segment_of, s, h).ok())
        .collect()
}

/// Weighted point forecast; members without a value are dropped and the
/// remaining weights rescaled when `renormalize` is set.
pub fn blend_values(values: &BTreeMap<&str, f64>, weights: &BTreeMap<String, f64>, renormalize: bool) -> Result<f64> {
    let mut total = 0.0;
    let mut mass = 0.0;
    for (m, &w) in weights {
        match values.get(m.as_str()) {
            Some(&v) => {
                total += w * v;
                mass += w;
            }
            None if w > 0.0 && !renormalize => return Err(CoreError::MissingMember(m.clone())),
            None => {}
        }
    }
    if mass <= 0.0 {
        return Err(CoreError::MissingMember("no weighted member available".into()));
    }
    Ok((if renormalize { total / mass } else { total }).max(0.0))
}

fn combine_inner(members: &BTreeMap<String, ForecastSet>, weights: &[EnsembleWeights], renormalize: bool) -> Result<ForecastSet> {
    let first = members.values().next().ok_or(CoreError::EmptyInput("member forecasts"))?;
    for f in members.values() {
        let same_h = f.points.iter().map(|p| p.horizon).eq(first.points.iter().map(|p| p.horizon));
        if f.key != first.key || f.origin != first.origin || !same_h {
            return Err(invalid("members", "forecasts must share key, origin and horizons"));
        }
    }
    let mut points = Vec::with_capacity(first.points.len());
    for (i, p) in first.points.iter().enumerate() {
        let w = weights
            .iter()
            .find(|w| w.horizon == p.horizon)
            .ok_or_else(|| invalid("weights", format!("no weights for horizon {}", p.horizon)))?;
        let values: BTreeMap<&str, f64> = members.iter().map(|(m, f)| (m.as_str(), f.points[i].point)).collect();
        points.push(ForecastPoint::point_only(p.horizon, p.period, blend_values(&values, &w.weights, renormalize)?));
    }
    ForecastSet::new(first.key.clone(), first.origin, points, "ensemble")
}

/// Pointwise convex combination using each horizon's weights.
pub fn combine(members: &BTreeMap<String, ForecastSet>, weights: &[EnsembleWeights]) -> Result<ForecastSet> {
    combine_inner(members, weights, false)
}

/// Like [`combine`], but rescales over the members that are present.
pub fn combine_available(members: &BTreeMap<String, ForecastSet>, weights: &[EnsembleWeights]) -> Result<ForecastSet> {
    combine_inner(members, weights, true)
}

pub type WeightTable = BTreeMap<(SegmentId, Horizon), EnsembleWeights>;

pub fn weight_table(weights: Vec<EnsembleWeights>) -> WeightTable {
    weights.into_iter().map(|w| ((w.segment.clone(), w.horizon), w)).collect()
}

/// Residuals `actual − combined forecast` per segment and horizon.
pub fn combined_residuals(
    backtest: &BacktestResult,
    table: &WeightTable,
    segment_of: &BTreeMap<SeriesKey, SegmentId>,
) -> BTreeMap<(SegmentId, Horizon), Vec<f64>> {
    let mut rows: BTreeMap<(&SeriesKey, PeriodId, Horizon), (f64, BTreeMap<&str, f64>)> = BTreeMap::new();
    for r in &backtest.records {
        rows.entry((&r.key, r.origin, r.horizon))
            .or_insert_with(|| (r.actual, BTreeMap::new()))
            .1
            .insert(&r.model_id, r.forecast);
    }
    let mut out: BTreeMap<(SegmentId, Horizon), Vec<f64>> = BTreeMap::new();
    for ((key, _, h), (actual, values)) in rows {
        let Some(seg) = segment_of.get(key) else { continue };
        let Some(w) = table.get(&(seg.clone(), h)) else { continue };
        if let Ok(f) = blend_values(&values, &w.weights, true) {
            out.entry((seg.clone(), h)).or_default().push(actual - f);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalCalibration {
    pub segment: SegmentId,
    pub horizon: Horizon,
    pub level: f64,
    pub lower_offset: f64,
    pub upper_offset: f64,
    pub n_residuals: usize,
    pub pooled: bool,
}

impl IntervalCalibration {
    pub fn interval(&self, point: f64) -> (f64, f64) {
        ((point + self.lower_offset).max(0.0), point + self.upper_offset)
    }

    pub fn apply(&self, p: &ForecastPoint) -> ForecastPoint {
        let (lower, upper) = self.interval(p.point);
        ForecastPoint { lower: lower.min(p.point), upper, interval_level: self.level, ..*p }
    }
}

pub const MIN_CALIBRATION_RESIDUALS: usize = 20;

/// Central `level` quantile offsets, widened to contain zero.
pub fn residual_offsets<T: Real>(residuals: &[T], level: T) -> Result<(T, T)> {
    if !(level > T::zero() && level < T::one()) {
        return Err(invalid("level", "must be in (0, 1)"));
    }
    let mut sorted = residuals.to_vec();
    num::sort_floats(&mut sorted);
    let two = lit::<T>(2.0);
    let lo = num::quantile_sorted(&sorted, (T::one() - level) / two).ok_or(CoreError::EmptyInput("residuals"))?;
    let hi = num::quantile_sorted(&sorted, (T::one() + level) / two).ok_or(CoreError::EmptyInput("residuals"))?;
    Ok((lo.min(T::zero()), hi.max(T::zero())))
}

/// Per (segment, horizon) offsets; groups with fewer than
/// [`MIN_CALIBRATION_RESIDUALS`] residuals use the segment's residuals
/// pooled across horizons.
pub fn calibrate_intervals(
    residuals: &BTreeMap<(SegmentId, Horizon), Vec<f64>>,
    level: f64,
) -> Result<Vec<IntervalCalibration>> {
    if residuals.values().all(Vec::is_empty) {
        return Err(CoreError::EmptyInput("residuals"));
    }
    let mut pooled: BTreeMap<&SegmentId, Vec<f64>> = BTreeMap::new();
    for ((s, _), r) in residuals {
        pooled.entry(s).or_default().extend_from_slice(r);
    }
    residuals
        .iter()
        .filter(|(_, r)| !r.is_empty())
        .map(|((s, h), r)| {
            let use_pool = r.len() < MIN_CALIBRATION_RESIDUALS;
            let sample = if use_pool { &pooled[s] } else { r };
            let (lower_offset, upper_offset) = residual_offsets(sample, level)?;
            Ok(IntervalCalibration {
                segment: s.clone(),
                horizon: *h,
                level,
                lower_offset,
                upper_offset,
                n_residuals: sample.len(),
                pooled: use_pool,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftCheck {
    pub statistic: f64,
    pub flagged: bool,
}

pub const MIN_DRIFT_WINDOW: usize = 6;

/// Two-sigma mean-shift rule: the statistic is
/// `|mean(recent) − mean(reference)| / (σ_ref / √n_recent)` and the flag
/// is raised above 2.
pub fn drift_check<T: Real>(recent: &[T], reference: &[T]) -> Result<DriftCheck> {
    if recent.len() < MIN_DRIFT_WINDOW || reference.len() < MIN_DRIFT_WINDOW {
        return Err(CoreError::InsufficientHistory {
            needed: MIN_DRIFT_WINDOW,
            available: recent.len().min(reference.len()),
        });
    }
    let shift = (num::mean(recent).expect("non-empty") - num::mean(reference).expect("non-empty")).abs();
    let sd = num::sample_std(reference).unwrap_or(T::zero());
    let statistic = if shift == T::zero() {
        T::zero()
    } else if sd == T::zero() {
        T::infinity()
    } else {
        shift / (sd / num::from_usize::<T>(recent.len()).sqrt())
    };
    let statistic = statistic.to_f64().unwrap_or(f64::INFINITY);
    Ok(DriftCheck { statistic, flagged: statistic > 2.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::MonthlyObservation;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};
    use std::sync::Mutex;

    fn p(i: i64) -> PeriodId {
        PeriodId::new(2021, 1).unwrap().offset(i)
    }

    fn hs(n: u32) -> Vec<Horizon> {
        (1..=n).map(|h| Horizon::new(h).unwrap()).collect()
    }

    fn series(part: &str, values: &[f64]) -> DemandSeries {
        let obs = values
            .iter()
            .enumerate()
            .map(|(i, &v)| MonthlyObservation { period: p(i as i64), actuals: v, revenue: v, price: None })
            .collect();
        DemandSeries::new(SeriesKey::new("DE", part).unwrap(), obs).unwrap()
    }

    #[test]
    fn plan_examples() {
        let plan = make_plan(p(0), 48, 6, 0, &hs(3), 24).unwrap();
        assert_eq!(plan.origins, (39..45).map(p).collect::<Vec<_>>());
        let gapped = make_plan(p(0), 48, 6, 2, &hs(3), 24).unwrap();
        let o = gapped.origins[0];
        let evaluated: Vec<_> = gapped.horizons.iter().map(|&h| o.offset(gapped.lead(h) as i64)).collect();
        assert_eq!(evaluated, vec![o.offset(3), o.offset(4), o.offset(5)]);
        assert_eq!(*gapped.origins.last().unwrap(), p(42));
        assert!(matches!(make_plan(p(0), 48, 6, 0, &hs(3), 49), Err(CoreError::Infeasible(_))));
    }

    #[test]
    fn naive_on_constant_series_has_zero_error() {
        let map: BTreeMap<_, _> = [series("A", &[7.0; 36])].into_iter().map(|s| (s.key.clone(), s)).collect();
        let plan = make_plan(p(0), 36, 4, 1, &hs(3), 24).unwrap();
        let specs = vec![ModelSpec::new("seasonal_naive", crate::forecast::ModelFamily::SeasonalNaive, &[])];
        let bt = run_backtest(&map, &BTreeMap::new(), &plan, &specs, &BTreeMap::new()).unwrap();
        assert_eq!(bt.records.len(), 12);
        assert!(bt.records.iter().all(|r| r.error == 0.0));
    }

    #[test]
    fn croston_on_zero_series_is_skipped() {
        let map: BTreeMap<_, _> = [series("Z", &[0.0; 36])].into_iter().map(|s| (s.key.clone(), s)).collect();
        let plan = make_plan(p(0), 36, 3, 0, &hs(2), 24).unwrap();
        let specs = vec![ModelSpec::new("croston", crate::forecast::ModelFamily::Croston, &[("alpha", 0.1)])];
        let bt = run_backtest(&map, &BTreeMap::new(), &plan, &specs, &BTreeMap::new()).unwrap();
        assert!(bt.records.is_empty());
        assert_eq!(bt.skips.len(), 3);
    }

    #[test]
    fn audit_sees_only_training_data() {
        let vals: Vec<f64> = (0..40).map(|i| (i % 5) as f64).collect();
        let map: BTreeMap<_, _> = [series("A", &vals), series("B", &vals)].into_iter().map(|s| (s.key.clone(), s)).collect();
        let plan = make_plan(p(0), 40, 3, 1, &hs(2), 30).unwrap();
        let mut specs = crate::forecast::default_registry();
        for s in &mut specs {
            s.hyperparameters.insert("epochs".into(), 2.0);
        }
        let seen = Mutex::new(Vec::new());
        let audit = |m: &str, o: PeriodId, _: &SeriesKey, latest: PeriodId| seen.lock().unwrap().push((m.to_string(), o, latest));
        run_backtest_audited(&map, &BTreeMap::new(), &plan, &specs, &BTreeMap::new(), Some(&audit)).unwrap();
        let seen = seen.into_inner().unwrap();
        let models: BTreeSet<_> = seen.iter().map(|(m, _, _)| m.clone()).collect();
        assert_eq!(models.len(), specs.len());
        assert!(seen.iter().all(|(_, o, latest)| latest <= o));
        assert!(seen.iter().any(|(_, o, latest)| latest == o));
    }

    fn problem(cols: Vec<(&str, Vec<f64>)>, actuals: Vec<f64>) -> WeightProblem<f64> {
        let ids = cols.iter().map(|(m, _)| m.to_string()).collect();
        let rows = (0..actuals.len()).map(|r| cols.iter().map(|(_, c)| c[r]).collect()).collect();
        WeightProblem::new(ids, rows, actuals).unwrap()
    }

    #[test]
    fn weight_examples() {
        let a = vec![10.0, 20.0, 30.0];
        let exact = problem(vec![("a", a.clone()), ("b", vec![12.0, 25.0, 20.0])], a.clone());
        assert_eq!(exact.solve(), vec![1.0, 0.0]);
        let twins = problem(vec![("a", vec![9.0, 21.0, 33.0]), ("b", vec![9.0, 21.0, 33.0])], a.clone());
        assert_eq!(twins.solve(), vec![1.0, 0.0]);
        let plus: Vec<f64> = a.iter().map(|x| x + 10.0).collect();
        let minus: Vec<f64> = a.iter().map(|x| x - 10.0).collect();
        let sym = problem(vec![("a", plus), ("b", minus)], a);
        let w = sym.solve();
        assert!((w[0] - 0.5).abs() < 1e-12 && sym.wmape(&w) < 1e-12);
    }

    #[test]
    fn many_models_use_subgradient_and_beat_singles() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = Normal::new(0.0, 5.0).unwrap();
        let actuals: Vec<f64> = (0..60).map(|i| 50.0 + (i % 7) as f64).collect();
        let cols: Vec<(String, Vec<f64>)> = (0..6)
            .map(|m| (format!("m{m}"), actuals.iter().map(|a| a + noise.sample(&mut rng) + m as f64 - 2.5).collect()))
            .collect();
        let pr = problem(cols.iter().map(|(m, c)| (m.as_str(), c.clone())).collect(), actuals);
        let w = pr.solve();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9 && w.iter().all(|&x| x >= 0.0));
        assert!(pr.wmape(&w) <= pr.best_single().1);
    }

    #[test]
    fn combine_examples() {
        let key = SeriesKey::new("DE", "P").unwrap();
        let h = Horizon::new(1).unwrap();
        let set = |m: &str, v: f64| {
            ForecastSet::new(key.clone(), p(0), vec![ForecastPoint::point_only(h, p(1), v)], m).unwrap()
        };
        let members: BTreeMap<String, ForecastSet> = [("a".to_string(), set("a", 10.0)), ("b".to_string(), set("b", 20.0))].into();
        let w = |pairs: &[(&str, f64)]| EnsembleWeights {
            segment: SegmentId::Cluster(0),
            horizon: h,
            weights: pairs.iter().map(|(m, x)| (m.to_string(), *x)).collect(),
            validation_wmape: 0.0,
            best_single_model: "a".into(),
            best_single_wmape: 0.0,
            n_records: 1,
        };
        assert_eq!(combine(&members, &[w(&[("a", 1.0)])]).unwrap().points[0].point, 10.0);
        assert_eq!(combine(&members, &[w(&[("a", 0.5), ("b", 0.5)])]).unwrap().points[0].point, 15.0);
        let only_a: BTreeMap<String, ForecastSet> = [("a".to_string(), set("a", 10.0))].into();
        assert!(matches!(combine(&only_a, &[w(&[("a", 0.5), ("b", 0.5)])]), Err(CoreError::MissingMember(_))));
        assert_eq!(combine_available(&only_a, &[w(&[("a", 0.5), ("b", 0.5)])]).unwrap().points[0].point, 10.0);
    }

    #[test]
    fn interval_examples() {
        let r: Vec<f64> = [-2.0, -1.0, 0.0, 1.0, 2.0].iter().flat_map(|&x| std::iter::repeat_n(x, 20)).collect();
        assert_eq!(residual_offsets(&r, 0.8).unwrap(), (-2.0, 2.0));
        assert_eq!(residual_offsets(&[0.0; 30], 0.8).unwrap(), (0.0, 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = Normal::new(0.0, 5.0).unwrap();
        let train: Vec<f64> = (0..1000).map(|_| n.sample(&mut rng)).collect();
        let test: Vec<f64> = (0..1000).map(|_| n.sample(&mut rng)).collect();
        let (lo, hi) = residual_offsets(&train, 0.8).unwrap();
        let cover = test.iter().filter(|&&e| e >= lo && e <= hi).count() as f64 / 1000.0;
        assert!((0.75..=0.85).contains(&cover), "{cover}");
    }

    #[test]
    fn calibration_pools_small_groups() {
        let seg = SegmentId::Cluster(1);
        let mut res = BTreeMap::new();
        res.insert((seg.clone(), Horizon::new(1).unwrap()), vec![1.0; 5]);
        res.insert((seg.clone(), Horizon::new(2).unwrap()), (0..25).map(|i| i as f64 - 12.0).collect());
        let cal = calibrate_intervals(&res, 0.8).unwrap();
        assert!(cal[0].pooled && cal[0].n_residuals == 30);
        assert!(!cal[1].pooled && cal[1].n_residuals == 25);
        assert!(calibrate_intervals(&BTreeMap::new(), 0.8).is_err());
    }

    #[test]
    fn drift_examples() {
        let same = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(drift_check(&same, &same).unwrap(), DriftCheck { statistic: 0.0, flagged: false });
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = Normal::new(0.0, 1.0).unwrap();
        let raw: Vec<f64> = (0..100).map(|_| n.sample(&mut rng)).collect();
        let (m, s) = (num::mean(&raw).unwrap(), num::sample_std(&raw).unwrap());
        let reference: Vec<f64> = raw.iter().map(|x| (x - m) / s).collect();
        assert!(drift_check(&[5.0; 10], &reference).unwrap().flagged);
        let small = drift_check(&[0.1; 10], &reference).unwrap();
        assert!(!small.flagged && (small.statistic - 0.1 * 10f64.sqrt()).abs() < 1e-9);
        assert!(drift_check(&[1.0; 5], &reference).is_err());
    }

    #[test]
    fn segment_id_round_trip() {
        for s in [SegmentId::Key(SeriesKey::new("DE", "P1").unwrap()), SegmentId::Band(PriceBand::High), SegmentId::Cluster(4)] {
            assert_eq!(s.to_string().parse::<SegmentId>().unwrap(), s);
            let json = serde_json::to_string(&s).unwrap();
            assert_eq!(serde_json::from_str::<SegmentId>(&json).unwrap(), s);
        }
    }

    fn grid_oracle(pr: &WeightProblem<f64>) -> f64 {
        simplex_grid(pr.model_ids.len(), 100)
            .iter()
            .map(|c| pr.wmape(&c.iter().map(|&u| u as f64 / 100.0).collect::<Vec<_>>()))
            .fold(f64::INFINITY, f64::min)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn solver_is_on_simplex_and_near_grid(
            m in 1usize..=3,
            rows in prop::collection::vec((1.0f64..100.0, prop::collection::vec(0.0f64..150.0, 3)), 1..25),
        ) {
            let actuals: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let forecasts: Vec<Vec<f64>> = rows.iter().map(|r| r.1[..m].to_vec()).collect();
            let ids = (0..m).map(|i| format!("m{i}")).collect();
            let pr = WeightProblem::new(ids, forecasts, actuals).unwrap();
            let w = pr.solve();
            prop_assert!(w.iter().all(|&x| x >= 0.0));
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            let v = pr.wmape(&w);
            prop_assert!(v <= pr.best_single().1 + 1e-12);
            prop_assert!(v <= grid_oracle(&pr) + 0.01);
        }

        #[test]
        fn intervals_nest_with_level(res in prop::collection::vec(-50.0f64..50.0, 1..80)) {
            let (a, b) = residual_offsets(&res, 0.5).unwrap();
            let (c, d) = residual_offsets(&res, 0.8).unwrap();
            let (e, f) = residual_offsets(&res, 0.95).unwrap();
            prop_assert!(e <= c && c <= a && a <= 0.0);
            prop_assert!(0.0 <= b && b <= d && d <= f);
        }

        #[test]
        fn combination_is_convex(vals in prop::collection::vec(0.0f64..100.0, 2..5), raw in prop::collection::vec(0.01f64..1.0, 5)) {
            let key = SeriesKey::new("DE", "P").unwrap();
            let h = Horizon::new(1).unwrap();
            let mut weights = BTreeMap::new();
            let mut members = BTreeMap::new();
            let total: f64 = raw[..vals.len()].iter().sum();
            for (i, v) in vals.iter().enumerate() {
                let id = format!("m{i}");
                members.insert(id.clone(), ForecastSet::new(key.clone(), p(0), vec![ForecastPoint::point_only(h, p(1), *v)], &id).unwrap());
                weights.insert(id, raw[i] / total);
            }
            let w = EnsembleWeights { segment: SegmentId::Cluster(0), horizon: h, weights, validation_wmape: 0.0, best_single_model: String::new(), best_single_wmape: 0.0, n_records: 0 };
            let out = combine(&members, &[w]).unwrap().points[0].point;
            let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(out >= lo - 1e-9 && out <= hi + 1e-9);
        }
    }
}
