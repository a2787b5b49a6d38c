//! Accuracy scorecard: point metrics, tolerance shares, error bands,
//! rankings, risk/win lists and revenue-bin diagnostics. All percentages
//! are carried as fractions.

use crate::domain::SeriesKey;
use crate::error::{invalid, CoreError, Result};
use crate::num::{self, Real};
use crate::period::PeriodId;
use crate::segmentation::SizeClass;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// One evaluated month of one series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub key: SeriesKey,
    pub period: PeriodId,
    pub actual: f64,
    pub forecast: f64,
    pub revenue: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointMetrics {
    pub n: usize,
    pub mape: Option<f64>,
    pub wmape: Option<f64>,
    pub bias_pct: Option<f64>,
    pub over_pct: Option<f64>,
    pub under_pct: Option<f64>,
    pub coverage: f64,
    pub abs_error_p50: f64,
    pub abs_error_p90: f64,
    pub abs_error_p95: f64,
}

/// Absolute percentage error; undefined when the actual is not positive.
pub fn ape<T: Real>(actual: T, forecast: T) -> Option<T> {
    (actual > T::zero()).then(|| (actual - forecast).abs() / actual)
}

/// Metrics over `(actual, forecast)` pairs. MAPE skips non-positive
/// actuals, WMAPE and bias need a positive actuals total.
pub fn point_metrics<T: Real>(records: &[(T, T)]) -> Result<PointMetrics> {
    if records.is_empty() {
        return Err(CoreError::EmptyInput("records"));
    }
    let apes: Vec<T> = records.iter().filter_map(|&(a, f)| ape(a, f)).collect();
    let total = num::compensated_sum(records.iter().map(|r| r.0));
    let abs_err: Vec<T> = records.iter().map(|&(a, f)| (a - f).abs()).collect();
    let over = num::compensated_sum(records.iter().map(|&(a, f)| (f - a).max(T::zero())));
    let under = num::compensated_sum(records.iter().map(|&(a, f)| (a - f).max(T::zero())));
    let per_total = |x: T| (total > T::zero()).then(|| (x / total).to_f64().unwrap_or(f64::NAN));
    let mut sorted = abs_err.clone();
    num::sort_floats(&mut sorted);
    let q = |p: f64| num::quantile_sorted(&sorted, num::lit(p)).and_then(|v| v.to_f64()).unwrap_or(0.0);
    Ok(PointMetrics {
        n: records.len(),
        mape: num::mean(&apes).and_then(|m| m.to_f64()),
        wmape: per_total(num::compensated_sum(abs_err.iter().copied())),
        bias_pct: per_total(over - under),
        over_pct: per_total(over),
        under_pct: per_total(-under),
        coverage: apes.len() as f64 / records.len() as f64,
        abs_error_p50: q(0.5),
        abs_error_p90: q(0.9),
        abs_error_p95: q(0.95),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityLevel {
    Key,
    Country,
    Material,
}

impl EntityLevel {
    pub fn entity_of(self, key: &SeriesKey) -> String {
        match self {
            EntityLevel::Key => key.to_string(),
            EntityLevel::Country => key.country.clone(),
            EntityLevel::Material => key.part.clone(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EntityLevel::Key => "key",
            EntityLevel::Country => "country",
            EntityLevel::Material => "material",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub entity: String,
    /// Mean of monthly APEs.
    pub mape: Option<f64>,
    pub median_ape: Option<f64>,
    /// Monthly APEs weighted by monthly revenue.
    pub revenue_weighted_mape: Option<f64>,
    pub wmape: Option<f64>,
    pub bias_pct: Option<f64>,
    pub actuals: f64,
    pub revenue: f64,
    pub coverage: f64,
    pub n_periods: usize,
}

/// Per-entity rows, aggregating series to `(entity, month)` first.
pub fn entity_rows(records: &[EvalRecord], level: EntityLevel) -> Vec<MetricRow> {
    let mut cells: BTreeMap<String, BTreeMap<PeriodId, (f64, f64, f64)>> = BTreeMap::new();
    for r in records {
        let c = cells.entry(level.entity_of(&r.key)).or_default().entry(r.period).or_default();
        c.0 += r.actual;
        c.1 += r.forecast;
        c.2 += r.revenue;
    }
    cells
        .into_iter()
        .map(|(entity, months)| {
            let pairs: Vec<(f64, f64)> = months.values().map(|c| (c.0, c.1)).collect();
            let m = point_metrics(&pairs).expect("entity has at least one month");
            let apes: Vec<(f64, f64)> = months.values().filter_map(|c| ape(c.0, c.1).map(|e| (e, c.2))).collect();
            let only: Vec<f64> = apes.iter().map(|p| p.0).collect();
            let rev_ape: f64 = apes.iter().map(|p| p.1).sum();
            MetricRow {
                entity,
                mape: m.mape,
                median_ape: num::median(&only),
                revenue_weighted_mape: (rev_ape > 0.0).then(|| apes.iter().map(|(e, r)| e * r).sum::<f64>() / rev_ape),
                wmape: m.wmape,
                bias_pct: m.bias_pct,
                actuals: num::compensated_sum(months.values().map(|c| c.0)),
                revenue: num::compensated_sum(months.values().map(|c| c.2)),
                coverage: m.coverage,
                n_periods: months.len(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToleranceShares {
    pub deviation: f64,
    pub by_count: f64,
    pub by_revenue: f64,
}

/// Share of entities with `wmape ≤ deviation`, by count and by revenue.
/// Entities without a defined WMAPE count as outside the tolerance.
pub fn tolerance_shares(entities: &[(Option<f64>, f64)], deviation: f64) -> Result<ToleranceShares> {
    if entities.is_empty() {
        return Err(CoreError::EmptyInput("entities"));
    }
    let within = |w: &Option<f64>| w.is_some_and(|w| w <= deviation);
    let count = entities.iter().filter(|e| within(&e.0)).count();
    let total_rev = num::compensated_sum(entities.iter().map(|e| e.1));
    let ok_rev = num::compensated_sum(entities.iter().filter(|e| within(&e.0)).map(|e| e.1));
    Ok(ToleranceShares {
        deviation,
        by_count: count as f64 / entities.len() as f64,
        by_revenue: if total_rev > 0.0 { ok_rev / total_rev } else { 0.0 },
    })
}

pub const BAND_EDGES: [f64; 3] = [0.10, 0.20, 0.40];
pub const BAND_LABELS: [&str; 4] = ["<10%", "10-20%", "20-40%", ">40%"];

/// Left-closed band index.
pub fn band_of<T: Real>(mape: T) -> usize {
    BAND_EDGES.iter().take_while(|&&e| mape >= num::lit(e)).count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandDistribution {
    pub shares: [f64; 4],
    pub counts: [usize; 4],
    pub denominator_count: usize,
    pub total_count: usize,
    /// Fraction of entities with a defined MAPE.
    pub coverage_note: f64,
}

pub fn band_distribution(mapes: &[Option<f64>]) -> BandDistribution {
    let mut counts = [0usize; 4];
    for m in mapes.iter().flatten() {
        counts[band_of(*m)] += 1;
    }
    let defined: usize = counts.iter().sum();
    let shares = counts.map(|c| if defined > 0 { c as f64 / defined as f64 } else { 0.0 });
    BandDistribution {
        shares,
        counts,
        denominator_count: defined,
        total_count: mapes.len(),
        coverage_note: if mapes.is_empty() { 0.0 } else { defined as f64 / mapes.len() as f64 },
    }
}

pub fn band_distribution_by<G: Ord + Clone>(rows: &[(G, Option<f64>)]) -> BTreeMap<G, BandDistribution> {
    let mut groups: BTreeMap<G, Vec<Option<f64>>> = BTreeMap::new();
    for (g, m) in rows {
        groups.entry(g.clone()).or_default().push(*m);
    }
    groups.into_iter().map(|(g, m)| (g, band_distribution(&m))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankMetric {
    Wmape,
    Mape,
    MedianApe,
    RevenueWeightedMape,
}

impl RankMetric {
    pub fn value(self, row: &MetricRow) -> Option<f64> {
        match self {
            RankMetric::Wmape => row.wmape,
            RankMetric::Mape => row.mape,
            RankMetric::MedianApe => row.median_ape,
            RankMetric::RevenueWeightedMape => row.revenue_weighted_mape,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RankMetric::Wmape => "wmape",
            RankMetric::Mape => "mape",
            RankMetric::MedianApe => "median_ape",
            RankMetric::RevenueWeightedMape => "revenue_weighted_mape",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub entity: String,
    pub value: f64,
    pub revenue: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub level: EntityLevel,
    pub metric: RankMetric,
    /// Lowest error first.
    pub top: Vec<RankedEntry>,
    /// Highest error first.
    pub bottom: Vec<RankedEntry>,
}

/// Ascending and descending top-`n` by `metric`; ties by entity id.
pub fn entity_ranking(rows: &[MetricRow], level: EntityLevel, metric: RankMetric, n: usize) -> Ranking {
    let mut defined: Vec<RankedEntry> = rows
        .iter()
        .filter_map(|r| metric.value(r).map(|value| RankedEntry { entity: r.entity.clone(), value, revenue: r.revenue }))
        .collect();
    defined.sort_by(|a, b| a.value.total_cmp(&b.value).then_with(|| a.entity.cmp(&b.entity)));
    let top = defined.iter().take(n).cloned().collect();
    defined.sort_by(|a, b| b.value.total_cmp(&a.value).then_with(|| a.entity.cmp(&b.entity)));
    let bottom = defined.into_iter().take(n).collect();
    Ranking { level, metric, top, bottom }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlaggedEntity {
    pub entity: String,
    pub revenue: f64,
    pub mape: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskWin {
    pub revenue_gate: f64,
    pub mape_threshold: f64,
    pub risk: Vec<FlaggedEntity>,
    pub win: Vec<FlaggedEntity>,
}

/// Entities at or above the revenue percentile, split by MAPE threshold.
pub fn flag_risk_win(rows: &[MetricRow], revenue_pctile: f64, mape_threshold: f64) -> RiskWin {
    let revenues: Vec<f64> = rows.iter().map(|r| r.revenue).collect();
    let gate = num::quantile(&revenues, revenue_pctile).unwrap_or(f64::INFINITY);
    let mut risk = Vec::new();
    let mut win = Vec::new();
    for r in rows.iter().filter(|r| r.revenue >= gate) {
        if let Some(m) = r.mape {
            let e = FlaggedEntity { entity: r.entity.clone(), revenue: r.revenue, mape: m };
            if m > mape_threshold { risk.push(e) } else { win.push(e) }
        }
    }
    let order = |a: &FlaggedEntity, b: &FlaggedEntity| b.revenue.total_cmp(&a.revenue).then_with(|| a.entity.cmp(&b.entity));
    risk.sort_by(order);
    win.sort_by(order);
    RiskWin { revenue_gate: gate, mape_threshold, risk, win }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinRow {
    pub bin: usize,
    pub lower: f64,
    pub upper: f64,
    pub avg_mape: Option<f64>,
    pub material_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinDeviation {
    pub country: String,
    pub bin: usize,
    pub avg_mape: Option<f64>,
    pub deviation: Option<f64>,
    pub material_count: usize,
    pub low_support: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevenueBins {
    pub edges: Vec<f64>,
    pub bins: Vec<BinRow>,
    pub country_deviation: Vec<BinDeviation>,
}

pub const MIN_BIN_SUPPORT: usize = 3;

/// Bins are `[e_i, e_{i+1})` with the last one closed.
pub fn revenue_bin_index(edges: &[f64], revenue: f64) -> Option<usize> {
    let last = edges.len().checked_sub(2)?;
    if revenue < edges[0] || revenue > edges[last + 1] {
        return None;
    }
    Some(edges[1..=last].iter().take_while(|&&e| revenue >= e).count())
}

/// Quartile edges of the revenues.
pub fn quartile_edges(revenues: &[f64]) -> Vec<f64> {
    let mut e: Vec<f64> = [0.0, 0.25, 0.5, 0.75, 1.0]
        .iter()
        .filter_map(|&q| num::quantile(revenues, q))
        .collect();
    e.dedup();
    if e.len() == 1 {
        e.push(e[0]);
    }
    e
}

/// `materials` are `(country, mape, revenue)` per material.
pub fn revenue_bin_analysis(materials: &[(String, Option<f64>, f64)], edges: &[f64]) -> Result<RevenueBins> {
    if edges.len() < 2 || edges.windows(2).any(|w| w[0] > w[1]) {
        return Err(invalid("edges", "need at least two ascending edges"));
    }
    let n_bins = edges.len() - 1;
    let mut overall: Vec<(usize, Vec<f64>)> = vec![(0, Vec::new()); n_bins];
    let mut by_country: BTreeMap<&str, Vec<(usize, Vec<f64>)>> = BTreeMap::new();
    for (country, mape, revenue) in materials {
        let b = revenue_bin_index(edges, *revenue)
            .ok_or_else(|| invalid("edges", format!("revenue {revenue} outside the bins")))?;
        let c = &mut by_country.entry(country).or_insert_with(|| vec![(0, Vec::new()); n_bins])[b];
        overall[b].0 += 1;
        c.0 += 1;
        if let Some(m) = mape {
            overall[b].1.push(*m);
            c.1.push(*m);
        }
    }
    let bins: Vec<BinRow> = overall
        .iter()
        .enumerate()
        .map(|(i, (n, m))| BinRow { bin: i, lower: edges[i], upper: edges[i + 1], avg_mape: num::mean(m), material_count: *n })
        .collect();
    let mut country_deviation = Vec::new();
    for (country, cells) in by_country {
        for (i, (n, m)) in cells.iter().enumerate() {
            let Some(all) = bins[i].avg_mape.filter(|_| *n > 0) else { continue };
            let avg = num::mean(m);
            country_deviation.push(BinDeviation {
                country: country.to_string(),
                bin: i,
                avg_mape: avg,
                deviation: avg.map(|a| a - all),
                material_count: *n,
                low_support: *n < MIN_BIN_SUPPORT,
            });
        }
    }
    Ok(RevenueBins { edges: edges.to_vec(), bins, country_deviation })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub metrics: PointMetrics,
    pub n_entities: usize,
    pub mean_entity_mape: Option<f64>,
    pub median_entity_mape: Option<f64>,
    pub median_entity_wmape: Option<f64>,
}

pub fn summarize(records: &[EvalRecord], rows: &[MetricRow]) -> Result<Summary> {
    let pairs: Vec<(f64, f64)> = records.iter().map(|r| (r.actual, r.forecast)).collect();
    let mapes: Vec<f64> = rows.iter().filter_map(|r| r.mape).collect();
    let wmapes: Vec<f64> = rows.iter().filter_map(|r| r.wmape).collect();
    Ok(Summary {
        metrics: point_metrics(&pairs)?,
        n_entities: rows.len(),
        mean_entity_mape: num::mean(&mapes),
        median_entity_mape: num::median(&mapes),
        median_entity_wmape: num::median(&wmapes),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilteredSummary {
    pub primary: Option<Summary>,
    pub context: Summary,
    pub filtered_entities: usize,
    pub filter_matched_nothing: bool,
}

pub const MIN_EVALUATED_MONTHS: usize = 6;
pub const MIN_COVERAGE: f64 = 0.5;

pub fn default_filter(row: &MetricRow) -> bool {
    row.n_periods >= MIN_EVALUATED_MONTHS && row.coverage >= MIN_COVERAGE
}

/// Summary over key-level entities passing `keep`, with the unfiltered
/// summary alongside for context.
pub fn filtered_summary(records: &[EvalRecord], keep: impl Fn(&MetricRow) -> bool) -> Result<FilteredSummary> {
    let rows = entity_rows(records, EntityLevel::Key);
    let context = summarize(records, &rows)?;
    let kept_rows: Vec<MetricRow> = rows.into_iter().filter(|r| keep(r)).collect();
    let kept: BTreeSet<&str> = kept_rows.iter().map(|r| r.entity.as_str()).collect();
    let kept_records: Vec<EvalRecord> =
        records.iter().filter(|r| kept.contains(r.key.to_string().as_str())).cloned().collect();
    let primary = if kept_records.is_empty() { None } else { Some(summarize(&kept_records, &kept_rows)?) };
    Ok(FilteredSummary {
        filter_matched_nothing: primary.is_none(),
        primary,
        context,
        filtered_entities: kept_rows.len(),
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scope {
    #[serde(default)]
    pub countries: Vec<String>,
    #[serde(default)]
    pub parts: Vec<String>,
}

impl Scope {
    pub fn contains(&self, key: &SeriesKey) -> bool {
        (self.countries.is_empty() || self.countries.contains(&key.country))
            && (self.parts.is_empty() || self.parts.contains(&key.part))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorecardRequest {
    pub window_months: usize,
    /// Fraction, e.g. 0.2 for 20%.
    pub deviation: f64,
    pub include_revenue_views: bool,
    pub top_n: usize,
    pub revenue_pctile: f64,
}

impl Default for ScorecardRequest {
    fn default() -> Self {
        Self { window_months: 6, deviation: 0.2, include_revenue_views: true, top_n: 5, revenue_pctile: 0.8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasDirection {
    OverForecast,
    UnderForecast,
    Neutral,
}

impl BiasDirection {
    pub fn of(bias: Option<f64>) -> Self {
        match bias {
            Some(b) if b > 0.0 => BiasDirection::OverForecast,
            Some(b) if b < 0.0 => BiasDirection::UnderForecast,
            _ => BiasDirection::Neutral,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BiasDirection::OverForecast => "over-forecast",
            BiasDirection::UnderForecast => "under-forecast",
            BiasDirection::Neutral => "neutral",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scorecard {
    pub window_start: PeriodId,
    pub window_end: PeriodId,
    pub window_months: usize,
    pub deviation: f64,
    pub summary: FilteredSummary,
    pub bias_direction: BiasDirection,
    pub tolerance: ToleranceShares,
    pub bands_overall: BandDistribution,
    pub bands_by_country: BTreeMap<String, BandDistribution>,
    pub bands_by_size_class: BTreeMap<String, BandDistribution>,
    pub keys: Vec<MetricRow>,
    pub countries: Vec<MetricRow>,
    pub materials: Vec<MetricRow>,
    pub rankings: Vec<Ranking>,
    pub risk_win: RiskWin,
    pub revenue_bins: Option<RevenueBins>,
    pub total_revenue: f64,
}

/// Distinct evaluated months, ascending.
pub fn evaluated_months(records: &[EvalRecord]) -> Vec<PeriodId> {
    records.iter().map(|r| r.period).collect::<BTreeSet<_>>().into_iter().collect()
}

/// Scorecard over the last `window_months` evaluated months. Material
/// level rows (per key) feed bands, risk/win and revenue bins.
pub fn compute_scorecard(
    records: &[EvalRecord],
    request: &ScorecardRequest,
    size_classes: &BTreeMap<SeriesKey, SizeClass>,
) -> Result<Scorecard> {
    if !(request.deviation > 0.0) {
        return Err(invalid("deviation_pct", "must be positive"));
    }
    let months = evaluated_months(records);
    if request.window_months == 0 || request.window_months > months.len() {
        return Err(invalid(
            "window_months",
            format!("{} outside 1..={} evaluated months", request.window_months, months.len()),
        ));
    }
    let window = &months[months.len() - request.window_months..];
    let (start, end) = (window[0], window[window.len() - 1]);
    let records: Vec<EvalRecord> = records.iter().filter(|r| r.period >= start).cloned().collect();
    let keys = entity_rows(&records, EntityLevel::Key);
    let countries = entity_rows(&records, EntityLevel::Country);
    let materials = entity_rows(&records, EntityLevel::Material);
    let summary = filtered_summary(&records, default_filter)?;
    let key_of: BTreeMap<String, SeriesKey> = records.iter().map(|r| (r.key.to_string(), r.key.clone())).collect();

    let tolerance = tolerance_shares(&keys.iter().map(|r| (r.wmape, r.revenue)).collect::<Vec<_>>(), request.deviation)?;
    let bands_overall = band_distribution(&keys.iter().map(|r| r.mape).collect::<Vec<_>>());
    let bands_by_country =
        band_distribution_by(&keys.iter().map(|r| (key_of[&r.entity].country.clone(), r.mape)).collect::<Vec<_>>());
    let bands_by_size_class = band_distribution_by(
        &keys
            .iter()
            .filter_map(|r| size_classes.get(&key_of[&r.entity]).map(|s| (s.as_str().to_string(), r.mape)))
            .collect::<Vec<_>>(),
    );

    let mut metrics = vec![RankMetric::Wmape, RankMetric::Mape, RankMetric::MedianApe];
    if request.include_revenue_views {
        metrics.push(RankMetric::RevenueWeightedMape);
    }
    let mut rankings = Vec::new();
    for (level, rows) in [(EntityLevel::Country, &countries), (EntityLevel::Material, &materials)] {
        for &m in &metrics {
            rankings.push(entity_ranking(rows, level, m, request.top_n));
        }
    }
    let risk_win = flag_risk_win(&keys, request.revenue_pctile, request.deviation);
    let revenue_bins = if request.include_revenue_views {
        let rows: Vec<(String, Option<f64>, f64)> =
            keys.iter().map(|r| (key_of[&r.entity].country.clone(), r.mape, r.revenue)).collect();
        let edges = quartile_edges(&rows.iter().map(|r| r.2).collect::<Vec<_>>());
        Some(revenue_bin_analysis(&rows, &edges)?)
    } else {
        None
    };
    Ok(Scorecard {
        window_start: start,
        window_end: end,
        window_months: request.window_months,
        deviation: request.deviation,
        bias_direction: BiasDirection::of(summary.context.metrics.bias_pct),
        summary,
        tolerance,
        bands_overall,
        bands_by_country,
        bands_by_size_class,
        total_revenue: num::compensated_sum(records.iter().map(|r| r.revenue)),
        keys,
        countries,
        materials,
        rankings,
        risk_win,
        revenue_bins,
    })
}
