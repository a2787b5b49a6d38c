//! Domain types shared across the engine: series keys, monthly
//! observations, exogenous frames and forecast containers.

use crate::error::{invalid, CoreError, Result};
use crate::period::PeriodId;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

pub const DEFAULT_MAX_HORIZON: u32 = 18;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SeriesKey {
    pub country: String,
    pub part: String,
}

impl SeriesKey {
    pub fn new(country: impl Into<String>, part: impl Into<String>) -> Result<Self> {
        let (country, part) = (country.into(), part.into());
        if country.trim().is_empty() || part.trim().is_empty() {
            return Err(invalid("series_key", "country and part must be non-empty"));
        }
        Ok(Self { country, part })
    }
}

impl fmt::Display for SeriesKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.country, self.part)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonthlyObservation {
    pub period: PeriodId,
    pub actuals: f64,
    pub revenue: f64,
    pub price: Option<f64>,
}

impl MonthlyObservation {
    /// Zero-demand record used to materialize gaps.
    pub fn zero(period: PeriodId) -> Self {
        Self {
            period,
            actuals: 0.0,
            revenue: 0.0,
            price: None,
        }
    }
}

/// Monthly history for one (country, part).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandSeries {
    pub key: SeriesKey,
    observations: Vec<MonthlyObservation>,
}

impl DemandSeries {
    /// Requires at least one observation and strictly increasing periods.
    /// Contiguity is not enforced here; see [`validate_series`].
    pub fn new(key: SeriesKey, observations: Vec<MonthlyObservation>) -> Result<Self> {
        if observations.is_empty() {
            return Err(CoreError::EmptyInput("series observations"));
        }
        if observations.windows(2).any(|w| w[0].period >= w[1].period) {
            return Err(invalid("observations", "periods must be strictly increasing"));
        }
        Ok(Self { key, observations })
    }

    /// Builds a contiguous series, inserting zero-demand records for missing
    /// months.
    pub fn with_filled_gaps(key: SeriesKey, mut observations: Vec<MonthlyObservation>) -> Result<Self> {
        observations.sort_by_key(|o| o.period);
        if observations.windows(2).any(|w| w[0].period == w[1].period) {
            return Err(invalid("observations", "duplicate period"));
        }
        let mut filled = Vec::with_capacity(observations.len());
        for obs in observations {
            if let Some(last) = filled.last().map(|o: &MonthlyObservation| o.period) {
                let mut p = last.succ();
                while p < obs.period {
                    filled.push(MonthlyObservation::zero(p));
                    p = p.succ();
                }
            }
            filled.push(obs);
        }
        Self::new(key, filled)
    }

    pub fn observations(&self) -> &[MonthlyObservation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn first_period(&self) -> PeriodId {
        self.observations[0].period
    }

    pub fn last_period(&self) -> PeriodId {
        self.observations[self.observations.len() - 1].period
    }

    pub fn actuals(&self) -> Vec<f64> {
        self.observations.iter().map(|o| o.actuals).collect()
    }

    pub fn revenues(&self) -> Vec<f64> {
        self.observations.iter().map(|o| o.revenue).collect()
    }

    pub fn total_revenue(&self) -> f64 {
        crate::num::compensated_sum(self.observations.iter().map(|o| o.revenue))
    }

    pub fn get(&self, period: PeriodId) -> Option<&MonthlyObservation> {
        self.observations
            .binary_search_by_key(&period, |o| o.period)
            .ok()
            .map(|i| &self.observations[i])
    }

    /// Prefix of the series up to and including `origin`.
    pub fn truncated_through(&self, origin: PeriodId) -> Option<DemandSeries> {
        let n = self.observations.partition_point(|o| o.period <= origin);
        (n > 0).then(|| DemandSeries {
            key: self.key.clone(),
            observations: self.observations[..n].to_vec(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    None,
    Shock,
    Restriction,
    Recovery,
}

impl Regime {
    pub const ALL: [Regime; 4] = [Regime::None, Regime::Shock, Regime::Restriction, Regime::Recovery];

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::None => "none",
            Regime::Shock => "shock",
            Regime::Restriction => "restriction",
            Regime::Recovery => "recovery",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl FromStr for Regime {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Regime::ALL
            .into_iter()
            .find(|r| r.as_str() == s.trim())
            .ok_or_else(|| format!("unknown regime {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lifecycle {
    Launch,
    Growth,
    Mature,
    Decline,
    Obsolete,
}

impl Lifecycle {
    pub const ALL: [Lifecycle; 5] = [
        Lifecycle::Launch,
        Lifecycle::Growth,
        Lifecycle::Mature,
        Lifecycle::Decline,
        Lifecycle::Obsolete,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Lifecycle::Launch => "launch",
            Lifecycle::Growth => "growth",
            Lifecycle::Mature => "mature",
            Lifecycle::Decline => "decline",
            Lifecycle::Obsolete => "obsolete",
        }
    }

    /// launch = 0 ... obsolete = 4
    pub fn ordinal(self) -> u32 {
        self as u32
    }
}

impl FromStr for Lifecycle {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Lifecycle::ALL
            .into_iter()
            .find(|l| l.as_str() == s.trim())
            .ok_or_else(|| format!("unknown lifecycle {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExogenousFrame {
    pub period: PeriodId,
    pub regime: Regime,
    pub months_since_regime_start: u32,
    pub lifecycle: Lifecycle,
    pub holiday_count: u32,
    pub macro_index: f64,
}

impl ExogenousFrame {
    pub fn default_at(period: PeriodId, macro_index: f64) -> Self {
        Self {
            period,
            regime: Regime::None,
            months_since_regime_start: 0,
            lifecycle: Lifecycle::Mature,
            holiday_count: 0,
            macro_index,
        }
    }
}

/// Frame for `period`, or the default fill (regime none, lifecycle mature,
/// macro index carried forward from the latest earlier frame).
pub fn frame_at(exog: &[ExogenousFrame], period: PeriodId) -> ExogenousFrame {
    let idx = exog.partition_point(|f| f.period <= period);
    if idx > 0 && exog[idx - 1].period == period {
        return exog[idx - 1];
    }
    let carried = if idx > 0 { exog[idx - 1].macro_index } else { 0.0 };
    ExogenousFrame::default_at(period, carried)
}

/// Pairs every observation with its exogenous frame. `exog` must be sorted by
/// period.
pub fn align_frames(
    series: &DemandSeries,
    exog: &[ExogenousFrame],
) -> Vec<(MonthlyObservation, ExogenousFrame)> {
    series
        .observations()
        .iter()
        .map(|o| (*o, frame_at(exog, o.period)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SeriesDefect {
    Gap { missing: PeriodId },
    NegativeActuals { period: PeriodId },
    NegativeRevenue { period: PeriodId },
    PriceOnZeroDemand { period: PeriodId },
}

impl fmt::Display for SeriesDefect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SeriesDefect::Gap { missing } => write!(f, "gap at {missing}"),
            SeriesDefect::NegativeActuals { period } => write!(f, "negative actuals at {period}"),
            SeriesDefect::NegativeRevenue { period } => write!(f, "negative revenue at {period}"),
            SeriesDefect::PriceOnZeroDemand { period } => {
                write!(f, "price on zero-demand period {period}")
            }
        }
    }
}

/// Reports data defects without touching the series.
pub fn validate_series(series: &DemandSeries) -> Vec<SeriesDefect> {
    let obs = series.observations();
    let mut defects = Vec::new();
    for w in obs.windows(2) {
        let mut p = w[0].period.succ();
        while p < w[1].period {
            defects.push(SeriesDefect::Gap { missing: p });
            p = p.succ();
        }
    }
    for o in obs {
        if o.actuals < 0.0 {
            defects.push(SeriesDefect::NegativeActuals { period: o.period });
        }
        if o.revenue < 0.0 {
            defects.push(SeriesDefect::NegativeRevenue { period: o.period });
        }
        if o.actuals == 0.0 && o.price.is_some() {
            defects.push(SeriesDefect::PriceOnZeroDemand { period: o.period });
        }
    }
    defects
}

/// Months ahead of the forecast origin, `1..=max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Horizon(u32);

impl Horizon {
    pub fn new(h: u32) -> Result<Self> {
        Self::with_max(h, DEFAULT_MAX_HORIZON)
    }

    pub fn with_max(h: u32, max: u32) -> Result<Self> {
        if h == 0 || h > max {
            return Err(invalid("horizon", format!("{h} outside 1..={max}")));
        }
        Ok(Self(h))
    }

    pub fn get(self) -> u32 {
        self.0
    }
}

impl fmt::Display for Horizon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastPoint {
    pub horizon: Horizon,
    pub period: PeriodId,
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub interval_level: f64,
}

impl ForecastPoint {
    /// A point forecast with a degenerate interval.
    pub fn point_only(horizon: Horizon, period: PeriodId, point: f64) -> Self {
        let point = point.max(0.0);
        Self {
            horizon,
            period,
            point,
            lower: point,
            upper: point,
            interval_level: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastSet {
    pub key: SeriesKey,
    pub origin: PeriodId,
    pub points: Vec<ForecastPoint>,
    pub model_id: String,
}

impl ForecastSet {
    pub fn new(
        key: SeriesKey,
        origin: PeriodId,
        points: Vec<ForecastPoint>,
        model_id: impl Into<String>,
    ) -> Result<Self> {
        if points.windows(2).any(|w| w[0].horizon >= w[1].horizon) {
            return Err(invalid("points", "horizons must be distinct and ascending"));
        }
        if points.first().is_some_and(|p| p.period <= origin) {
            return Err(invalid("points", "origin must precede the first forecast period"));
        }
        for p in &points {
            if !(p.lower <= p.point && p.point <= p.upper) || p.lower < 0.0 {
                return Err(invalid("points", format!("interval violated at h={}", p.horizon)));
            }
            if !(p.interval_level > 0.0 && p.interval_level < 1.0) {
                return Err(invalid("interval_level", "must be in (0, 1)"));
            }
        }
        Ok(Self {
            key,
            origin,
            points,
            model_id: model_id.into(),
        })
    }

    pub fn point_at(&self, horizon: Horizon) -> Option<&ForecastPoint> {
        self.points.iter().find(|p| p.horizon == horizon)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(y: i32, m: u32) -> PeriodId {
        PeriodId::new(y, m).unwrap()
    }

    fn obs(period: PeriodId, actuals: f64) -> MonthlyObservation {
        MonthlyObservation {
            period,
            actuals,
            revenue: actuals * 2.0,
            price: (actuals > 0.0).then_some(2.0),
        }
    }

    fn key() -> SeriesKey {
        SeriesKey::new("DE", "P001").unwrap()
    }

    #[test]
    fn contiguous_series_is_clean() {
        let start = p(2021, 1);
        let o = (0..24).map(|i| obs(start.offset(i), 3.0)).collect();
        let s = DemandSeries::new(key(), o).unwrap();
        assert!(validate_series(&s).is_empty());
    }

    #[test]
    fn gap_is_reported() {
        let s = DemandSeries::new(key(), vec![obs(p(2021, 1), 1.0), obs(p(2021, 3), 1.0)]).unwrap();
        let defects = validate_series(&s);
        assert_eq!(defects, vec![SeriesDefect::Gap { missing: p(2021, 2) }]);
        assert_eq!(defects[0].to_string(), "gap at 2021-02");
    }

    #[test]
    fn price_on_zero_demand_is_reported() {
        let mut o = obs(p(2021, 1), 0.0);
        o.price = Some(4.0);
        let s = DemandSeries::new(key(), vec![o]).unwrap();
        assert_eq!(
            validate_series(&s),
            vec![SeriesDefect::PriceOnZeroDemand { period: p(2021, 1) }]
        );
    }

    #[test]
    fn filled_gaps_validate_clean() {
        let s = DemandSeries::with_filled_gaps(key(), vec![obs(p(2021, 3), 5.0), obs(p(2020, 11), 1.0)])
            .unwrap();
        assert_eq!(s.len(), 5);
        assert_eq!(s.observations()[1], MonthlyObservation::zero(p(2020, 12)));
        assert!(validate_series(&s).is_empty());
    }

    #[test]
    fn empty_or_unordered_rejected() {
        assert!(DemandSeries::new(key(), vec![]).is_err());
        assert!(DemandSeries::new(key(), vec![obs(p(2021, 2), 1.0), obs(p(2021, 1), 1.0)]).is_err());
        assert!(SeriesKey::new("", "P").is_err());
    }

    fn frame(period: PeriodId, macro_index: f64, regime: Regime) -> ExogenousFrame {
        ExogenousFrame {
            period,
            regime,
            months_since_regime_start: 0,
            lifecycle: Lifecycle::Growth,
            holiday_count: 1,
            macro_index,
        }
    }

    #[test]
    fn align_identity_and_fill() {
        let start = p(2022, 1);
        let s = DemandSeries::new(key(), (0..12).map(|i| obs(start.offset(i), 1.0)).collect()).unwrap();
        let full: Vec<_> = (0..12).map(|i| frame(start.offset(i), i as f64, Regime::Shock)).collect();
        let pairs = align_frames(&s, &full);
        assert_eq!(pairs.len(), 12);
        assert!(pairs.iter().zip(&full).all(|((_, f), g)| f == g));

        let half = &full[..6];
        let pairs = align_frames(&s, half);
        assert_eq!(pairs.len(), 12);
        for (_, f) in &pairs[6..] {
            assert_eq!(f.macro_index, 5.0);
            assert_eq!(f.regime, Regime::None);
            assert_eq!(f.lifecycle, Lifecycle::Mature);
        }

        let pairs = align_frames(&s, &[]);
        assert!(pairs.iter().all(|(o, f)| *f == ExogenousFrame::default_at(o.period, 0.0)));
    }

    #[test]
    fn forecast_set_invariants() {
        let origin = p(2023, 12);
        let pt = |h: u32, v: f64| ForecastPoint::point_only(Horizon::new(h).unwrap(), origin.offset(h as i64), v);
        assert!(ForecastSet::new(key(), origin, vec![pt(1, 1.0), pt(2, 2.0)], "m").is_ok());
        assert!(ForecastSet::new(key(), origin, vec![pt(2, 1.0), pt(1, 2.0)], "m").is_err());
        assert!(Horizon::new(0).is_err());
        assert!(Horizon::new(19).is_err());
        assert_eq!(pt(1, -3.0).point, 0.0);
    }

    #[test]
    fn enums_parse_closed_sets() {
        assert_eq!("shock".parse::<Regime>(), Ok(Regime::Shock));
        assert!("pandemic".parse::<Regime>().is_err());
        assert_eq!("obsolete".parse::<Lifecycle>().unwrap().ordinal(), 4);
    }
}
