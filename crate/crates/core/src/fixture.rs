//! Seeded synthetic dataset: 3 countries × 40 parts × 48 monthly periods
//! with smooth, erratic, intermittent and lumpy demand, a shock regime
//! starting at month 27 and a recorded forecast history whose error steps
//! up at the shock.

use crate::domain::{
    DemandSeries, ExogenousFrame, Lifecycle, MonthlyObservation, Regime, SeriesKey,
};
use crate::num::round_half_even;
use crate::period::PeriodId;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use std::collections::BTreeMap;

pub const DEMO_SEED: u64 = 42;
pub const COUNTRIES: [&str; 3] = ["DE", "FR", "US"];
pub const PARTS: usize = 40;
pub const MONTHS: usize = 48;
/// One-based month where the shock regime starts.
pub const SHOCK_MONTH: usize = 27;
pub const BASE_APE: f64 = 0.10;
pub const SHOCK_APE_STEP: f64 = 0.15;

pub fn start_period() -> PeriodId {
    PeriodId::new(2021, 1).expect("valid")
}

/// Regime and months since it began for a one-based month.
pub fn regime_at(month: usize) -> (Regime, u32) {
    match month {
        27..=29 => (Regime::Shock, (month - 27) as u32),
        30..=32 => (Regime::Restriction, (month - 30) as u32),
        33..=36 => (Regime::Recovery, (month - 33) as u32),
        _ => (Regime::None, 0),
    }
}

fn regime_multiplier(r: Regime) -> f64 {
    match r {
        Regime::None => 1.0,
        Regime::Shock => 0.6,
        Regime::Restriction => 0.8,
        Regime::Recovery => 1.15,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pattern {
    Smooth,
    Erratic,
    Intermittent,
    Lumpy,
}

pub fn pattern_of(part_index: usize) -> Pattern {
    [Pattern::Smooth, Pattern::Erratic, Pattern::Intermittent, Pattern::Lumpy][part_index % 4]
}

pub fn part_id(i: usize) -> String {
    format!("P{:03}", i + 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub key: SeriesKey,
    pub period: PeriodId,
    pub forecast: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoDataset {
    pub series: BTreeMap<SeriesKey, DemandSeries>,
    pub exog: BTreeMap<String, Vec<ExogenousFrame>>,
    pub forecast_history: Vec<HistoryRow>,
}

pub fn demo_dataset(seed: u64) -> DemoDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = start_period();
    let price_dist = LogNormal::new(3.0, 0.8).expect("valid");
    let part_prices: Vec<f64> = (0..PARTS).map(|_| price_dist.sample(&mut rng)).collect();
    // Pareto-like ranking of part volumes.
    let part_levels: Vec<f64> = (0..PARTS).map(|i| 400.0 * ((i / 4 + 1) as f64).powf(-1.1) + 4.0).collect();
    let country_scale = [1.0, 0.6, 0.35];
    let country_price = [1.0, 1.08, 0.93];

    let exog: BTreeMap<String, Vec<ExogenousFrame>> = COUNTRIES
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let frames = (1..=MONTHS)
                .map(|m| {
                    let period = start.offset(m as i64 - 1);
                    let (regime, since) = regime_at(m);
                    ExogenousFrame {
                        period,
                        regime,
                        months_since_regime_start: since,
                        lifecycle: if m <= 6 { Lifecycle::Growth } else { Lifecycle::Mature },
                        holiday_count: if matches!(period.month(), 4 | 5 | 12) { 3 } else { 1 },
                        macro_index: round_half_even(100.0 + 0.25 * m as f64 - 2.0 * c as f64, 2),
                    }
                })
                .collect();
            (name.to_string(), frames)
        })
        .collect();

    let noise = Normal::new(0.0, 1.0).expect("valid");
    let mut series = BTreeMap::new();
    let mut forecast_history = Vec::new();
    for (c, country) in COUNTRIES.iter().enumerate() {
        for i in 0..PARTS {
            let key = SeriesKey::new(*country, part_id(i)).expect("valid key");
            let level = part_levels[i] * country_scale[c];
            let price = part_prices[i] * country_price[c];
            let phase = rng.random::<f64>() * std::f64::consts::TAU;
            let mut obs = Vec::with_capacity(MONTHS);
            for m in 1..=MONTHS {
                let period = start.offset(m as i64 - 1);
                let mult = regime_multiplier(regime_at(m).0);
                let season = 1.0 + 0.25 * ((period.month() as f64) * std::f64::consts::TAU / 12.0 + phase).sin();
                let z: f64 = noise.sample(&mut rng);
                let u: f64 = rng.random();
                let raw = match pattern_of(i) {
                    Pattern::Smooth => level * season * mult * (1.0 + 0.1 * z),
                    Pattern::Erratic => level * mult * (0.9 * z).exp() * 0.7,
                    Pattern::Intermittent if u < 0.3 => level * mult * (1.0 + 0.15 * z),
                    Pattern::Lumpy if u < 0.3 => level * mult * (1.1 * z).exp(),
                    _ => 0.0,
                };
                let actuals = raw.max(0.0).round();
                let unit_price = round_half_even(price * (1.0 + 0.002 * m as f64), 2);
                let revenue = round_half_even(actuals * unit_price, 2);
                obs.push(MonthlyObservation {
                    period,
                    actuals,
                    revenue,
                    price: (actuals > 0.0).then_some(unit_price),
                });
                let magnitude = BASE_APE * (1.0 + 0.3 * noise.sample(&mut rng))
                    + if m >= SHOCK_MONTH { SHOCK_APE_STEP } else { 0.0 };
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                let forecast = if actuals > 0.0 {
                    actuals * (1.0 + sign * magnitude.max(0.0))
                } else {
                    0.2 * level
                };
                forecast_history.push(HistoryRow { key: key.clone(), period, forecast: round_half_even(forecast.max(0.0), 2) });
            }
            series.insert(key.clone(), DemandSeries::new(key, obs).expect("ordered periods"));
        }
    }
    DemoDataset { series, exog, forecast_history }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmentation::{intermittency_profile, DemandPattern};

    #[test]
    fn shape_and_determinism() {
        let a = demo_dataset(DEMO_SEED);
        assert_eq!(a.series.len(), COUNTRIES.len() * PARTS);
        assert!(a.series.values().all(|s| s.len() == MONTHS));
        assert_eq!(a.forecast_history.len(), COUNTRIES.len() * PARTS * MONTHS);
        assert_eq!(a, demo_dataset(DEMO_SEED));
        assert_ne!(a.series, demo_dataset(DEMO_SEED + 1).series);
        assert!(a.series.values().all(|s| crate::domain::validate_series(s).is_empty()));
    }

    #[test]
    fn patterns_cover_all_classes() {
        let d = demo_dataset(DEMO_SEED);
        let mut seen = std::collections::BTreeSet::new();
        for s in d.series.values() {
            if let Ok(p) = intermittency_profile(s) {
                seen.insert(format!("{:?}", p.pattern));
            }
        }
        for p in [DemandPattern::Smooth, DemandPattern::Erratic, DemandPattern::Intermittent, DemandPattern::Lumpy] {
            assert!(seen.contains(&format!("{p:?}")), "missing {p:?}");
        }
    }

    #[test]
    fn regimes_follow_the_calendar() {
        assert_eq!(regime_at(26).0, Regime::None);
        assert_eq!(regime_at(27), (Regime::Shock, 0));
        assert_eq!(regime_at(31), (Regime::Restriction, 1));
        assert_eq!(regime_at(36), (Regime::Recovery, 3));
        assert_eq!(regime_at(40), (Regime::None, 0));
    }
}
