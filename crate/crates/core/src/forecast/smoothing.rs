//! Seasonal naive and exponential smoothing recursions.

use crate::error::{invalid, CoreError, Result};
use crate::num::{self, lit, Real};
use serde::{Deserialize, Serialize};

pub const SEASON: usize = 12;

/// Repeats the last 12-month block: lead `h` maps to `block[(h - 1) % 12]`.
pub fn seasonal_naive_values<T: Real>(y: &[T], leads: &[u32]) -> Result<Vec<T>> {
    if y.len() < SEASON {
        return Err(CoreError::InsufficientHistory {
            needed: SEASON,
            available: y.len(),
        });
    }
    let block = &y[y.len() - SEASON..];
    Ok(leads
        .iter()
        .map(|&h| block[(h as usize - 1) % SEASON].max(T::zero()))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothingVariant {
    Level,
    Trend,
    SeasonalAdditive,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingParams<T> {
    pub alpha: T,
    pub beta: T,
    pub gamma: T,
}

fn check_constant<T: Real>(name: &'static str, v: T) -> Result<()> {
    if v > T::zero() && v <= T::one() {
        Ok(())
    } else {
        Err(invalid(name, "smoothing constant must lie in (0, 1]"))
    }
}

/// Final smoothing state after consuming the whole history.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingState<T> {
    pub variant: SmoothingVariant,
    pub level: T,
    pub trend: T,
    /// Last 12 seasonal indices, oldest first; empty unless seasonal.
    pub seasonals: Vec<T>,
}

impl<T: Real> SmoothingState<T> {
    pub fn forecast(&self, lead: u32) -> T {
        let h = lit::<T>(lead as f64);
        let raw = match self.variant {
            SmoothingVariant::Level => self.level,
            SmoothingVariant::Trend => self.level + h * self.trend,
            SmoothingVariant::SeasonalAdditive => {
                self.level + h * self.trend + self.seasonals[(lead as usize - 1) % SEASON]
            }
        };
        raw.max(T::zero())
    }
}

/// Runs the recursion. Level starts at the first observation; Holt's trend
/// at `y[1] - y[0]`; the seasonal variant starts from the first-year mean
/// with first-year deviations as seasonal indices and a trend of the
/// year-over-year mean change spread over 12 months.
pub fn fit_smoothing<T: Real>(
    y: &[T],
    variant: SmoothingVariant,
    params: SmoothingParams<T>,
) -> Result<SmoothingState<T>> {
    check_constant("alpha", params.alpha)?;
    let SmoothingParams { alpha, beta, gamma } = params;
    let one = T::one();
    match variant {
        SmoothingVariant::Level => {
            if y.is_empty() {
                return Err(CoreError::InsufficientHistory { needed: 1, available: 0 });
            }
            let mut level = y[0];
            for &v in y {
                level = alpha * v + (one - alpha) * level;
            }
            Ok(SmoothingState {
                variant,
                level,
                trend: T::zero(),
                seasonals: Vec::new(),
            })
        }
        SmoothingVariant::Trend => {
            check_constant("beta", beta)?;
            if y.len() < 2 {
                return Err(CoreError::InsufficientHistory { needed: 2, available: y.len() });
            }
            let mut level = y[0];
            let mut trend = y[1] - y[0];
            for &v in &y[1..] {
                let prev = level;
                level = alpha * v + (one - alpha) * (level + trend);
                trend = beta * (level - prev) + (one - beta) * trend;
            }
            Ok(SmoothingState {
                variant,
                level,
                trend,
                seasonals: Vec::new(),
            })
        }
        SmoothingVariant::SeasonalAdditive => {
            check_constant("beta", beta)?;
            check_constant("gamma", gamma)?;
            if y.len() < 2 * SEASON {
                return Err(CoreError::InsufficientHistory {
                    needed: 2 * SEASON,
                    available: y.len(),
                });
            }
            let first = num::mean(&y[..SEASON]).unwrap();
            let second = num::mean(&y[SEASON..2 * SEASON]).unwrap();
            let mut seasonals: Vec<T> = y[..SEASON].iter().map(|&v| v - first).collect();
            let mut level = first;
            let mut trend = (second - first) / lit(SEASON as f64);
            for (t, &v) in y.iter().enumerate().skip(SEASON) {
                let s_old = seasonals[t - SEASON];
                let prev = level;
                level = alpha * (v - s_old) + (one - alpha) * (level + trend);
                trend = beta * (level - prev) + (one - beta) * trend;
                seasonals.push(gamma * (v - level) + (one - gamma) * s_old);
            }
            let tail = seasonals.split_off(seasonals.len() - SEASON);
            Ok(SmoothingState {
                variant,
                level,
                trend,
                seasonals: tail,
            })
        }
    }
}

pub fn exp_smoothing_values<T: Real>(
    y: &[T],
    leads: &[u32],
    variant: SmoothingVariant,
    params: SmoothingParams<T>,
) -> Result<Vec<T>> {
    let state = fit_smoothing(y, variant, params)?;
    Ok(leads.iter().map(|&h| state.forecast(h)).collect())
}
