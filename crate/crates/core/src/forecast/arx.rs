//! Autoregression with regime dummies, time-since-regime and month-of-year
//! dummies, fitted by minimum-norm least squares.

use crate::domain::{ExogenousFrame, Regime};
use crate::error::{CoreError, Result};
use nalgebra::{DMatrix, DVector};

/// shock, restriction, recovery dummies plus months since regime start
pub const REGIME_COLUMNS: usize = 4;
const MONTH_COLUMNS: usize = 11;

#[derive(Debug, Clone, PartialEq)]
pub struct ArxModel {
    pub lag_order: usize,
    /// `[intercept, lag_1..lag_p, shock, restriction, recovery,
    /// months_since_regime_start, feb..dec]`
    pub coefficients: Vec<f64>,
}

pub fn design_width(lag_order: usize) -> usize {
    1 + lag_order + REGIME_COLUMNS + MONTH_COLUMNS
}

/// Regressors for predicting position `t` given `history[..t]`.
fn design_row(history: &[f64], t: usize, lag_order: usize, frame: &ExogenousFrame) -> Vec<f64> {
    let mut row = Vec::with_capacity(design_width(lag_order));
    row.push(1.0);
    for k in 1..=lag_order {
        row.push(history[t - k]);
    }
    for regime in [Regime::Shock, Regime::Restriction, Regime::Recovery] {
        row.push(if frame.regime == regime { 1.0 } else { 0.0 });
    }
    row.push(frame.months_since_regime_start as f64);
    for month in 2..=12 {
        row.push(if frame.period.month() == month { 1.0 } else { 0.0 });
    }
    row
}

/// Least-squares solution of minimum Euclidean norm.
pub fn min_norm_lstsq(rows: &[Vec<f64>], targets: &[f64]) -> Vec<f64> {
    let m = rows.len();
    let n = rows[0].len();
    let a = DMatrix::from_fn(m, n, |i, j| rows[i][j]);
    let b = DVector::from_column_slice(targets);
    let svd = a.svd(true, true);
    let sv_max = svd.singular_values.max();
    let tol = sv_max * (m.max(n) as f64) * f64::EPSILON;
    svd.solve(&b, tol)
        .map(|x| x.iter().copied().collect())
        .unwrap_or_else(|_| vec![0.0; n])
}

impl ArxModel {
    /// `frames[i]` must describe the period of `y[i]`.
    pub fn fit(y: &[f64], frames: &[ExogenousFrame], lag_order: usize) -> Result<Self> {
        let needed = lag_order + 12 + REGIME_COLUMNS;
        if y.len() < needed {
            return Err(CoreError::InsufficientHistory {
                needed,
                available: y.len(),
            });
        }
        debug_assert_eq!(y.len(), frames.len());
        let rows: Vec<Vec<f64>> = (lag_order..y.len())
            .map(|t| design_row(y, t, lag_order, &frames[t]))
            .collect();
        let coefficients = min_norm_lstsq(&rows, &y[lag_order..]);
        Ok(Self {
            lag_order,
            coefficients,
        })
    }

    /// Recursive forecasts for the periods described by `future`; the
    /// returned values are unclamped.
    pub fn forecast_path(&self, y: &[f64], future: &[ExogenousFrame]) -> Vec<f64> {
        let mut history = y.to_vec();
        let mut out = Vec::with_capacity(future.len());
        for frame in future {
            let t = history.len();
            let row = design_row(&history, t, self.lag_order, frame);
            let v: f64 = row.iter().zip(&self.coefficients).map(|(x, c)| x * c).sum();
            history.push(v);
            out.push(v);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Lifecycle;
    use crate::period::PeriodId;

    fn frames(n: usize, shock: impl Fn(usize) -> bool) -> Vec<ExogenousFrame> {
        let start = PeriodId::new(2015, 1).unwrap();
        (0..n)
            .map(|i| {
                let regime = if shock(i) { Regime::Shock } else { Regime::None };
                ExogenousFrame {
                    period: start.offset(i as i64),
                    regime,
                    months_since_regime_start: 0,
                    lifecycle: Lifecycle::Mature,
                    holiday_count: 0,
                    macro_index: 0.0,
                }
            })
            .collect()
    }

    #[test]
    fn recovers_noiseless_ar1() {
        let mut y = vec![0.0];
        for _ in 1..100 {
            let last = *y.last().unwrap();
            y.push(0.5 * last + 10.0);
        }
        let m = ArxModel::fit(&y, &frames(100, |_| false), 1).unwrap();
        assert!((m.coefficients[0] - 10.0).abs() < 1e-6, "{:?}", m.coefficients);
        assert!((m.coefficients[1] - 0.5).abs() < 1e-6);
        // unused regime columns get zero weight under the minimum-norm solution
        assert!(m.coefficients[2..5].iter().all(|c| c.abs() < 1e-9));
    }

    #[test]
    fn constant_series_forecasts_constant() {
        let y = vec![7.0; 40];
        let fr = frames(46, |_| false);
        let m = ArxModel::fit(&y, &fr[..40], 2).unwrap();
        for v in m.forecast_path(&y, &fr[40..]) {
            assert!((v - 7.0).abs() < 1e-9);
        }
    }

    #[test]
    fn shock_dummy_measures_level_shift() {
        let shock = |i: usize| (30..36).contains(&i);
        let y: Vec<f64> = (0..60).map(|i| 100.0 + if shock(i) { 50.0 } else { 0.0 }).collect();
        let m = ArxModel::fit(&y, &frames(60, shock), 0).unwrap();
        assert!((m.coefficients[1] - 50.0).abs() < 1e-6, "{:?}", m.coefficients);
    }

    #[test]
    fn short_history_rejected() {
        assert!(ArxModel::fit(&[1.0; 10], &frames(10, |_| false), 1).is_err());
    }
}
