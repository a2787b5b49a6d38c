//! Croston, SBA and TSB forecasters for intermittent demand.

use crate::error::{invalid, CoreError, Result};
use crate::num::{lit, Real};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrostonVariant {
    Croston,
    Sba,
    Tsb,
}

/// Forecast available after each observation, `None` until the method has a
/// state (Croston/SBA before the first demand).
///
/// Croston starts from the first non-zero size and its position as the first
/// interval; TSB starts its probability at the non-zero share of the first
/// twelve months and its size at the first non-zero demand.
pub fn croston_path<T: Real>(y: &[T], variant: CrostonVariant, alpha: T) -> Result<Vec<Option<T>>> {
    if !(alpha > T::zero() && alpha <= T::one()) {
        return Err(invalid("alpha", "must lie in (0, 1]"));
    }
    let one = T::one();
    let mut path = Vec::with_capacity(y.len());
    match variant {
        CrostonVariant::Croston | CrostonVariant::Sba => {
            let factor = if variant == CrostonVariant::Sba {
                one - alpha / lit(2.0)
            } else {
                one
            };
            let mut state: Option<(T, T, usize)> = None;
            for (t, &v) in y.iter().enumerate() {
                if v > T::zero() {
                    state = Some(match state {
                        None => (v, lit((t + 1) as f64), t),
                        Some((z, p, last)) => {
                            let q = lit::<T>((t - last) as f64);
                            (z + alpha * (v - z), p + alpha * (q - p), t)
                        }
                    });
                }
                path.push(state.map(|(z, p, _)| factor * (z / p)));
            }
        }
        CrostonVariant::Tsb => {
            let window = &y[..y.len().min(12)];
            let mut prob = if window.is_empty() {
                T::zero()
            } else {
                lit::<T>(window.iter().filter(|&&v| v > T::zero()).count() as f64)
                    / lit(window.len() as f64)
            };
            let mut size = y.iter().copied().find(|&v| v > T::zero()).unwrap_or(T::zero());
            for &v in y {
                if v > T::zero() {
                    prob = prob + alpha * (one - prob);
                    size = size + alpha * (v - size);
                } else {
                    prob = prob - alpha * prob;
                }
                path.push(Some(prob * size));
            }
        }
    }
    Ok(path)
}

/// Flat forecast from the end of the history.
pub fn croston_forecast<T: Real>(y: &[T], variant: CrostonVariant, alpha: T) -> Result<T> {
    if y.is_empty() {
        return Err(CoreError::InsufficientHistory { needed: 1, available: 0 });
    }
    let path = croston_path(y, variant, alpha)?;
    match path.last().copied().flatten() {
        Some(f) => Ok(f.max(T::zero())),
        None => Err(CoreError::AllZero("croston/sba need at least one non-zero demand")),
    }
}

pub fn croston_values<T: Real>(y: &[T], leads: &[u32], variant: CrostonVariant, alpha: T) -> Result<Vec<T>> {
    let f = croston_forecast(y, variant, alpha)?;
    Ok(vec![f; leads.len()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_demand_examples() {
        let y = [5.0; 10];
        assert_eq!(croston_forecast(&y, CrostonVariant::Croston, 0.2).unwrap(), 5.0);
        assert!((croston_forecast::<f64>(&y, CrostonVariant::Sba, 0.2).unwrap() - 4.5).abs() < 1e-12);
        assert_eq!(croston_forecast(&[0.0; 10], CrostonVariant::Tsb, 0.2).unwrap(), 0.0);
        assert!(matches!(
            croston_forecast(&[0.0; 10], CrostonVariant::Croston, 0.2),
            Err(CoreError::AllZero(_))
        ));
        assert!(croston_forecast(&[0.0; 10], CrostonVariant::Sba, 0.2).is_err());
        assert!(croston_forecast(&y, CrostonVariant::Croston, 0.0).is_err());
    }

    #[test]
    fn flat_across_leads() {
        let y = [0.0, 3.0, 0.0, 0.0, 7.0, 1.0];
        for v in [CrostonVariant::Croston, CrostonVariant::Sba, CrostonVariant::Tsb] {
            let f = croston_values(&y, &[1, 2, 9], v, 0.3).unwrap();
            assert!(f.windows(2).all(|w| w[0] == w[1]));
        }
    }

    proptest! {
        #[test]
        fn sba_is_scaled_croston(y in proptest::collection::vec(0u8..6, 1..40), alpha in 0.01f64..1.0) {
            let y: Vec<f64> = y.into_iter().map(f64::from).collect();
            let c = croston_path(&y, CrostonVariant::Croston, alpha).unwrap();
            let s = croston_path(&y, CrostonVariant::Sba, alpha).unwrap();
            for (c, s) in c.iter().zip(&s) {
                match (c, s) {
                    (Some(c), Some(s)) => prop_assert_eq!(*s, (1.0 - alpha / 2.0) * c),
                    (None, None) => {}
                    _ => prop_assert!(false),
                }
            }
        }
    }
}
