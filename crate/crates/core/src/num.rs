//! Scalar-generic statistical kernels shared by the forecasting and
//! analytics modules.
//!
//! Everything here is written against [`Real`], which is implemented for
//! `f32` and `f64`. The domain layer instantiates these with `f64`.

use num_traits::{Float, FromPrimitive};
use std::fmt::Debug;
use std::iter::Sum;

/// Floating-point scalar accepted by the numerical kernels.
pub trait Real: Float + FromPrimitive + Sum + Debug + Default + Send + Sync + 'static {}

impl Real for f32 {}
impl Real for f64 {}

/// Converts an `f64` literal into the kernel scalar.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("literal representable in scalar type")
}

#[inline]
pub fn from_usize<T: Real>(n: usize) -> T {
    T::from_usize(n).expect("count representable in scalar type")
}

/// Neumaier-compensated sum.
pub fn compensated_sum<T: Real>(xs: impl IntoIterator<Item = T>) -> T {
    let mut sum = T::zero();
    let mut comp = T::zero();
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp = comp + ((sum - t) + x);
        } else {
            comp = comp + ((x - t) + sum);
        }
        sum = t;
    }
    sum + comp
}

pub fn mean<T: Real>(xs: &[T]) -> Option<T> {
    if xs.is_empty() {
        return None;
    }
    Some(compensated_sum(xs.iter().copied()) / from_usize(xs.len()))
}

/// Population variance (divides by `n`).
pub fn population_variance<T: Real>(xs: &[T]) -> Option<T> {
    let m = mean(xs)?;
    Some(compensated_sum(xs.iter().map(|&x| (x - m) * (x - m))) / from_usize(xs.len()))
}

/// Sample standard deviation (divides by `n - 1`).
pub fn sample_std<T: Real>(xs: &[T]) -> Option<T> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs)?;
    let ss = compensated_sum(xs.iter().map(|&x| (x - m) * (x - m)));
    Some((ss / from_usize(xs.len() - 1)).sqrt())
}

pub fn median<T: Real>(xs: &[T]) -> Option<T> {
    let mut v = xs.to_vec();
    sort_floats(&mut v);
    quantile_sorted(&v, lit(0.5))
}

/// Sorts with NaNs last.
pub fn sort_floats<T: Real>(xs: &mut [T]) {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap_or_else(|| a.is_nan().cmp(&b.is_nan())));
}

/// Empirical quantile with linear interpolation between order statistics
/// (position `(n - 1) * q`). `sorted` must be ascending.
pub fn quantile_sorted<T: Real>(sorted: &[T], q: T) -> Option<T> {
    if sorted.is_empty() || !(q >= T::zero() && q <= T::one()) {
        return None;
    }
    let pos = from_usize::<T>(sorted.len() - 1) * q;
    let lo = pos.floor();
    let frac = pos - lo;
    let i = lo.to_usize().unwrap_or(0);
    if i + 1 >= sorted.len() {
        return Some(sorted[sorted.len() - 1]);
    }
    Some(sorted[i] + (sorted[i + 1] - sorted[i]) * frac)
}

pub fn quantile<T: Real>(xs: &[T], q: T) -> Option<T> {
    let mut v = xs.to_vec();
    sort_floats(&mut v);
    quantile_sorted(&v, q)
}

/// Ordinary least-squares line through `(i, ys[i])` for `i = 0..n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit<T> {
    pub intercept: T,
    pub slope: T,
    /// Standard error of the slope; zero when `n <= 2`.
    pub slope_stderr: T,
}

pub fn ols_line<T: Real>(ys: &[T]) -> Option<LineFit<T>> {
    let n = ys.len();
    if n < 2 {
        return None;
    }
    let xs: Vec<T> = (0..n).map(from_usize).collect();
    let xm = mean(&xs)?;
    let ym = mean(ys)?;
    let sxx = compensated_sum(xs.iter().map(|&x| (x - xm) * (x - xm)));
    let sxy = compensated_sum(xs.iter().zip(ys).map(|(&x, &y)| (x - xm) * (y - ym)));
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let slope_stderr = if n > 2 {
        let sse = compensated_sum(
            xs.iter()
                .zip(ys)
                .map(|(&x, &y)| {
                    let r = y - (intercept + slope * x);
                    r * r
                }),
        );
        (sse / from_usize(n - 2) / sxx).sqrt()
    } else {
        T::zero()
    };
    Some(LineFit {
        intercept,
        slope,
        slope_stderr,
    })
}

/// Euclidean projection onto the probability simplex.
pub fn project_to_simplex<T: Real>(v: &[T]) -> Vec<T> {
    let n = v.len();
    if n == 0 {
        return Vec::new();
    }
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let mut cum = T::zero();
    let mut theta = T::zero();
    for (j, &uj) in u.iter().enumerate() {
        cum = cum + uj;
        let t = (cum - T::one()) / from_usize(j + 1);
        if uj - t > T::zero() {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(T::zero())).collect()
}

/// Winsorizes a copy of `xs` at the given lower/upper quantiles.
pub fn winsorize<T: Real>(xs: &[T], lower_q: T, upper_q: T) -> Vec<T> {
    let mut sorted = xs.to_vec();
    sort_floats(&mut sorted);
    let (Some(lo), Some(hi)) = (
        quantile_sorted(&sorted, lower_q),
        quantile_sorted(&sorted, upper_q),
    ) else {
        return Vec::new();
    };
    xs.iter().map(|&x| x.max(lo).min(hi)).collect()
}

/// Round half to even at `decimals` places.
pub fn round_half_even(x: f64, decimals: i32) -> f64 {
    let scale = 10f64.powi(decimals);
    let scaled = x * scale;
    let frac = (scaled - scaled.trunc()).abs();
    // decimal ties such as 0.00015 are stored slightly off the tie
    if (frac - 0.5).abs() < 1e-9 {
        return (scaled.trunc() + 0.5f64.copysign(scaled)).round_ties_even() / scale;
    }
    scaled.round() / scale
}

/// Serde adapter writing `+inf` as `null`, which plain JSON cannot hold.
pub mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolated_quantile_on_multiset() {
        let mut xs = Vec::new();
        for v in [-2.0, -1.0, 0.0, 1.0, 2.0] {
            xs.extend(std::iter::repeat_n(v, 20));
        }
        assert_eq!(quantile(&xs, 0.1), Some(-2.0));
        assert_eq!(quantile(&xs, 0.9), Some(2.0));
        assert_eq!(quantile(&[1.0f64, 2.0], 0.5), Some(1.5));
        assert_eq!(quantile::<f64>(&[], 0.5), None);
    }

    #[test]
    fn slope_of_exact_line() {
        let ys: Vec<f64> = (0..20).map(|t| 30.0 - 2.0 * t as f64).collect();
        let fit = ols_line(&ys).unwrap();
        assert!((fit.slope + 2.0).abs() < 1e-12);
        assert!((fit.intercept - 30.0).abs() < 1e-12);
        assert!(fit.slope_stderr.abs() < 1e-9);
        let fit32 = ols_line(&[1.0f32, 3.0, 5.0]).unwrap();
        assert!((fit32.slope - 2.0).abs() < 1e-6);
    }

    #[test]
    fn simplex_projection_lands_on_simplex() {
        let p = project_to_simplex(&[0.9, 0.8, -0.3]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&x| x >= 0.0));
        assert_eq!(project_to_simplex(&[0.2, 0.3, 0.5]), vec![0.2, 0.3, 0.5]);
    }

    #[test]
    fn half_even_rounding() {
        assert_eq!(round_half_even(0.00005, 4), 0.0);
        assert_eq!(round_half_even(0.00015, 4), 0.0002);
        assert_eq!(round_half_even(1.23456, 4), 1.2346);
        assert_eq!(round_half_even(-2.5, 0), -2.0);
    }

    #[test]
    fn compensated_sum_beats_naive() {
        let xs = [1e16, 1.0, -1e16];
        assert_eq!(compensated_sum(xs), 1.0);
    }
}
