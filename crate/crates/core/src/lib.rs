//! Forecasting and analytics kernels for after-sales parts demand.
//!
//! Numerical kernels are generic over [`num::Real`] (implemented for `f32`
//! and `f64`); the aliases below fix them to `f64`, which is what the
//! pipeline uses. Month-over-month reconciliation runs on exact rationals.

pub mod domain;
pub mod ensemble;
pub mod error;
pub mod exact;
pub mod fixture;
pub mod forecast;
pub mod num;
pub mod period;
pub mod scorecard;
pub mod segmentation;
pub mod trend;

pub use domain::{
    DemandSeries, ExogenousFrame, ForecastPoint, ForecastSet, Horizon, Lifecycle, MonthlyObservation, Regime,
    SeriesKey,
};
pub use error::{CoreError, Result};
pub use exact::Exact;
pub use num::Real;
pub use period::PeriodId;

pub type IntermittencyProfile = segmentation::IntermittencyProfile<f64>;
pub type SmoothingParams = forecast::smoothing::SmoothingParams<f64>;
pub type SmoothingState = forecast::smoothing::SmoothingState<f64>;
pub type WeightProblem = ensemble::WeightProblem<f64>;
pub type LineFit = num::LineFit<f64>;
pub type ExactMomTable = trend::MomTable<Exact>;
pub type ExactMonthly = trend::EntityMonthly<Exact>;
