//! Model streams behind one interface: statistical recursions, a pooled
//! gradient-boosted tree model and a small feed-forward network.

pub mod arx;
pub mod croston;
pub mod gbt;
pub mod mlp;
pub mod smoothing;

use crate::domain::{
    align_frames, frame_at, DemandSeries, ExogenousFrame, ForecastPoint, ForecastSet, Horizon, Regime,
    SeriesKey,
};
use crate::error::{invalid, CoreError, Result};
use crate::period::PeriodId;
use crate::segmentation::SegmentAssignment;
use croston::CrostonVariant;
use gbt::{GbtParams, GradientBoostedTrees};
use mlp::{Mlp, MlpParams, Sample};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use smoothing::{SmoothingParams, SmoothingVariant};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stream {
    Statistical,
    Ml,
    Dl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    SeasonalNaive,
    EtsLevel,
    EtsTrend,
    EtsSeasonal,
    Croston,
    Sba,
    Tsb,
    Arx,
    Gbt,
    Mlp,
}

impl ModelFamily {
    pub fn stream(self) -> Stream {
        match self {
            ModelFamily::Gbt => Stream::Ml,
            ModelFamily::Mlp => Stream::Dl,
            _ => Stream::Statistical,
        }
    }

    pub fn is_global(self) -> bool {
        matches!(self, ModelFamily::Gbt | ModelFamily::Mlp)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model_id: String,
    pub family: ModelFamily,
    pub hyperparameters: BTreeMap<String, f64>,
}

impl ModelSpec {
    pub fn new(model_id: impl Into<String>, family: ModelFamily, hyper: &[(&str, f64)]) -> Self {
        Self {
            model_id: model_id.into(),
            family,
            hyperparameters: hyper.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }

    pub fn stream(&self) -> Stream {
        self.family.stream()
    }

    pub fn param(&self, name: &str, default: f64) -> f64 {
        self.hyperparameters.get(name).copied().unwrap_or(default)
    }

    pub fn validate(&self) -> Result<()> {
        for name in ["alpha", "beta", "gamma"] {
            if let Some(&v) = self.hyperparameters.get(name) {
                if !(v > 0.0 && v <= 1.0) {
                    return Err(invalid("smoothing constant", format!("{name}={v} outside (0, 1]")));
                }
            }
        }
        if self.model_id.is_empty() {
            return Err(invalid("model_id", "must be non-empty"));
        }
        Ok(())
    }

    fn smoothing(&self) -> SmoothingParams<f64> {
        SmoothingParams {
            alpha: self.param("alpha", 0.3),
            beta: self.param("beta", 0.1),
            gamma: self.param("gamma", 0.1),
        }
    }

    pub fn gbt_params(&self) -> GbtParams {
        let d = GbtParams::default();
        GbtParams {
            n_trees: self.param("n_trees", d.n_trees as f64) as usize,
            max_depth: self.param("max_depth", d.max_depth as f64) as usize,
            learning_rate: self.param("learning_rate", d.learning_rate),
            min_samples_leaf: self.param("min_samples_leaf", d.min_samples_leaf as f64) as usize,
            huber_delta: self.hyperparameters.get("huber_delta").copied(),
        }
    }

    pub fn mlp_params(&self) -> MlpParams {
        let d = MlpParams::default();
        MlpParams {
            hidden: self.param("hidden", d.hidden as f64) as usize,
            learning_rate: self.param("learning_rate", d.learning_rate),
            epochs: self.param("epochs", d.epochs as f64) as usize,
            batch_size: self.param("batch_size", d.batch_size as f64) as usize,
            seed: self.param("seed", d.seed as f64) as u64,
        }
    }
}

/// The candidate set used by the pipeline.
pub fn default_registry() -> Vec<ModelSpec> {
    vec![
        ModelSpec::new("arx", ModelFamily::Arx, &[("lag_order", 2.0)]),
        ModelSpec::new("croston", ModelFamily::Croston, &[("alpha", 0.1)]),
        ModelSpec::new("ets_level", ModelFamily::EtsLevel, &[("alpha", 0.3)]),
        ModelSpec::new("ets_seasonal", ModelFamily::EtsSeasonal, &[("alpha", 0.2), ("beta", 0.05), ("gamma", 0.1)]),
        ModelSpec::new("ets_trend", ModelFamily::EtsTrend, &[("alpha", 0.3), ("beta", 0.1)]),
        ModelSpec::new(
            "gbt",
            ModelFamily::Gbt,
            &[("n_trees", 200.0), ("max_depth", 3.0), ("learning_rate", 0.1), ("min_samples_leaf", 5.0)],
        ),
        ModelSpec::new(
            "mlp",
            ModelFamily::Mlp,
            &[("hidden", 32.0), ("learning_rate", 0.01), ("epochs", 200.0), ("batch_size", 32.0), ("seed", 42.0)],
        ),
        ModelSpec::new("sba", ModelFamily::Sba, &[("alpha", 0.1)]),
        ModelSpec::new("seasonal_naive", ModelFamily::SeasonalNaive, &[]),
        ModelSpec::new("tsb", ModelFamily::Tsb, &[("alpha", 0.1)]),
    ]
}

/// Registry record of a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub model_id: String,
    pub stream: Stream,
    pub hyperparameters: BTreeMap<String, f64>,
    pub trained_through: PeriodId,
    pub training_hash: String,
}

/// Everything a model may look at when fitting at one origin. `series` holds
/// only observations up to the origin; `exog` may extend past it since
/// covariate frames are supplied by the caller.
#[derive(Clone, Copy)]
pub struct TrainingData<'a> {
    pub series: &'a BTreeMap<SeriesKey, DemandSeries>,
    pub exog: &'a BTreeMap<String, Vec<ExogenousFrame>>,
    pub segments: &'a BTreeMap<SeriesKey, SegmentAssignment>,
    /// Called with the latest observation period each fit actually consumed.
    pub observer: Option<&'a (dyn Fn(&SeriesKey, PeriodId) + Sync)>,
}

impl<'a> TrainingData<'a> {
    pub fn new(
        series: &'a BTreeMap<SeriesKey, DemandSeries>,
        exog: &'a BTreeMap<String, Vec<ExogenousFrame>>,
        segments: &'a BTreeMap<SeriesKey, SegmentAssignment>,
    ) -> Self {
        Self { series, exog, segments, observer: None }
    }

    fn observe(&self, key: &SeriesKey, period: PeriodId) {
        if let Some(f) = self.observer {
            f(key, period);
        }
    }

    fn frames(&self, country: &str) -> &[ExogenousFrame] {
        self.exog.get(country).map(Vec::as_slice).unwrap_or(&[])
    }
}

pub type ModelOutput = BTreeMap<SeriesKey, Result<Vec<f64>>>;

/// Point forecasts for every series at each lead (steps past the last
/// training period). Failures are reported per series.
pub fn run_model(spec: &ModelSpec, data: TrainingData<'_>, leads: &[u32]) -> ModelOutput {
    if let Err(e) = spec.validate() {
        return data.series.keys().map(|k| (k.clone(), Err(e.clone()))).collect();
    }
    match spec.family {
        ModelFamily::Gbt => gbt_global(data, leads, &spec.gbt_params()),
        ModelFamily::Mlp => mlp_seq(data, leads, &spec.mlp_params()),
        _ => data
            .series
            .par_iter()
            .map(|(k, s)| {
                data.observe(k, s.last_period());
                (k.clone(), local_forecast(spec, s, data.frames(&k.country), leads))
            })
            .collect::<Vec<_>>()
            .into_iter()
            .collect(),
    }
}

fn local_forecast(spec: &ModelSpec, series: &DemandSeries, frames: &[ExogenousFrame], leads: &[u32]) -> Result<Vec<f64>> {
    let y = series.actuals();
    let out = match spec.family {
        ModelFamily::SeasonalNaive => smoothing::seasonal_naive_values(&y, leads)?,
        ModelFamily::EtsLevel => smoothing::exp_smoothing_values(&y, leads, SmoothingVariant::Level, spec.smoothing())?,
        ModelFamily::EtsTrend => smoothing::exp_smoothing_values(&y, leads, SmoothingVariant::Trend, spec.smoothing())?,
        ModelFamily::EtsSeasonal => {
            smoothing::exp_smoothing_values(&y, leads, SmoothingVariant::SeasonalAdditive, spec.smoothing())?
        }
        ModelFamily::Croston => croston::croston_values(&y, leads, CrostonVariant::Croston, spec.param("alpha", 0.1))?,
        ModelFamily::Sba => croston::croston_values(&y, leads, CrostonVariant::Sba, spec.param("alpha", 0.1))?,
        ModelFamily::Tsb => croston::croston_values(&y, leads, CrostonVariant::Tsb, spec.param("alpha", 0.1))?,
        ModelFamily::Arx => arx_values(series, frames, leads, spec.param("lag_order", 2.0) as usize)?,
        ModelFamily::Gbt | ModelFamily::Mlp => unreachable!("global models are pooled"),
    };
    Ok(out.into_iter().map(|v| v.max(0.0)).collect())
}

fn arx_values(series: &DemandSeries, exog: &[ExogenousFrame], leads: &[u32], lag_order: usize) -> Result<Vec<f64>> {
    let aligned = align_frames(series, exog);
    let frames: Vec<ExogenousFrame> = aligned.iter().map(|(_, f)| *f).collect();
    let y = series.actuals();
    let model = arx::ArxModel::fit(&y, &frames, lag_order)?;
    let max_lead = leads.iter().copied().max().unwrap_or(0) as i64;
    let future: Vec<ExogenousFrame> = (1..=max_lead)
        .map(|i| frame_at(exog, series.last_period().offset(i)))
        .collect();
    let path = model.forecast_path(&y, &future);
    Ok(leads.iter().map(|&h| path[h as usize - 1].max(0.0)).collect())
}

/// Wraps per-lead values into a forecast set. Horizon `h` targets
/// `origin + gap + h` and is produced from lead `gap + h`.
pub fn to_forecast_set(
    key: &SeriesKey,
    origin: PeriodId,
    horizons: &[Horizon],
    gap: u32,
    values: &[f64],
    model_id: &str,
) -> Result<ForecastSet> {
    let points = horizons
        .iter()
        .zip(values)
        .map(|(&h, &v)| ForecastPoint::point_only(h, origin.offset((gap + h.get()) as i64), v))
        .collect();
    ForecastSet::new(key.clone(), origin, points, model_id)
}

fn leads_of(horizons: &[Horizon]) -> Vec<u32> {
    horizons.iter().map(|h| h.get()).collect()
}

pub fn seasonal_naive(series: &DemandSeries, horizons: &[Horizon]) -> Result<ForecastSet> {
    let v = smoothing::seasonal_naive_values(&series.actuals(), &leads_of(horizons))?;
    to_forecast_set(&series.key, series.last_period(), horizons, 0, &v, "seasonal_naive")
}

pub fn exp_smoothing(
    series: &DemandSeries,
    horizons: &[Horizon],
    variant: SmoothingVariant,
    params: SmoothingParams<f64>,
) -> Result<ForecastSet> {
    let v = smoothing::exp_smoothing_values(&series.actuals(), &leads_of(horizons), variant, params)?;
    to_forecast_set(&series.key, series.last_period(), horizons, 0, &v, "exp_smoothing")
}

pub fn croston_family(
    series: &DemandSeries,
    horizons: &[Horizon],
    variant: CrostonVariant,
    alpha: f64,
) -> Result<ForecastSet> {
    let v = croston::croston_values(&series.actuals(), &leads_of(horizons), variant, alpha)?;
    to_forecast_set(&series.key, series.last_period(), horizons, 0, &v, "croston_family")
}

pub fn ar_exog(series: &DemandSeries, exog: &[ExogenousFrame], horizons: &[Horizon], lag_order: usize) -> Result<ForecastSet> {
    let v = arx_values(series, exog, &leads_of(horizons), lag_order)?;
    to_forecast_set(&series.key, series.last_period(), horizons, 0, &v, "arx")
}

pub const GBT_FEATURES: [&str; 15] = [
    "lag_1",
    "lag_2",
    "lag_3",
    "lag_6",
    "lag_12",
    "mean_3",
    "mean_12",
    "target_month",
    "regime_shock",
    "regime_restriction",
    "regime_recovery",
    "months_since_regime_start",
    "cluster_id",
    "price_band",
    "lead",
];

/// Feature row at position `t` (the last known month) for a target `lead`
/// months later. `lag_k` is the value `k - 1` months before `t`.
pub fn gbt_feature_row(
    y: &[f64],
    t: usize,
    lead: u32,
    frame: &ExogenousFrame,
    segment: Option<&SegmentAssignment>,
) -> Vec<f64> {
    let lag = |k: usize| y[t + 1 - k];
    let window_mean = |w: usize| y[t + 1 - w..=t].iter().sum::<f64>() / w as f64;
    let target = frame.period.offset(lead as i64);
    vec![
        lag(1),
        lag(2),
        lag(3),
        lag(6),
        lag(12),
        window_mean(3),
        window_mean(12),
        target.month() as f64,
        (frame.regime == Regime::Shock) as u8 as f64,
        (frame.regime == Regime::Restriction) as u8 as f64,
        (frame.regime == Regime::Recovery) as u8 as f64,
        frame.months_since_regime_start as f64,
        segment.map_or(0.0, |s| s.cluster_id as f64),
        segment.map_or(1.0, |s| s.price_band.ordinal() as f64),
        lead as f64,
    ]
}

/// One pooled boosted model per lead.
pub fn gbt_global(data: TrainingData<'_>, leads: &[u32], params: &GbtParams) -> ModelOutput {
    let prepared: Vec<(&SeriesKey, Vec<f64>, Vec<ExogenousFrame>)> = data
        .series
        .iter()
        .map(|(k, s)| {
            let frames = align_frames(s, data.frames(&k.country)).into_iter().map(|(_, f)| f).collect();
            (k, s.actuals(), frames)
        })
        .collect();
    let per_lead: Vec<Result<GradientBoostedTrees>> = leads
        .par_iter()
        .map(|&lead| {
            let mut x = Vec::new();
            let mut target = Vec::new();
            for (k, y, frames) in &prepared {
                let seg = data.segments.get(*k);
                let end = y.len().saturating_sub(lead as usize);
                for t in 11..end {
                    x.push(gbt_feature_row(y, t, lead, &frames[t], seg));
                    target.push(y[t + lead as usize]);
                }
                if end > 11 {
                    data.observe(k, frames[end - 1 + lead as usize].period);
                }
            }
            GradientBoostedTrees::fit(&x, &target, params)
        })
        .collect();
    prepared
        .iter()
        .map(|(k, y, frames)| {
            let result = if y.len() < 12 {
                Err(CoreError::InsufficientHistory { needed: 12, available: y.len() })
            } else {
                let t = y.len() - 1;
                leads
                    .iter()
                    .zip(&per_lead)
                    .map(|(&lead, model)| match model {
                        Ok(m) => Ok(m.predict(&gbt_feature_row(y, t, lead, &frames[t], data.segments.get(*k))).max(0.0)),
                        Err(e) => Err(e.clone()),
                    })
                    .collect()
            };
            ((*k).clone(), result)
        })
        .collect()
}

pub const MLP_WINDOW: usize = 24;

fn mlp_input(normalized: &[f64], next_month: u32, regime: Regime) -> Vec<f64> {
    let mut x = Vec::with_capacity(MLP_WINDOW + 16);
    x.extend_from_slice(normalized);
    x.extend((1..=12).map(|m| (m == next_month) as u8 as f64));
    x.extend(Regime::ALL.iter().map(|&r| (r == regime) as u8 as f64));
    x
}

fn z_params(y: &[f64]) -> (f64, f64) {
    let mean = crate::num::mean(y).unwrap_or(0.0);
    let sd = crate::num::population_variance(y).unwrap_or(0.0).sqrt();
    (mean, if sd > 1e-9 { sd } else { 1.0 })
}

/// Pooled network over all series; outputs cover leads `1..=max_lead`.
pub fn mlp_seq(data: TrainingData<'_>, leads: &[u32], params: &MlpParams) -> ModelOutput {
    let max_lead = leads.iter().copied().max().unwrap_or(1) as usize;
    let mut samples = Vec::new();
    let mut prepared = Vec::new();
    for (k, s) in data.series {
        let y = s.actuals();
        let (mean, sd) = z_params(&y);
        let z: Vec<f64> = y.iter().map(|v| (v - mean) / sd).collect();
        let frames: Vec<ExogenousFrame> =
            align_frames(s, data.frames(&k.country)).into_iter().map(|(_, f)| f).collect();
        if z.len() >= MLP_WINDOW + max_lead {
            for end in MLP_WINDOW - 1..z.len() - max_lead {
                samples.push(Sample {
                    input: mlp_input(&z[end + 1 - MLP_WINDOW..=end], frames[end].period.succ().month(), frames[end].regime),
                    target: z[end + 1..=end + max_lead].to_vec(),
                });
            }
            data.observe(k, frames[z.len() - 1].period);
        }
        prepared.push((k, z, frames, mean, sd));
    }
    if samples.is_empty() {
        let err = CoreError::InsufficientHistory {
            needed: MLP_WINDOW + max_lead,
            available: data.series.values().map(|s| s.len()).max().unwrap_or(0),
        };
        return data.series.keys().map(|k| (k.clone(), Err(err.clone()))).collect();
    }
    let mut net = Mlp::new(samples[0].input.len(), params.hidden, max_lead, params.seed);
    if let Err(e) = net.train(&samples, params) {
        return data.series.keys().map(|k| (k.clone(), Err(e.clone()))).collect();
    }
    prepared
        .into_iter()
        .map(|(k, z, frames, mean, sd)| {
            let result = if z.len() < MLP_WINDOW {
                Err(CoreError::InsufficientHistory { needed: MLP_WINDOW, available: z.len() })
            } else {
                let end = z.len() - 1;
                let out = net.forward(&mlp_input(&z[end + 1 - MLP_WINDOW..], frames[end].period.succ().month(), frames[end].regime));
                Ok(leads.iter().map(|&h| (out[h as usize - 1] * sd + mean).max(0.0)).collect())
            };
            (k.clone(), result)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::MonthlyObservation;

    fn series(part: &str, values: &[f64]) -> DemandSeries {
        let start = PeriodId::new(2020, 1).unwrap();
        let obs = values
            .iter()
            .enumerate()
            .map(|(i, &v)| MonthlyObservation {
                period: start.offset(i as i64),
                actuals: v,
                revenue: v * 3.0,
                price: (v > 0.0).then_some(3.0),
            })
            .collect();
        DemandSeries::new(SeriesKey::new("DE", part).unwrap(), obs).unwrap()
    }

    #[test]
    fn registry_is_valid_and_unique() {
        let reg = default_registry();
        let ids: std::collections::BTreeSet<_> = reg.iter().map(|s| &s.model_id).collect();
        assert_eq!(ids.len(), reg.len());
        assert!(reg.iter().all(|s| s.validate().is_ok()));
        assert!(ModelSpec::new("x", ModelFamily::EtsLevel, &[("alpha", 0.0)]).validate().is_err());
    }

    #[test]
    fn all_models_forecast_constant_demand() {
        let s = series("P1", &[5.0; 48]);
        let map: BTreeMap<_, _> = [(s.key.clone(), s)].into_iter().collect();
        let exog = BTreeMap::new();
        let segs = BTreeMap::new();
        let data = TrainingData::new(&map, &exog, &segs);
        for spec in default_registry() {
            let out = run_model(&spec, data, &[1, 2, 3]);
            let values = out.values().next().unwrap().as_ref().unwrap();
            for v in values {
                assert!((4.5..=5.5).contains(v), "{} gave {v}", spec.model_id);
            }
        }
    }

    #[test]
    fn deterministic_outputs() {
        let a: Vec<f64> = (0..40).map(|i| ((i * 37) % 11) as f64).collect();
        let b: Vec<f64> = (0..40).map(|i| ((i * 13) % 7) as f64 * 2.0).collect();
        let map: BTreeMap<_, _> = [series("A", &a), series("B", &b)].into_iter().map(|s| (s.key.clone(), s)).collect();
        let (exog, segs) = (BTreeMap::new(), BTreeMap::new());
        let data = TrainingData::new(&map, &exog, &segs);
        for spec in default_registry() {
            let mut spec = spec;
            spec.hyperparameters.insert("epochs".into(), 5.0);
            let x = run_model(&spec, data, &[1, 2]);
            let y = run_model(&spec, data, &[1, 2]);
            assert_eq!(x, y, "{}", spec.model_id);
        }
    }

    #[test]
    fn croston_skips_all_zero_series() {
        let map: BTreeMap<_, _> = [series("Z", &[0.0; 30])].into_iter().map(|s| (s.key.clone(), s)).collect();
        let (exog, segs) = (BTreeMap::new(), BTreeMap::new());
        let data = TrainingData::new(&map, &exog, &segs);
        let spec = default_registry().into_iter().find(|s| s.model_id == "croston").unwrap();
        assert!(run_model(&spec, data, &[1]).values().all(|r| r.is_err()));
    }

    #[test]
    fn forecast_set_wrappers() {
        let s = series("P", &(1..=24).map(|v| v as f64).collect::<Vec<_>>());
        let hs: Vec<Horizon> = (1..=3).map(|h| Horizon::new(h).unwrap()).collect();
        let f = seasonal_naive(&s, &hs).unwrap();
        assert_eq!(f.points.iter().map(|p| p.point).collect::<Vec<_>>(), vec![13.0, 14.0, 15.0]);
        assert_eq!(f.points[0].period, s.last_period().succ());
        let c = croston_family(&s, &hs, CrostonVariant::Sba, 0.2).unwrap();
        assert!(c.points.windows(2).all(|w| w[0].point == w[1].point));
    }

    #[test]
    fn mlp_needs_a_window() {
        let map: BTreeMap<_, _> = [series("S", &[1.0; 20])].into_iter().map(|s| (s.key.clone(), s)).collect();
        let (exog, segs) = (BTreeMap::new(), BTreeMap::new());
        let data = TrainingData::new(&map, &exog, &segs);
        assert!(mlp_seq(data, &[1], &MlpParams::default()).values().all(|r| r.is_err()));
    }
}
