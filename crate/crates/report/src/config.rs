use crate::{invalid, Result};
use serde::{Deserialize, Serialize};
use sparecast_core::forecast::{default_registry, ModelSpec};
use sparecast_core::segmentation::{KMeansConfig, SegmentationConfig};
use sparecast_core::Horizon;

/// Parameters of a forecasting run. Its JSON encoding is hashed into the
/// run ids, so every field that changes results belongs here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastConfig {
    pub horizons: Vec<u32>,
    pub n_origins: usize,
    pub gap: u32,
    pub min_train_length: usize,
    /// Pareto coverage for the high-revenue tier.
    pub coverage: f64,
    pub clusters: usize,
    pub interval_level: f64,
    /// Registry model ids; empty means every registered model.
    pub models: Vec<String>,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            horizons: vec![1, 2, 3],
            n_origins: 6,
            gap: 1,
            min_train_length: 24,
            coverage: 0.8,
            clusters: 8,
            interval_level: 0.8,
            models: Vec::new(),
        }
    }
}

pub const MAX_HORIZON: u32 = 24;

impl ForecastConfig {
    /// Sorted, deduplicated copy with the model list spelled out.
    pub fn normalized(&self) -> Result<Self> {
        let mut c = self.clone();
        c.horizons.sort_unstable();
        c.horizons.dedup();
        if c.horizons.is_empty() || c.horizons.iter().any(|&h| h == 0 || h > MAX_HORIZON) {
            return Err(invalid("horizons", format!("need one or more horizons in 1..={MAX_HORIZON}")));
        }
        if c.n_origins == 0 {
            return Err(invalid("n_origins", "must be at least 1"));
        }
        if c.gap > 12 {
            return Err(invalid("gap", "must be at most 12"));
        }
        if c.min_train_length < 2 {
            return Err(invalid("min_train_length", "must be at least 2"));
        }
        if !(c.coverage > 0.0 && c.coverage < 1.0) {
            return Err(invalid("coverage", "must be in (0, 1)"));
        }
        if c.clusters == 0 {
            return Err(invalid("clusters", "must be at least 1"));
        }
        if !(c.interval_level > 0.0 && c.interval_level < 1.0) {
            return Err(invalid("interval_level", "must be in (0, 1)"));
        }
        let registry: Vec<String> = default_registry().into_iter().map(|s| s.model_id).collect();
        if c.models.is_empty() {
            c.models = registry;
        } else {
            c.models.sort();
            c.models.dedup();
            if let Some(m) = c.models.iter().find(|m| !registry.contains(m)) {
                return Err(invalid("models", format!("unknown model {m:?}")));
            }
        }
        Ok(c)
    }

    pub fn specs(&self) -> Vec<ModelSpec> {
        default_registry()
            .into_iter()
            .filter(|s| self.models.is_empty() || self.models.contains(&s.model_id))
            .collect()
    }

    pub fn horizons(&self) -> Vec<Horizon> {
        self.horizons.iter().map(|&h| Horizon::new(h).expect("validated horizon")).collect()
    }

    pub fn segmentation(&self) -> SegmentationConfig {
        SegmentationConfig { coverage: self.coverage, kmeans: KMeansConfig { k: self.clusters, ..KMeansConfig::default() } }
    }

    pub fn hash(&self) -> String {
        sparecast_store::config_hash(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_is_idempotent_and_hash_stable() {
        let c = ForecastConfig { horizons: vec![3, 1, 2, 1], ..Default::default() }.normalized().unwrap();
        assert_eq!(c.horizons, vec![1, 2, 3]);
        assert_eq!(c.models.len(), 10);
        assert_eq!(c.normalized().unwrap(), c);
        assert_eq!(c.hash(), ForecastConfig::default().normalized().unwrap().hash());
    }

    #[test]
    fn bad_values_name_the_parameter() {
        let e = ForecastConfig { coverage: 1.5, ..Default::default() }.normalized().unwrap_err();
        assert!(e.to_string().contains("coverage"));
        let e = ForecastConfig { models: vec!["prophet".into()], ..Default::default() }.normalized().unwrap_err();
        assert!(e.to_string().contains("models"));
    }
}
