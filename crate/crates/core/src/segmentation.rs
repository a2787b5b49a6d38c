//! Pareto tiers, intermittency classification, size classes, seasonality
//! strength and descriptor clustering.

use crate::domain::{DemandSeries, ExogenousFrame, Lifecycle, SeriesKey};
use crate::error::{invalid, CoreError, Result};
use crate::num::{self, from_usize, lit, Real};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const ADI_CUTOFF: f64 = 1.32;
pub const CV2_CUTOFF: f64 = 0.49;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemandPattern {
    Smooth,
    Erratic,
    Intermittent,
    Lumpy,
}

impl DemandPattern {
    pub fn classify<T: Real>(adi: T, cv2: T) -> Self {
        let sparse = adi >= lit(ADI_CUTOFF);
        let dispersed = cv2 >= lit(CV2_CUTOFF);
        match (sparse, dispersed) {
            (false, false) => DemandPattern::Smooth,
            (false, true) => DemandPattern::Erratic,
            (true, false) => DemandPattern::Intermittent,
            (true, true) => DemandPattern::Lumpy,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DemandPattern::Smooth => "smooth",
            DemandPattern::Erratic => "erratic",
            DemandPattern::Intermittent => "intermittent",
            DemandPattern::Lumpy => "lumpy",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntermittencyProfile<T> {
    /// `+inf` when the series has no demand at all.
    pub adi: T,
    pub cv2: T,
    pub pattern: DemandPattern,
}

/// ADI and CV² of a demand history.
pub fn intermittency_of<T: Real>(actuals: &[T]) -> Result<IntermittencyProfile<T>> {
    if actuals.len() < 2 {
        return Err(CoreError::InsufficientHistory {
            needed: 2,
            available: actuals.len(),
        });
    }
    let sizes: Vec<T> = actuals.iter().copied().filter(|&a| a > T::zero()).collect();
    if sizes.is_empty() {
        return Ok(IntermittencyProfile {
            adi: T::infinity(),
            cv2: T::zero(),
            pattern: DemandPattern::Lumpy,
        });
    }
    let adi = from_usize::<T>(actuals.len()) / from_usize(sizes.len());
    let m = num::mean(&sizes).unwrap();
    let var = num::population_variance(&sizes).unwrap();
    let cv2 = var / (m * m);
    Ok(IntermittencyProfile {
        adi,
        cv2,
        pattern: DemandPattern::classify(adi, cv2),
    })
}

pub fn intermittency_profile(series: &DemandSeries) -> Result<IntermittencyProfile<f64>> {
    intermittency_of(&series.actuals())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RevenueTier {
    High,
    LongTail,
}

impl RevenueTier {
    pub fn as_str(self) -> &'static str {
        match self {
            RevenueTier::High => "high",
            RevenueTier::LongTail => "long_tail",
        }
    }
}

/// Entities ordered by value descending, ties by key ascending.
pub fn rank_descending<K: Ord + Clone, T: Real>(values: &BTreeMap<K, T>) -> Vec<(K, T)> {
    let mut ranked: Vec<(K, T)> = values.iter().map(|(k, v)| (k.clone(), *v)).collect();
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.0.cmp(&b.0))
    });
    ranked
}

/// Smallest descending-revenue prefix reaching `coverage` of the total is
/// the high tier.
pub fn pareto_tiers<K: Ord + Clone, T: Real>(
    revenues: &BTreeMap<K, T>,
    coverage: T,
) -> Result<BTreeMap<K, RevenueTier>> {
    if revenues.is_empty() {
        return Err(CoreError::EmptyInput("revenues"));
    }
    if !(coverage > T::zero() && coverage < T::one()) {
        return Err(invalid("coverage", "must be in (0, 1)"));
    }
    let total = num::compensated_sum(revenues.values().copied());
    if !(total > T::zero()) {
        return Err(invalid("revenues", "total revenue must be positive"));
    }
    let ranked = rank_descending(revenues);
    let mut out = BTreeMap::new();
    let mut cum = T::zero();
    let mut reached = false;
    for (k, r) in ranked {
        if reached {
            out.insert(k, RevenueTier::LongTail);
        } else {
            cum = cum + r;
            out.insert(k, RevenueTier::High);
            reached = cum / total >= coverage;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeClass {
    Large,
    Medium,
    Small,
}

impl SizeClass {
    pub fn as_str(self) -> &'static str {
        match self {
            SizeClass::Large => "large",
            SizeClass::Medium => "medium",
            SizeClass::Small => "small",
        }
    }
}

/// Top 20% (ceiling) large, up to 50% medium, rest small.
pub fn size_classes<K: Ord + Clone, T: Real>(sizes: &BTreeMap<K, T>) -> BTreeMap<K, SizeClass> {
    let n = sizes.len();
    let large = (n * 20).div_ceil(100);
    let medium_end = (n * 50).div_ceil(100);
    rank_descending(sizes)
        .into_iter()
        .enumerate()
        .map(|(i, (k, _))| {
            let class = if i < large {
                SizeClass::Large
            } else if i < medium_end {
                SizeClass::Medium
            } else {
                SizeClass::Small
            };
            (k, class)
        })
        .collect()
}

/// Share of detrended variance explained by month-of-year means, in `[0, 1]`.
/// Histories shorter than 24 months score 0.
pub fn seasonality_strength_of<T: Real>(values: &[T]) -> T {
    let n = values.len();
    if n < 24 {
        return T::zero();
    }
    let half = lit::<T>(0.5);
    let twelve = lit::<T>(12.0);
    let mut detrended = Vec::with_capacity(n - 12);
    let mut phase = Vec::with_capacity(n - 12);
    for t in 6..n - 6 {
        let inner = num::compensated_sum(values[t - 5..=t + 5].iter().copied());
        let trend = (half * values[t - 6] + inner + half * values[t + 6]) / twelve;
        detrended.push(values[t] - trend);
        phase.push(t % 12);
    }
    let mut sums = [T::zero(); 12];
    let mut counts = [0usize; 12];
    for (&d, &m) in detrended.iter().zip(&phase) {
        sums[m] = sums[m] + d;
        counts[m] += 1;
    }
    let remainder: Vec<T> = detrended
        .iter()
        .zip(&phase)
        .map(|(&d, &m)| d - sums[m] / from_usize(counts[m]))
        .collect();
    let var_d = num::population_variance(&detrended).unwrap();
    let scale = num::mean(values).unwrap();
    let floor = lit::<T>(1e-12) * (T::one() + scale * scale);
    if !(var_d > floor) {
        return T::zero();
    }
    let var_r = num::population_variance(&remainder).unwrap();
    (T::one() - var_r / var_d).max(T::zero()).min(T::one())
}

pub fn seasonality_strength(series: &DemandSeries) -> f64 {
    seasonality_strength_of(&series.actuals())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriceBand {
    Low,
    Mid,
    High,
}

impl PriceBand {
    pub fn ordinal(self) -> u32 {
        self as u32
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PriceBand::Low => "low",
            PriceBand::Mid => "mid",
            PriceBand::High => "high",
        }
    }
}

/// Tercile bands of the per-series mean price (revenue / actuals). Series
/// without any demand fall in the middle band.
pub fn price_bands<K: Ord + Clone>(mean_prices: &BTreeMap<K, Option<f64>>) -> BTreeMap<K, PriceBand> {
    let defined: Vec<f64> = mean_prices.values().filter_map(|p| *p).collect();
    let lo = num::quantile(&defined, 1.0 / 3.0);
    let hi = num::quantile(&defined, 2.0 / 3.0);
    mean_prices
        .iter()
        .map(|(k, p)| {
            let band = match (p, lo, hi) {
                (Some(p), Some(lo), Some(_)) if *p < lo => PriceBand::Low,
                (Some(p), Some(_), Some(hi)) if *p > hi => PriceBand::High,
                _ => PriceBand::Mid,
            };
            (k.clone(), band)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KMeansConfig {
    pub k: usize,
    pub restarts: usize,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            k: 8,
            restarts: 50,
            max_iter: 100,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansRun<T> {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<T>>,
    /// Within-cluster sum of squares after each assignment step.
    pub objective_trace: Vec<T>,
}

impl<T: Real> KMeansRun<T> {
    pub fn objective(&self) -> T {
        *self.objective_trace.last().expect("at least one iteration")
    }
}

fn sq_dist<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// Column-wise z-scores; constant columns map to zero.
pub fn standardize<T: Real>(points: &[Vec<T>]) -> Vec<Vec<T>> {
    if points.is_empty() {
        return Vec::new();
    }
    let dims = points[0].len();
    let mut out = points.to_vec();
    for d in 0..dims {
        let col: Vec<T> = points.iter().map(|p| p[d]).collect();
        let m = num::mean(&col).unwrap();
        let sd = num::population_variance(&col).unwrap().sqrt();
        for row in out.iter_mut() {
            row[d] = if sd > T::zero() { (row[d] - m) / sd } else { T::zero() };
        }
    }
    out
}

/// One Lloyd run from a k-means++ seeding.
pub fn kmeans_single<T: Real>(points: &[Vec<T>], k: usize, max_iter: usize, rng: &mut ChaCha8Rng) -> KMeansRun<T> {
    let n = points.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<T> = points.iter().map(|p| sq_dist(p, &points[chosen[0]])).collect();
    while chosen.len() < k {
        let total: T = d2.iter().copied().sum();
        let next = if total > T::zero() {
            let target = lit::<T>(rng.random::<f64>()) * total;
            let mut acc = T::zero();
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc = acc + d;
                if acc >= target && d > T::zero() {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &points[next]));
        }
    }
    let mut centroids: Vec<Vec<T>> = chosen.iter().map(|&i| points[i].clone()).collect();
    let mut labels = vec![0usize; n];
    let mut trace = Vec::new();
    for _ in 0..max_iter.max(1) {
        let mut objective = T::zero();
        for (i, p) in points.iter().enumerate() {
            let (best, dist) = centroids
                .iter()
                .enumerate()
                .map(|(c, cen)| (c, sq_dist(p, cen)))
                .fold((0, T::infinity()), |acc, x| if x.1 < acc.1 { x } else { acc });
            labels[i] = best;
            objective = objective + dist;
        }
        let converged = trace.last().is_some_and(|&prev: &T| prev == objective);
        trace.push(objective);
        if converged {
            break;
        }
        let dims = points[0].len();
        let mut sums = vec![vec![T::zero(); dims]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for d in 0..dims {
                sums[l][d] = sums[l][d] + p[d];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|&s| s / from_usize(counts[c])).collect();
            }
        }
    }
    KMeansRun {
        labels,
        centroids,
        objective_trace: trace,
    }
}

/// Best-of-restarts k-means on the given points. Labels are renumbered in
/// order of first appearance so the output is independent of seeding order.
pub fn kmeans<T: Real>(points: &[Vec<T>], config: KMeansConfig) -> Result<Vec<usize>> {
    let n = points.len();
    if config.k == 0 || config.k > n {
        return Err(invalid("k", format!("{} not in 1..={n}", config.k)));
    }
    if config.k == n {
        return Ok((0..n).collect());
    }
    let runs: Vec<KMeansRun<T>> = (0..config.restarts.max(1))
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(r as u64));
            kmeans_single(points, config.k, config.max_iter, &mut rng)
        })
        .collect();
    let best = runs
        .iter()
        .enumerate()
        .min_by(|a, b| {
            a.1.objective()
                .partial_cmp(&b.1.objective())
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.0.cmp(&b.0))
        })
        .map(|(_, r)| r)
        .unwrap();
    let mut remap = BTreeMap::new();
    Ok(best
        .labels
        .iter()
        .map(|&l| {
            let next = remap.len();
            *remap.entry(l).or_insert(next)
        })
        .collect())
}

/// Clusters keyed descriptor vectors after z-scoring.
pub fn cluster_series<K: Ord + Clone, T: Real>(
    descriptors: &BTreeMap<K, Vec<T>>,
    config: KMeansConfig,
) -> Result<BTreeMap<K, u32>> {
    let keys: Vec<&K> = descriptors.keys().collect();
    let points = standardize(&descriptors.values().cloned().collect::<Vec<_>>());
    let labels = kmeans(&points, config)?;
    Ok(keys
        .into_iter()
        .cloned()
        .zip(labels.into_iter().map(|l| l as u32))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentAssignment {
    pub key: SeriesKey,
    pub revenue_tier: RevenueTier,
    pub size_class: SizeClass,
    pub cluster_id: u32,
    /// Serialized as `null` when infinite.
    #[serde(with = "crate::num::infinite_as_null")]
    pub adi: f64,
    pub cv2: f64,
    pub pattern: DemandPattern,
    pub seasonality_strength: f64,
    pub price_band: PriceBand,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentationConfig {
    pub coverage: f64,
    pub kmeans: KMeansConfig,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            coverage: 0.8,
            kmeans: KMeansConfig::default(),
        }
    }
}

/// Segments every series in the dataset.
pub fn segment_dataset(
    series: &BTreeMap<SeriesKey, DemandSeries>,
    exog: &BTreeMap<String, Vec<ExogenousFrame>>,
    config: &SegmentationConfig,
) -> Result<BTreeMap<SeriesKey, SegmentAssignment>> {
    if series.is_empty() {
        return Err(CoreError::EmptyInput("series"));
    }
    let revenues: BTreeMap<SeriesKey, f64> =
        series.iter().map(|(k, s)| (k.clone(), s.total_revenue())).collect();
    let tiers = pareto_tiers(&revenues, config.coverage)?;
    let trailing: BTreeMap<SeriesKey, f64> = series
        .iter()
        .map(|(k, s)| {
            let a = s.actuals();
            let start = a.len().saturating_sub(3);
            (k.clone(), a[start..].iter().sum())
        })
        .collect();
    let sizes = size_classes(&trailing);
    let mean_prices: BTreeMap<SeriesKey, Option<f64>> = series
        .iter()
        .map(|(k, s)| {
            let units: f64 = s.actuals().iter().sum();
            (k.clone(), (units > 0.0).then(|| s.total_revenue() / units))
        })
        .collect();
    let bands = price_bands(&mean_prices);

    let mut profiles = BTreeMap::new();
    let mut descriptors = BTreeMap::new();
    for (k, s) in series {
        let actuals = s.actuals();
        let profile = if actuals.len() >= 2 {
            intermittency_of(&actuals)?
        } else {
            IntermittencyProfile {
                adi: if actuals[0] > 0.0 { 1.0 } else { f64::INFINITY },
                cv2: 0.0,
                pattern: DemandPattern::Smooth,
            }
        };
        let strength = seasonality_strength_of(&actuals);
        let lifecycle = exog
            .get(&k.country)
            .map(|frames| crate::domain::frame_at(frames, s.last_period()).lifecycle)
            .unwrap_or(Lifecycle::Mature);
        // no-demand series sit just past the sparsest possible finite ADI
        let adi_feature = if profile.adi.is_finite() { profile.adi } else { actuals.len() as f64 + 1.0 };
        descriptors.insert(
            k.clone(),
            vec![
                adi_feature,
                profile.cv2,
                strength,
                bands[k].ordinal() as f64,
                lifecycle.ordinal() as f64,
            ],
        );
        profiles.insert(k.clone(), (profile, strength));
    }
    let kcfg = KMeansConfig {
        k: config.kmeans.k.min(series.len()),
        ..config.kmeans
    };
    let clusters = cluster_series(&descriptors, kcfg)?;
    Ok(series
        .keys()
        .map(|k| {
            let (profile, strength) = profiles[k];
            (
                k.clone(),
                SegmentAssignment {
                    key: k.clone(),
                    revenue_tier: tiers[k],
                    size_class: sizes[k],
                    cluster_id: clusters[k],
                    adi: profile.adi,
                    cv2: profile.cv2,
                    pattern: profile.pattern,
                    seasonality_strength: strength,
                    price_band: bands[k],
                },
            )
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn intermittency_hand_example() {
        let p = intermittency_of::<f64>(&[0.0, 0.0, 3.0, 0.0, 6.0, 0.0, 0.0, 3.0]).unwrap();
        assert!((p.adi - 8.0 / 3.0).abs() < 1e-12);
        assert!((p.cv2 - 0.125).abs() < 1e-12);
        assert_eq!(p.pattern, DemandPattern::Intermittent);

        let c = intermittency_of(&[5.0f32, 5.0, 5.0, 5.0]).unwrap();
        assert_eq!((c.adi, c.cv2, c.pattern), (1.0, 0.0, DemandPattern::Smooth));

        let z = intermittency_of::<f64>(&[0.0, 0.0, 0.0]).unwrap();
        assert!(z.adi.is_infinite());
        assert_eq!(z.pattern, DemandPattern::Lumpy);
        assert!(intermittency_of::<f64>(&[1.0]).is_err());
    }

    fn map(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn pareto_examples() {
        let t = pareto_tiers(&map(&[("A", 80.0), ("B", 10.0), ("C", 5.0), ("D", 5.0)]), 0.8).unwrap();
        assert_eq!(t["A"], RevenueTier::High);
        assert!(["B", "C", "D"].iter().all(|k| t[*k] == RevenueTier::LongTail));
        let t = pareto_tiers(&map(&[("A", 50.0), ("B", 50.0)]), 0.8).unwrap();
        assert!(t.values().all(|&v| v == RevenueTier::High));
        let t = pareto_tiers(&map(&[("only", 3.0)]), 0.8).unwrap();
        assert_eq!(t["only"], RevenueTier::High);
        assert!(pareto_tiers(&BTreeMap::<String, f64>::new(), 0.8).is_err());
        assert!(pareto_tiers(&map(&[("A", 1.0)]), 1.0).is_err());
    }

    #[test]
    fn size_class_examples() {
        let ten: BTreeMap<String, f64> = (0..10).map(|i| (format!("k{i}"), i as f64)).collect();
        let c = size_classes(&ten);
        let count = |cls| c.values().filter(|&&v| v == cls).count();
        assert_eq!((count(SizeClass::Large), count(SizeClass::Medium), count(SizeClass::Small)), (2, 3, 5));
        assert_eq!(c["k9"], SizeClass::Large);

        let one = size_classes(&map(&[("x", 0.0)]));
        assert_eq!(one["x"], SizeClass::Large);

        let eq = size_classes(&map(&[("e", 1.0), ("d", 1.0), ("c", 1.0), ("b", 1.0), ("a", 1.0)]));
        assert_eq!(eq["a"], SizeClass::Large);
        assert_eq!((eq["b"], eq["c"]), (SizeClass::Medium, SizeClass::Medium));
        assert_eq!((eq["d"], eq["e"]), (SizeClass::Small, SizeClass::Small));
    }

    #[test]
    fn seasonality_examples() {
        let sine: Vec<f64> = (0..48)
            .map(|t| 100.0 + 20.0 * (2.0 * std::f64::consts::PI * t as f64 / 12.0).sin())
            .collect();
        assert!(seasonality_strength_of(&sine) >= 0.95);
        assert_eq!(seasonality_strength_of(&[7.0; 48]), 0.0);
        assert_eq!(seasonality_strength_of(&[1.0; 23]), 0.0);
    }

    #[test]
    fn seasonality_on_white_noise() {
        // 12 monthly means fitted to 36 detrended points absorb about a third
        // of pure noise variance, so noise scores around 1/3 on average.
        let normal = Normal::new(100.0, 10.0).unwrap();
        let scores: Vec<f64> = (0..50u64)
            .map(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let xs: Vec<f64> = (0..48).map(|_| normal.sample(&mut rng)).collect();
                seasonality_strength_of(&xs)
            })
            .collect();
        let avg = scores.iter().sum::<f64>() / scores.len() as f64;
        assert!((0.25..0.40).contains(&avg), "mean strength {avg}");
        assert!(scores.iter().all(|&s| s < 0.7));
    }

    #[test]
    fn kmeans_recovers_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let mut descriptors = BTreeMap::new();
        for i in 0..20 {
            let centre = if i < 10 { 0.0 } else { 5.0 };
            let v: Vec<f64> = (0..5).map(|_| centre + noise.sample(&mut rng)).collect();
            descriptors.insert(i, v);
        }
        let cfg = KMeansConfig { k: 2, ..Default::default() };
        let labels = cluster_series(&descriptors, cfg).unwrap();
        for i in 0..20 {
            assert_eq!(labels[&i], if i < 10 { 0 } else { 1 });
        }
        let one = cluster_series(&descriptors, KMeansConfig { k: 1, ..cfg }).unwrap();
        assert!(one.values().all(|&l| l == 0));
        let all = cluster_series(&descriptors, KMeansConfig { k: 20, ..cfg }).unwrap();
        let distinct: std::collections::BTreeSet<_> = all.values().collect();
        assert_eq!(distinct.len(), 20);
        assert!(cluster_series(&descriptors, KMeansConfig { k: 21, ..cfg }).is_err());
        assert!(cluster_series(&descriptors, KMeansConfig { k: 0, ..cfg }).is_err());
    }

    proptest! {
        #[test]
        fn pattern_partitions_plane(adi in 1.0f64..10.0, cv2 in 0.0f64..5.0) {
            let p = DemandPattern::classify(adi, cv2);
            let expected = match (adi >= 1.32, cv2 >= 0.49) {
                (false, false) => DemandPattern::Smooth,
                (false, true) => DemandPattern::Erratic,
                (true, false) => DemandPattern::Intermittent,
                (true, true) => DemandPattern::Lumpy,
            };
            prop_assert_eq!(p, expected);
        }

        #[test]
        fn pareto_high_tier_is_minimal(revs in proptest::collection::vec(0.01f64..1000.0, 1..40)) {
            let m: BTreeMap<usize, f64> = revs.iter().copied().enumerate().collect();
            let tiers = pareto_tiers(&m, 0.8).unwrap();
            let total: f64 = revs.iter().sum();
            let high: Vec<f64> = m.iter().filter(|(k, _)| tiers[*k] == RevenueTier::High).map(|(_, v)| *v).collect();
            let share: f64 = high.iter().sum::<f64>() / total;
            prop_assert!(share >= 0.8 - 1e-12);
            let lowest = high.iter().copied().fold(f64::INFINITY, f64::min);
            prop_assert!((share - lowest / total) < 0.8);
        }

        #[test]
        fn size_class_counts(n in 1usize..60) {
            let m: BTreeMap<usize, f64> = (0..n).map(|i| (i, (i * 7 % 13) as f64)).collect();
            let c = size_classes(&m);
            let large = c.values().filter(|&&v| v == SizeClass::Large).count();
            let medium = c.values().filter(|&&v| v == SizeClass::Medium).count();
            prop_assert_eq!(large, (n * 20).div_ceil(100));
            prop_assert_eq!(medium, (n * 50).div_ceil(100) - large);
        }

        #[test]
        fn kmeans_objective_never_increases(seed in 0u64..200, n in 6usize..30) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rand::Rng::random::<f64>(&mut rng)).collect()).collect();
            let run = kmeans_single(&pts, 3, 100, &mut rng);
            for w in run.objective_trace.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-12);
            }
        }
    }
}
