use crate::{invalid, ReportError, Result};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sparecast_core::scorecard::Scope;
use sparecast_store::{ArtifactKind, ArtifactStore};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFamily {
    PerformanceScorecard,
    TrendOverall,
    TrendMonthly,
}

impl ReportFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            ReportFamily::PerformanceScorecard => "performance_scorecard",
            ReportFamily::TrendOverall => "trend_overall",
            ReportFamily::TrendMonthly => "trend_monthly",
        }
    }

    pub fn artifact_kind(self) -> ArtifactKind {
        match self {
            ReportFamily::PerformanceScorecard => ArtifactKind::ScorecardReport,
            ReportFamily::TrendOverall => ArtifactKind::TrendReport,
            ReportFamily::TrendMonthly => ArtifactKind::MonthlyTrendReport,
        }
    }
}

impl FromStr for ReportFamily {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().replace('-', "_").as_str() {
            "performance_scorecard" | "scorecard" => Ok(ReportFamily::PerformanceScorecard),
            "trend_overall" | "trend" => Ok(ReportFamily::TrendOverall),
            "trend_monthly" | "monthly_trend" => Ok(ReportFamily::TrendMonthly),
            _ => Err(invalid("report_family", format!("unknown report family {s:?}"))),
        }
    }
}

impl fmt::Display for ReportFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Executive,
    Planner,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Executive => "executive",
            Role::Planner => "planner",
        }
    }
}

impl FromStr for Role {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "executive" => Ok(Role::Executive),
            "planner" => Ok(Role::Planner),
            _ => Err(invalid("role", format!("unknown role {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Toggles {
    pub revenue_views: bool,
    pub narrative: bool,
    pub trend: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Self { revenue_views: true, narrative: true, trend: true }
    }
}

/// Canonical report request. Field order is the serialization order and
/// every default is written out, so equivalent requests serialize to the
/// same bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobSpec {
    pub report_family: ReportFamily,
    pub dataset_id: Option<String>,
    /// Forecast config whose backtest and weight artifacts the report reads.
    pub config_hash: Option<String>,
    pub window_months: usize,
    pub deviation_pct: f64,
    pub toggles: Toggles,
    pub scope: Scope,
    pub roles: Vec<Role>,
    pub top_n: usize,
}

pub const DEFAULT_WINDOW_MONTHS: usize = 6;
pub const DEFAULT_DEVIATION_PCT: f64 = 20.0;
pub const DEFAULT_TOP_N: usize = 5;
pub const MAX_WINDOW_MONTHS: usize = 240;

impl JobSpec {
    pub fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("job spec serializes")
    }

    pub fn hash(&self) -> String {
        sparecast_store::sha256_hex(&self.canonical_bytes())
    }

    pub fn deviation(&self) -> f64 {
        self.deviation_pct / 100.0
    }

    /// Fills the dataset with the store's current one and the config with
    /// the latest backtest of that dataset.
    pub fn resolve(mut self, store: &ArtifactStore) -> Result<JobSpec> {
        let dataset_id = match self.dataset_id.take() {
            Some(d) => d,
            None => store.current_dataset().map_err(|_| ReportError::MissingArtifact("dataset: run ingest or demo first".into()))?,
        };
        store.dataset_version(&dataset_id).map_err(|_| ReportError::NotFound(format!("dataset {dataset_id}")))?;
        if self.config_hash.is_none() {
            let run = store
                .latest(&dataset_id, ArtifactKind::Residuals)
                .map_err(|_| ReportError::MissingArtifact(format!("backtest artifact for dataset {dataset_id}")))?;
            self.config_hash = Some(run.config_hash);
        }
        self.dataset_id = Some(dataset_id);
        Ok(self)
    }
}

fn number(name: &str, v: &Value) -> Result<f64> {
    let x = match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    };
    x.filter(|x| x.is_finite()).ok_or_else(|| invalid(name, format!("expected a number, got {v}")))
}

fn integer(name: &str, v: &Value) -> Result<usize> {
    let x = number(name, v)?;
    if x.fract() != 0.0 || x < 0.0 {
        return Err(invalid(name, format!("expected a non-negative integer, got {v}")));
    }
    Ok(x as usize)
}

fn boolean(name: &str, v: &Value) -> Result<bool> {
    match v {
        Value::Bool(b) => Ok(*b),
        Value::String(s) => match s.trim() {
            "true" | "on" | "1" | "yes" => Ok(true),
            "false" | "off" | "0" | "no" => Ok(false),
            _ => Err(invalid(name, format!("expected a boolean, got {v}"))),
        },
        _ => Err(invalid(name, format!("expected a boolean, got {v}"))),
    }
}

fn text(name: &str, v: &Value) -> Result<Option<String>> {
    match v {
        Value::Null => Ok(None),
        Value::String(s) if !s.trim().is_empty() => Ok(Some(s.trim().to_string())),
        _ => Err(invalid(name, format!("expected a non-empty string, got {v}"))),
    }
}

fn list(name: &str, v: &Value) -> Result<Vec<String>> {
    let mut out: Vec<String> = match v {
        Value::Array(items) => items
            .iter()
            .map(|i| text(name, i)?.ok_or_else(|| invalid(name, "empty entry")))
            .collect::<Result<_>>()?,
        Value::String(s) => s.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect(),
        Value::Null => Vec::new(),
        _ => return Err(invalid(name, format!("expected a list, got {v}"))),
    };
    out.sort();
    out.dedup();
    Ok(out)
}

/// Turns raw request parameters into a canonical [`JobSpec`]. Accepts the
/// short names a client would send (`family`, `months`, `deviation`,
/// `role`, flat toggles and filters) as well as the canonical field names,
/// so normalizing a serialized spec returns it unchanged.
pub fn normalize_request(raw: &Map<String, Value>) -> Result<JobSpec> {
    let mut family = None;
    let mut spec = JobSpec {
        report_family: ReportFamily::PerformanceScorecard,
        dataset_id: None,
        config_hash: None,
        window_months: DEFAULT_WINDOW_MONTHS,
        deviation_pct: DEFAULT_DEVIATION_PCT,
        toggles: Toggles::default(),
        scope: Scope::default(),
        roles: vec![Role::Executive, Role::Planner],
        top_n: DEFAULT_TOP_N,
    };
    for (k, v) in raw {
        match k.as_str() {
            "report_family" | "family" => {
                let s = text(k, v)?.ok_or_else(|| invalid("report_family", "missing"))?;
                family = Some(s.parse::<ReportFamily>()?);
            }
            "dataset_id" => spec.dataset_id = text(k, v)?,
            "config_hash" => spec.config_hash = text(k, v)?,
            "window_months" | "months" => spec.window_months = integer("window_months", v)?,
            "deviation_pct" | "deviation" => spec.deviation_pct = number("deviation_pct", v)?,
            "revenue_views" => spec.toggles.revenue_views = boolean(k, v)?,
            "narrative" => spec.toggles.narrative = boolean(k, v)?,
            "trend" => spec.toggles.trend = boolean(k, v)?,
            "toggles" => {
                let obj = v.as_object().ok_or_else(|| invalid("toggles", "expected an object"))?;
                for (tk, tv) in obj {
                    match tk.as_str() {
                        "revenue_views" => spec.toggles.revenue_views = boolean(tk, tv)?,
                        "narrative" => spec.toggles.narrative = boolean(tk, tv)?,
                        "trend" => spec.toggles.trend = boolean(tk, tv)?,
                        _ => return Err(invalid(&format!("toggles.{tk}"), "unknown toggle")),
                    }
                }
            }
            "countries" | "country" => spec.scope.countries = list("countries", v)?,
            "parts" | "part" => spec.scope.parts = list("parts", v)?,
            "scope" => {
                let obj = v.as_object().ok_or_else(|| invalid("scope", "expected an object"))?;
                for (sk, sv) in obj {
                    match sk.as_str() {
                        "countries" => spec.scope.countries = list("countries", sv)?,
                        "parts" => spec.scope.parts = list("parts", sv)?,
                        _ => return Err(invalid(&format!("scope.{sk}"), "unknown filter")),
                    }
                }
            }
            "role" => {
                if let Some(r) = text(k, v)? {
                    spec.roles = vec![r.parse()?];
                }
            }
            "roles" => {
                let mut roles = list("roles", v)?.iter().map(|r| r.parse()).collect::<Result<Vec<Role>>>()?;
                roles.sort();
                roles.dedup();
                if roles.is_empty() {
                    return Err(invalid("roles", "at least one role"));
                }
                spec.roles = roles;
            }
            "top_n" => spec.top_n = integer("top_n", v)?,
            _ => return Err(invalid(k, "unknown parameter")),
        }
    }
    spec.report_family = family.ok_or_else(|| invalid("report_family", "missing"))?;
    if spec.window_months == 0 || spec.window_months > MAX_WINDOW_MONTHS {
        return Err(invalid("window_months", format!("out of range: must be in 1..={MAX_WINDOW_MONTHS}")));
    }
    if !(spec.deviation_pct > 0.0 && spec.deviation_pct <= 100.0) {
        return Err(invalid("deviation_pct", "out of range: must be in (0, 100]"));
    }
    if spec.top_n == 0 || spec.top_n > 50 {
        return Err(invalid("top_n", "out of range: must be in 1..=50"));
    }
    Ok(spec)
}

/// Normalizes a spec by round-tripping it through its JSON form.
pub fn renormalize(spec: &JobSpec) -> Result<JobSpec> {
    match serde_json::to_value(spec).expect("job spec serializes") {
        Value::Object(m) => normalize_request(&m),
        _ => unreachable!("job spec is an object"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use serde_json::json;

    fn obj(v: Value) -> Map<String, Value> {
        v.as_object().unwrap().clone()
    }

    #[test]
    fn equivalent_requests_give_identical_bytes() {
        let a = normalize_request(&obj(json!({"family": "scorecard", "months": 6, "deviation": 20}))).unwrap();
        let b = normalize_request(&obj(json!({"deviation": "20", "family": "performance_scorecard", "months": "6"}))).unwrap();
        assert_eq!(a.canonical_bytes(), b.canonical_bytes());
        assert_eq!(renormalize(&a).unwrap(), a);
    }

    #[test]
    fn defaults_are_explicit() {
        let s = normalize_request(&obj(json!({"family": "trend-monthly"}))).unwrap();
        assert_eq!(s.deviation_pct, 20.0);
        assert_eq!(s.window_months, 6);
        assert_eq!(s.toggles, Toggles::default());
        let text = String::from_utf8(s.canonical_bytes()).unwrap();
        assert!(text.contains("\"deviation_pct\":20.0"), "{text}");
    }

    #[test]
    fn out_of_range_names_parameter() {
        let e = normalize_request(&obj(json!({"family": "scorecard", "deviation": -5}))).unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("deviation_pct") && msg.contains("out of range"), "{msg}");
        let e = normalize_request(&obj(json!({"family": "scorecard", "colour": "red"}))).unwrap_err();
        assert!(e.to_string().contains("colour"));
        assert!(normalize_request(&obj(json!({"months": 6}))).unwrap_err().to_string().contains("report_family"));
    }

    #[test]
    fn filters_sorted() {
        let s = normalize_request(&obj(json!({"family": "trend", "countries": "US,DE,US", "role": "planner"}))).unwrap();
        assert_eq!(s.scope.countries, vec!["DE", "US"]);
        assert_eq!(s.roles, vec![Role::Planner]);
    }

    proptest! {
        #[test]
        fn normalization_is_idempotent(
            months in 1usize..48, dev in 1u32..100, rev in any::<bool>(), nar in any::<bool>(),
            countries in proptest::collection::vec("[A-Z]{2}", 0..4), fam in 0usize..3,
        ) {
            let family = ["scorecard", "trend-overall", "trend-monthly"][fam];
            let raw = obj(json!({"family": family, "months": months, "deviation": dev, "revenue_views": rev,
                                 "narrative": nar, "countries": countries}));
            let once = normalize_request(&raw).unwrap();
            let twice = renormalize(&once).unwrap();
            prop_assert_eq!(once.canonical_bytes(), twice.canonical_bytes());
        }
    }
}
