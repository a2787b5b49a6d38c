//! CSV loaders and writers for demand, exogenous and forecast-history files.

use crate::hash::{canonicalize, sha256_hex};
use crate::{Result, StoreError};
use serde::{Deserialize, Serialize};
use sparecast_core::domain::validate_series;
use sparecast_core::fixture::HistoryRow;
use sparecast_core::{DemandSeries, ExogenousFrame, Lifecycle, MonthlyObservation, PeriodId, Regime, SeriesKey};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

pub const DEMAND_HEADER: &str = "country,part,year,month,actuals,revenue,price";
pub const EXOG_HEADER: &str = "country,year,month,regime,months_since_regime_start,lifecycle,holiday_count,macro_index";
pub const HISTORY_HEADER: &str = "country,part,year,month,forecast";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetVersion {
    pub dataset_id: String,
    pub content_hash: String,
    pub loaded_at: String,
    pub row_count: usize,
}

impl DatasetVersion {
    fn of(bytes: &[u8], row_count: usize) -> Self {
        let content_hash = sha256_hex(&canonicalize(bytes));
        Self {
            dataset_id: format!("file-{}", &content_hash[..16]),
            content_hash,
            loaded_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            row_count,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DemandLoad {
    pub series: BTreeMap<SeriesKey, DemandSeries>,
    pub version: DatasetVersion,
    /// Data-quality findings that do not block loading.
    pub defects: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ExogLoad {
    pub frames: BTreeMap<String, Vec<ExogenousFrame>>,
    pub version: DatasetVersion,
    pub defects: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct HistoryLoad {
    pub rows: Vec<HistoryRow>,
    pub version: DatasetVersion,
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| StoreError::Io(format!("cannot read {}: {e}", path.display())))
}

fn malformed(line: usize, reason: impl Into<String>) -> StoreError {
    StoreError::Malformed { line, reason: reason.into() }
}

struct Rows {
    records: Vec<(usize, csv::StringRecord)>,
}

fn parse_rows(bytes: &[u8], header: &str) -> Result<Rows> {
    let canonical = canonicalize(bytes);
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(canonical.as_slice());
    let found = reader.headers().map_err(|e| malformed(1, e.to_string()))?.iter().collect::<Vec<_>>().join(",");
    if found != header {
        return Err(StoreError::Header { expected: header.to_string(), found });
    }
    let mut records = Vec::new();
    for (i, r) in reader.records().enumerate() {
        let line = i + 2;
        let r = r.map_err(|e| malformed(line, e.to_string()))?;
        if r.iter().all(str::is_empty) {
            continue;
        }
        records.push((line, r));
    }
    Ok(Rows { records })
}

fn field<T: std::str::FromStr>(r: &csv::StringRecord, i: usize, name: &str, line: usize) -> Result<T> {
    let raw = r.get(i).unwrap_or("");
    raw.parse().map_err(|_| malformed(line, format!("invalid {name} {raw:?}")))
}

fn period(r: &csv::StringRecord, y: usize, m: usize, line: usize) -> Result<PeriodId> {
    let year: i32 = field(r, y, "year", line)?;
    let month: u32 = field(r, m, "month", line)?;
    PeriodId::new(year, month).map_err(|e| malformed(line, e.to_string()))
}

fn non_negative(v: f64, name: &str, line: usize) -> Result<f64> {
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(StoreError::Negative { line, field: name.to_string() })
    }
}

pub fn parse_demand(bytes: &[u8]) -> Result<DemandLoad> {
    let rows = parse_rows(bytes, DEMAND_HEADER)?;
    let mut grouped: BTreeMap<SeriesKey, BTreeMap<PeriodId, MonthlyObservation>> = BTreeMap::new();
    for (line, r) in &rows.records {
        let line = *line;
        let key = SeriesKey::new(r.get(0).unwrap_or(""), r.get(1).unwrap_or("")).map_err(|e| malformed(line, e.to_string()))?;
        let p = period(r, 2, 3, line)?;
        let actuals = non_negative(field(r, 4, "actuals", line)?, "actuals", line)?;
        let revenue = non_negative(field(r, 5, "revenue", line)?, "revenue", line)?;
        let price = match r.get(6).unwrap_or("") {
            "" => None,
            s => Some(non_negative(s.parse().map_err(|_| malformed(line, format!("invalid price {s:?}")))?, "price", line)?),
        };
        let obs = MonthlyObservation { period: p, actuals, revenue, price };
        if grouped.entry(key.clone()).or_default().insert(p, obs).is_some() {
            return Err(StoreError::Duplicate { line, what: format!("{key} at {p}") });
        }
    }
    let mut defects = Vec::new();
    let mut series = BTreeMap::new();
    for (key, obs) in grouped {
        let s = DemandSeries::with_filled_gaps(key.clone(), obs.into_values().collect())?;
        defects.extend(validate_series(&s).into_iter().map(|d| format!("{key}: {d}")));
        series.insert(key, s);
    }
    Ok(DemandLoad { series, version: DatasetVersion::of(bytes, rows.records.len()), defects })
}

pub fn load_demand_csv(path: &Path) -> Result<DemandLoad> {
    parse_demand(&read(path)?)
}

/// Frames whose `months_since_regime_start` disagrees with the regime
/// timeline: it must be zero exactly when the regime changed this period
/// or is `none`.
pub fn frame_defects(country: &str, frames: &[ExogenousFrame]) -> Vec<String> {
    let mut out = Vec::new();
    for (i, f) in frames.iter().enumerate() {
        let prev = if i == 0 { None } else { Some(&frames[i - 1]) };
        let continues = prev.is_some_and(|p| p.regime == f.regime && p.period.succ() == f.period);
        let ms = f.months_since_regime_start;
        let defect = if f.regime == Regime::None || prev.is_some() && !continues {
            ms != 0
        } else if let (true, Some(p)) = (continues, prev) {
            ms != p.months_since_regime_start + 1
        } else {
            false
        };
        if defect {
            out.push(format!(
                "{country} {}: months_since_regime_start={ms} inconsistent with regime {}",
                f.period,
                f.regime.as_str()
            ));
        }
    }
    out
}

pub fn parse_exogenous(bytes: &[u8]) -> Result<ExogLoad> {
    let rows = parse_rows(bytes, EXOG_HEADER)?;
    let mut grouped: BTreeMap<String, BTreeMap<PeriodId, ExogenousFrame>> = BTreeMap::new();
    for (line, r) in &rows.records {
        let line = *line;
        let country = r.get(0).unwrap_or("");
        if country.is_empty() {
            return Err(malformed(line, "empty country"));
        }
        let p = period(r, 1, 2, line)?;
        let regime: Regime = r.get(3).unwrap_or("").parse().map_err(|e: String| malformed(line, e))?;
        let lifecycle: Lifecycle =
            r.get(5).unwrap_or("").parse().map_err(|e: String| malformed(line, e))?;
        let frame = ExogenousFrame {
            period: p,
            regime,
            months_since_regime_start: field(r, 4, "months_since_regime_start", line)?,
            lifecycle,
            holiday_count: field(r, 6, "holiday_count", line)?,
            macro_index: field(r, 7, "macro_index", line)?,
        };
        if grouped.entry(country.to_string()).or_default().insert(p, frame).is_some() {
            return Err(StoreError::Duplicate { line, what: format!("{country} at {p}") });
        }
    }
    let mut defects = Vec::new();
    let frames = grouped
        .into_iter()
        .map(|(c, m)| {
            let v: Vec<ExogenousFrame> = m.into_values().collect();
            defects.extend(frame_defects(&c, &v));
            (c, v)
        })
        .collect();
    Ok(ExogLoad { frames, version: DatasetVersion::of(bytes, rows.records.len()), defects })
}

pub fn load_exogenous_csv(path: &Path) -> Result<ExogLoad> {
    parse_exogenous(&read(path)?)
}

pub fn parse_history(bytes: &[u8]) -> Result<HistoryLoad> {
    let rows = parse_rows(bytes, HISTORY_HEADER)?;
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::with_capacity(rows.records.len());
    for (line, r) in &rows.records {
        let line = *line;
        let key = SeriesKey::new(r.get(0).unwrap_or(""), r.get(1).unwrap_or("")).map_err(|e| malformed(line, e.to_string()))?;
        let p = period(r, 2, 3, line)?;
        let forecast = non_negative(field(r, 4, "forecast", line)?, "forecast", line)?;
        if !seen.insert((key.clone(), p)) {
            return Err(StoreError::Duplicate { line, what: format!("{key} at {p}") });
        }
        out.push(HistoryRow { key, period: p, forecast });
    }
    out.sort_by(|a, b| (&a.key, a.period).cmp(&(&b.key, b.period)));
    Ok(HistoryLoad { rows: out, version: DatasetVersion::of(bytes, rows.records.len()) })
}

pub fn load_history_csv(path: &Path) -> Result<HistoryLoad> {
    parse_history(&read(path)?)
}

pub fn demand_csv(series: &BTreeMap<SeriesKey, DemandSeries>) -> String {
    let mut out = format!("{DEMAND_HEADER}\n");
    for s in series.values() {
        for o in s.observations() {
            let price = o.price.map(|p| p.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                s.key.country,
                s.key.part,
                o.period.year(),
                o.period.month(),
                o.actuals,
                o.revenue,
                price
            );
        }
    }
    out
}

pub fn exogenous_csv(frames: &BTreeMap<String, Vec<ExogenousFrame>>) -> String {
    let mut out = format!("{EXOG_HEADER}\n");
    for (c, fs) in frames {
        for f in fs {
            let _ = writeln!(
                out,
                "{c},{},{},{},{},{},{},{}",
                f.period.year(),
                f.period.month(),
                f.regime.as_str(),
                f.months_since_regime_start,
                f.lifecycle.as_str(),
                f.holiday_count,
                f.macro_index
            );
        }
    }
    out
}

pub fn history_csv(rows: &[HistoryRow]) -> String {
    let mut out = format!("{HISTORY_HEADER}\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.key.country, r.key.part, r.period.year(), r.period.month(), r.forecast);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demand_examples() {
        let three = "country,part,year,month,actuals,revenue,price\nDE,P1,2021,1,2,8,4\nDE,P1,2021,2,0,0,\nDE,P1,2021,3,1,4,4\n";
        let d = parse_demand(three.as_bytes()).unwrap();
        assert_eq!(d.series.len(), 1);
        assert_eq!(d.series.values().next().unwrap().len(), 3);
        assert!(d.defects.is_empty());

        let gap = "country,part,year,month,actuals,revenue,price\nDE,P1,2021,1,2,8,4\nDE,P1,2021,3,1,4,4\n";
        let s = parse_demand(gap.as_bytes()).unwrap().series.into_values().next().unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.observations()[1].actuals, 0.0);

        let dup = "country,part,year,month,actuals,revenue,price\nDE,P1,2021,1,2,8,4\nDE,P1,2021,1,3,12,4\n";
        let err = parse_demand(dup.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("duplicate observation"), "{err}");
    }

    #[test]
    fn demand_errors_report_lines() {
        let neg = "country,part,year,month,actuals,revenue,price\nDE,P1,2021,1,2,8,4\nDE,P1,2021,2,-1,8,4\n";
        assert!(matches!(parse_demand(neg.as_bytes()), Err(StoreError::Negative { line: 3, .. })));
        let bad = "country,part,year,month,actuals,revenue,price\nDE,P1,2021,13,2,8,4\n";
        assert!(matches!(parse_demand(bad.as_bytes()), Err(StoreError::Malformed { line: 2, .. })));
        let header = "country,part,month,year,actuals,revenue,price\n";
        assert!(matches!(parse_demand(header.as_bytes()), Err(StoreError::Header { .. })));
    }

    #[test]
    fn canonical_bytes_hash_identically() {
        let lf = "country,part,year,month,actuals,revenue,price\nDE,P1,2021,1,2,8,4\n";
        let crlf = "country,part,year,month,actuals,revenue,price  \r\nDE,P1,2021,1,2,8,4\r\n";
        assert_eq!(
            parse_demand(lf.as_bytes()).unwrap().version.content_hash,
            parse_demand(crlf.as_bytes()).unwrap().version.content_hash
        );
    }

    #[test]
    fn exogenous_examples() {
        let ok = format!("{EXOG_HEADER}\nDE,2021,1,none,0,mature,1,100\nDE,2021,2,shock,0,mature,1,99.5\n");
        let e = parse_exogenous(ok.as_bytes()).unwrap();
        assert_eq!(e.frames["DE"][1].regime, Regime::Shock);
        assert!(e.defects.is_empty());
        let bad = format!("{EXOG_HEADER}\nDE,2021,1,pandemic,0,mature,1,100\n");
        assert!(parse_exogenous(bad.as_bytes()).unwrap_err().to_string().contains("unknown regime"));
        let defect = format!("{EXOG_HEADER}\nDE,2021,1,none,0,mature,1,100\nDE,2021,2,shock,2,mature,1,99\n");
        assert_eq!(parse_exogenous(defect.as_bytes()).unwrap().defects.len(), 1);
        let period = format!("{EXOG_HEADER}\nDE,2021,x,none,0,mature,1,100\n");
        assert!(matches!(parse_exogenous(period.as_bytes()), Err(StoreError::Malformed { .. })));
    }

    #[test]
    fn writers_round_trip() {
        let d = sparecast_core::fixture::demo_dataset(7);
        let demand = parse_demand(demand_csv(&d.series).as_bytes()).unwrap();
        assert_eq!(demand.series, d.series);
        let exog = parse_exogenous(exogenous_csv(&d.exog).as_bytes()).unwrap();
        assert_eq!(exog.frames, d.exog);
        assert!(exog.defects.is_empty(), "{:?}", exog.defects);
        let hist = parse_history(history_csv(&d.forecast_history).as_bytes()).unwrap();
        assert_eq!(hist.rows, d.forecast_history);
    }
}
