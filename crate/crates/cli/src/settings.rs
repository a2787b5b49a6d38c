//! `key = value` configuration file. Blank lines and `#` comments are
//! skipped; list values are comma separated.

use sparecast_report::ForecastConfig;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    pub store: Option<PathBuf>,
    pub demand: Option<PathBuf>,
    pub exogenous: Option<PathBuf>,
    pub history: Option<PathBuf>,
    pub forecast: ForecastConfig,
    pub port: Option<u16>,
    pub token: Option<String>,
    pub narrative_url: Option<String>,
}

pub const KEYS: [&str; 15] = [
    "store",
    "demand",
    "exogenous",
    "history",
    "horizons",
    "n_origins",
    "gap",
    "min_train_length",
    "coverage",
    "clusters",
    "interval_level",
    "models",
    "port",
    "token",
    "narrative_url",
];

fn parsed<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
    value.parse().map_err(|_| format!("{key}: cannot parse {value:?}"))
}

fn items(value: &str) -> impl Iterator<Item = &str> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty())
}

impl Settings {
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut s = Settings::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| format!("line {}: expected key = value", n + 1))?;
            let (key, value) = (key.trim(), value.trim());
            let f = &mut s.forecast;
            match key {
                "store" => s.store = Some(value.into()),
                "demand" => s.demand = Some(value.into()),
                "exogenous" => s.exogenous = Some(value.into()),
                "history" => s.history = Some(value.into()),
                "horizons" => f.horizons = items(value).map(|h| parsed(key, h)).collect::<Result<_, _>>()?,
                "n_origins" => f.n_origins = parsed(key, value)?,
                "gap" => f.gap = parsed(key, value)?,
                "min_train_length" => f.min_train_length = parsed(key, value)?,
                "coverage" => f.coverage = parsed(key, value)?,
                "clusters" => f.clusters = parsed(key, value)?,
                "interval_level" => f.interval_level = parsed(key, value)?,
                "models" => f.models = items(value).map(String::from).collect(),
                "port" => s.port = Some(parsed(key, value)?),
                "token" => s.token = Some(value.to_string()).filter(|t| !t.is_empty()),
                "narrative_url" => s.narrative_url = Some(value.to_string()).filter(|u| !u.is_empty()),
                _ => return Err(format!("line {}: unknown key {key:?} (known: {})", n + 1, KEYS.join(", "))),
            }
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_when_empty() {
        let s = Settings::parse("# nothing\n\n").unwrap();
        assert_eq!(s, Settings::default());
        assert_eq!(s.forecast.horizons, vec![1, 2, 3]);
        assert_eq!(s.forecast.clusters, 8);
    }

    #[test]
    fn reads_every_key() {
        let s = Settings::parse(
            "store = /tmp/s\ndemand=d.csv\nexogenous = e.csv\nhistory = h.csv\nhorizons = 1, 6\nn_origins = 4\n\
             gap = 0\nmin_train_length = 12\ncoverage = 0.9\nclusters = 3\ninterval_level = 0.95\n\
             models = naive, croston\nport = 8080\ntoken = abc\nnarrative_url = http://x\n",
        )
        .unwrap();
        assert_eq!(s.store.as_deref(), Some(Path::new("/tmp/s")));
        assert_eq!(s.history.as_deref(), Some(Path::new("h.csv")));
        assert_eq!(s.forecast.horizons, vec![1, 6]);
        assert_eq!(s.forecast.gap, 0);
        assert_eq!(s.forecast.interval_level, 0.95);
        assert_eq!(s.forecast.models, vec!["naive", "croston"]);
        assert_eq!(s.port, Some(8080));
        assert_eq!(s.token.as_deref(), Some("abc"));
        assert_eq!(s.narrative_url.as_deref(), Some("http://x"));
    }

    #[test]
    fn unknown_and_malformed_rejected() {
        assert!(Settings::parse("colour = red").unwrap_err().contains("unknown key \"colour\""));
        assert!(Settings::parse("clusters = many").unwrap_err().contains("clusters"));
        assert!(Settings::parse("just words").unwrap_err().contains("line 1"));
    }
}
