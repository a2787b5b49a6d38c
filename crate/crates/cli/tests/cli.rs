use std::path::Path;
use std::process::{Command, Output};

fn sparecast(store: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sparecast")).arg("--store").arg(store).args(args).output().unwrap()
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

#[test]
fn usage_errors_exit_2_with_synopsis() {
    let dir = tempfile::tempdir().unwrap();
    let o = sparecast(dir.path(), &["forecastify"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o.stderr).contains("Usage"));

    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "clusters = 3\ncolour = red\n").unwrap();
    let o = sparecast(dir.path(), &["--config", cfg.to_str().unwrap(), "segment"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o.stderr).contains("unknown key \"colour\""));

    let o = Command::new(env!("CARGO_BIN_EXE_sparecast"))
        .arg("--store")
        .arg(dir.path())
        .arg("serve")
        .env_remove("SPARECAST_API_TOKEN")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o.stderr).contains("SPARECAST_API_TOKEN"));

    let o = sparecast(dir.path(), &["ingest", "--demand", "nowhere.csv"]);
    assert_eq!(o.status.code(), Some(1), "{}", text(&o.stderr));
}

#[test]
fn pipeline_exit_codes_and_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    let cfg = dir.path().join("fast.cfg");
    std::fs::write(&cfg, "# quick run\nmodels = seasonal_naive, ets_level\nn_origins = 2\n").unwrap();
    let cfg = cfg.to_str().unwrap();

    let o = sparecast(&store, &["scorecard"]);
    assert_eq!(o.status.code(), Some(1));

    assert!(sparecast(&store, &["demo"]).status.success());
    let o = sparecast(&store, &["scorecard", "--months", "6", "--deviation", "20"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o.stderr).contains("missing backtest artifact"), "{}", text(&o.stderr));

    let o = sparecast(&store, &["--config", cfg, "backtest"]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let out = text(&o.stdout);
    assert!(out.contains("leakage audit:") && out.contains(" 0 violations"), "{out}");

    let o = sparecast(&store, &["scorecard", "--months", "6", "--deviation", "20"]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o.stderr));
    let first = text(&o.stdout).lines().next().unwrap().to_string();
    assert!(first.starts_with("performance_scorecard report scorecard-report-"), "{first}");
    let id = first.split_whitespace().last().unwrap().to_string();

    let json = sparecast(&store, &["--json", "scorecard", "--months", "6", "--deviation", "20"]);
    let artifact: serde_json::Value = serde_json::from_slice(&json.stdout).unwrap();
    let shown = sparecast(&store, &["show", &id]);
    assert_eq!(text(&shown.stdout).trim_end(), text(&json.stdout).trim_end());
    assert_eq!(artifact["passed"], true);

    let o = sparecast(&store, &["validate", &id]);
    assert!(o.status.success());
    assert!(text(&o.stdout).contains("0 violations"));

    let o = sparecast(&store, &["scorecard", "--deviation", "-5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o.stderr).contains("deviation_pct"));

    let o = sparecast(&store, &["--config", cfg, "segment"]);
    assert!(o.status.success());
    let exports: Vec<_> = std::fs::read_dir(store.join("exports")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert!(exports.iter().any(|n| n.to_string_lossy().starts_with("segments-")));
    assert!(exports.iter().any(|n| n.to_string_lossy().starts_with("residuals-")));

    let o = sparecast(&store, &["--config", cfg, "--json", "forecast"]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let f: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(f["forecasts"].as_array().unwrap().len(), 120);
}
