//! `sparecast` command line: ingest, segment, backtest, forecast, report
//! and serve over one artifact store.
//!
//! Exit status is 0 on success, 1 when a report fails validation or a
//! stage cannot run (missing artifact, bad data), 2 on usage errors.

mod settings;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};
use settings::Settings;
use sparecast_core::fixture::{demo_dataset, DEMO_SEED};
use sparecast_report::assemble::{Section, REFLECTION_ATTACHMENT};
use sparecast_report::pipeline::{backtest_csv, read_payload, segment, segments_csv, BacktestPayload, ForecastsPayload};
use sparecast_report::{
    run_backtest_stage, run_forecast, validate_contract, ForecastConfig, HttpProvider, NarrativeProvider, Reflection,
    ReportArtifact, ReportError, TemplateProvider,
};
use sparecast_store::ingest::{demand_csv, exogenous_csv, history_csv};
use sparecast_store::{ArtifactStore, StoreError};
use std::fmt::{Display, Write as _};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

const DEFAULT_STORE: &str = "sparecast-store";
const DEFAULT_PORT: u16 = 8750;

#[derive(Parser)]
#[command(name = "sparecast", version, about = "After-sales demand forecasting and monitoring")]
struct Cli {
    /// Artifact store directory.
    #[arg(long, global = true)]
    store: Option<PathBuf>,
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print raw artifact JSON instead of tables.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the seeded fixture dataset and import it.
    Demo {
        #[arg(long, default_value_t = DEMO_SEED)]
        seed: u64,
    },
    /// Import demand, exogenous and optional forecast-history CSVs.
    Ingest {
        #[arg(long)]
        demand: Option<PathBuf>,
        #[arg(long)]
        exog: Option<PathBuf>,
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Segment the dataset and export the assignments as CSV.
    Segment(DatasetArg),
    /// Rolling-origin backtest and weight learning.
    Backtest(DatasetArg),
    /// Backtest, weights and final forecasts.
    Forecast(DatasetArg),
    /// Performance scorecard report.
    Scorecard(ReportArgs),
    /// Overall trend report.
    Trend(ReportArgs),
    /// Month-over-month trend report.
    MonthlyTrend(ReportArgs),
    /// Re-run contract validation on a stored report or a reflection file.
    Validate {
        /// Report run id or path to a reflection JSON file.
        target: String,
    },
    /// Print a stored artifact or one of its attachments.
    Show {
        run_id: String,
        #[arg(long)]
        attachment: Option<String>,
    },
    /// Serve the REST API. The token comes from the environment or config.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long, default_value = "127.0.0.1")]
        bind: String,
    },
}

#[derive(Args)]
struct DatasetArg {
    /// Defaults to the most recently imported dataset.
    #[arg(long)]
    dataset: Option<String>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    dataset: Option<String>,
    /// Forecast config hash; defaults to the latest backtest.
    #[arg(long)]
    config_hash: Option<String>,
    #[arg(long)]
    months: Option<usize>,
    /// Tolerance band in percent.
    #[arg(long, allow_negative_numbers = true)]
    deviation: Option<f64>,
    #[arg(long = "role")]
    roles: Vec<String>,
    #[arg(long = "country")]
    countries: Vec<String>,
    #[arg(long = "part")]
    parts: Vec<String>,
    #[arg(long)]
    top_n: Option<usize>,
    #[arg(long)]
    no_narrative: bool,
    #[arg(long)]
    no_revenue_views: bool,
    #[arg(long)]
    no_trend: bool,
    /// Remote narrative provider; the template provider is used otherwise.
    #[arg(long)]
    narrative_url: Option<String>,
}

enum Failure {
    Usage(String),
    Failed(String),
}

impl Failure {
    fn failed(e: impl Display) -> Self {
        Failure::Failed(e.to_string())
    }
}

impl From<ReportError> for Failure {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::InvalidParameter { .. } => Failure::Usage(e.to_string()),
            other => Failure::Failed(other.to_string()),
        }
    }
}

impl From<StoreError> for Failure {
    fn from(e: StoreError) -> Self {
        Failure::Failed(e.to_string())
    }
}

type Outcome = Result<ExitCode, Failure>;

struct Ctx {
    settings: Settings,
    store_path: PathBuf,
    json: bool,
}

impl Ctx {
    fn store(&self) -> Result<ArtifactStore, Failure> {
        Ok(ArtifactStore::open(&self.store_path)?)
    }

    fn dataset(&self, store: &ArtifactStore, explicit: Option<String>) -> Result<String, Failure> {
        match explicit {
            Some(d) => Ok(d),
            None => store
                .current_dataset()
                .map_err(|_| Failure::Failed("missing dataset: run ingest or demo first".into())),
        }
    }

    fn config(&self) -> Result<ForecastConfig, Failure> {
        Ok(self.settings.forecast.normalized()?)
    }

    fn write_export(&self, name: &str, body: &str) -> Result<PathBuf, Failure> {
        let dir = self.store_path.join("exports");
        std::fs::create_dir_all(&dir).map_err(Failure::failed)?;
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(Failure::failed)?;
        Ok(path)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("usage: sparecast [--store DIR] [--config FILE] [--json] <command>; see `sparecast --help`");
            ExitCode::from(2)
        }
        Err(Failure::Failed(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Outcome {
    let settings = match &cli.config {
        Some(p) => Settings::load(p).map_err(Failure::Usage)?,
        None => Settings::default(),
    };
    let store_path = cli.store.clone().or_else(|| settings.store.clone()).unwrap_or_else(|| DEFAULT_STORE.into());
    let ctx = Ctx { settings, store_path, json: cli.json };
    match cli.command {
        Command::Demo { seed } => demo(&ctx, seed),
        Command::Ingest { demand, exog, history } => ingest(&ctx, demand, exog, history),
        Command::Segment(a) => segment_cmd(&ctx, a.dataset),
        Command::Backtest(a) => backtest_cmd(&ctx, a.dataset),
        Command::Forecast(a) => forecast_cmd(&ctx, a.dataset),
        Command::Scorecard(a) => report_cmd(&ctx, "scorecard", a),
        Command::Trend(a) => report_cmd(&ctx, "trend", a),
        Command::MonthlyTrend(a) => report_cmd(&ctx, "monthly-trend", a),
        Command::Validate { target } => validate_cmd(&ctx, &target),
        Command::Show { run_id, attachment } => show(&ctx, &run_id, attachment.as_deref()),
        Command::Serve { port, bind } => serve(&ctx, port, &bind),
    }
}

/// Writes to standard output, ignoring a closed pipe.
fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|_| out.flush());
}

fn emit_bytes(bytes: &[u8]) {
    let text = String::from_utf8_lossy(bytes);
    emit(&text);
    if !text.ends_with('\n') {
        emit("\n");
    }
}

fn print_json(v: &impl serde::Serialize) {
    emit(&format!("{}\n", serde_json::to_string_pretty(v).expect("serializable")));
}

fn demo(ctx: &Ctx, seed: u64) -> Outcome {
    let store = ctx.store()?;
    let d = demo_dataset(seed);
    let demand = demand_csv(&d.series);
    let exog = exogenous_csv(&d.exog);
    let history = history_csv(&d.forecast_history);
    let dir = ctx.store_path.join("inputs").join(format!("demo-{seed}"));
    std::fs::create_dir_all(&dir).map_err(Failure::failed)?;
    for (name, body) in [("demand.csv", &demand), ("exogenous.csv", &exog), ("history.csv", &history)] {
        std::fs::write(dir.join(name), body).map_err(Failure::failed)?;
    }
    let v = store.import_dataset(demand.as_bytes(), exog.as_bytes(), Some(history.as_bytes()))?;
    if ctx.json {
        print_json(&v);
    } else {
        println!("dataset {} ({} rows, seed {seed})", v.dataset_id, v.row_count);
        println!("inputs written to {}", dir.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn read_input(flag: &str, path: Option<PathBuf>) -> Result<Option<Vec<u8>>, Failure> {
    match path {
        None => Ok(None),
        Some(p) => std::fs::read(&p).map(Some).map_err(|e| Failure::Failed(format!("{flag} {}: {e}", p.display()))),
    }
}

fn ingest(ctx: &Ctx, demand: Option<PathBuf>, exog: Option<PathBuf>, history: Option<PathBuf>) -> Outcome {
    let s = &ctx.settings;
    let demand = read_input("--demand", demand.or_else(|| s.demand.clone()))?
        .ok_or_else(|| Failure::Usage("ingest needs --demand (or `demand` in the config file)".into()))?;
    let exog = read_input("--exog", exog.or_else(|| s.exogenous.clone()))?
        .ok_or_else(|| Failure::Usage("ingest needs --exog (or `exogenous` in the config file)".into()))?;
    let history = read_input("--history", history.or_else(|| s.history.clone()))?;
    let store = ctx.store()?;
    let v = store.import_dataset(&demand, &exog, history.as_deref())?;
    if ctx.json {
        print_json(&v);
    } else {
        println!("dataset {} ({} rows)", v.dataset_id, v.row_count);
    }
    Ok(ExitCode::SUCCESS)
}

fn segment_cmd(ctx: &Ctx, dataset: Option<String>) -> Outcome {
    let store = ctx.store()?;
    let dataset_id = ctx.dataset(&store, dataset)?;
    let config = ctx.config()?;
    let data = store.load_dataset(&dataset_id)?;
    let segments = segment(&data, &config)?;
    let path = ctx.write_export(&format!("segments-{dataset_id}-{}.csv", &config.hash()[..12]), &segments_csv(&segments))?;
    if ctx.json {
        print_json(&segments.values().collect::<Vec<_>>());
        return Ok(ExitCode::SUCCESS);
    }
    let mut counts = std::collections::BTreeMap::<(&str, &str), usize>::new();
    for a in segments.values() {
        *counts.entry((a.pattern.as_str(), a.revenue_tier.as_str())).or_default() += 1;
    }
    println!("{:<14} {:<8} {:>6}", "pattern", "tier", "series");
    for ((p, t), n) in counts {
        println!("{p:<14} {t:<8} {n:>6}");
    }
    println!("{} series segmented; written to {}", segments.len(), path.display());
    Ok(ExitCode::SUCCESS)
}

fn backtest_cmd(ctx: &Ctx, dataset: Option<String>) -> Outcome {
    let store = ctx.store()?;
    let dataset_id = ctx.dataset(&store, dataset)?;
    let config = ctx.config()?;
    let (b, w) = run_backtest_stage(&store, &dataset_id, &config)?;
    let payload: BacktestPayload = read_payload(&store, &b)?;
    let path = ctx.write_export(&format!("{}.csv", b.run_id), &backtest_csv(&payload.records))?;
    let audit = &payload.leakage_audit;
    if ctx.json {
        print_json(&json!({
            "dataset_id": dataset_id,
            "config_hash": b.config_hash,
            "backtest_run": b.run_id,
            "weights_run": w.run_id,
            "records": payload.records.len(),
            "skips": payload.skips.len(),
            "leakage_audit": audit,
        }));
    } else {
        println!("backtest run {}", b.run_id);
        println!("weights run  {}", w.run_id);
        println!("config hash  {}", b.config_hash);
        println!("{} records, {} skipped (key, model) pairs", payload.records.len(), payload.skips.len());
        println!("leakage audit: {} fits checked, {} violations", audit.fits_checked, audit.violations);
        println!("residuals written to {}", path.display());
    }
    if audit.violations > 0 {
        eprintln!("error: {} fits used observations after their origin", audit.violations);
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

fn forecast_cmd(ctx: &Ctx, dataset: Option<String>) -> Outcome {
    let store = ctx.store()?;
    let dataset_id = ctx.dataset(&store, dataset)?;
    let config = ctx.config()?;
    let summary = run_forecast(&store, &dataset_id, &config)?;
    let run = summary.forecasts_run.as_deref().expect("full run has forecasts");
    let (record, bytes) = store.fetch_artifact(run)?;
    if ctx.json {
        emit_bytes(&bytes);
        return Ok(ExitCode::SUCCESS);
    }
    let payload: ForecastsPayload = read_payload(&store, &record)?;
    println!("forecasts run {run} (origin {})", payload.origin);
    println!("{} keys forecast, {} skipped", payload.forecasts.len(), payload.skipped.len());
    println!("{:<12} {:>4} {:>10} {:>10} {:>10}", "key", "h", "point", "lower", "upper");
    for f in payload.forecasts.iter().take(10) {
        for p in &f.forecast.points {
            println!(
                "{:<12} {:>4} {:>10.2} {:>10.2} {:>10.2}",
                f.forecast.key.to_string(),
                p.horizon.get(),
                p.point,
                p.lower,
                p.upper
            );
        }
    }
    if payload.forecasts.len() > 10 {
        println!("... {} more keys; use --json for everything", payload.forecasts.len() - 10);
    }
    Ok(ExitCode::SUCCESS)
}

fn report_params(family: &str, a: &ReportArgs) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("report_family".into(), json!(family));
    if let Some(d) = &a.dataset {
        m.insert("dataset_id".into(), json!(d));
    }
    if let Some(c) = &a.config_hash {
        m.insert("config_hash".into(), json!(c));
    }
    if let Some(x) = a.months {
        m.insert("window_months".into(), json!(x));
    }
    if let Some(x) = a.deviation {
        m.insert("deviation_pct".into(), json!(x));
    }
    if !a.roles.is_empty() {
        m.insert("roles".into(), json!(a.roles));
    }
    if !a.countries.is_empty() {
        m.insert("countries".into(), json!(a.countries));
    }
    if !a.parts.is_empty() {
        m.insert("parts".into(), json!(a.parts));
    }
    if let Some(x) = a.top_n {
        m.insert("top_n".into(), json!(x));
    }
    m.insert(
        "toggles".into(),
        json!({"narrative": !a.no_narrative, "revenue_views": !a.no_revenue_views, "trend": !a.no_trend}),
    );
    m
}

fn provider(url: Option<String>) -> Arc<dyn NarrativeProvider> {
    match url {
        Some(u) => Arc::new(HttpProvider::new(u)),
        None => Arc::new(TemplateProvider),
    }
}

fn report_cmd(ctx: &Ctx, family: &str, a: ReportArgs) -> Outcome {
    let store = ctx.store()?;
    let params = report_params(family, &a);
    let provider = provider(a.narrative_url.clone().or_else(|| ctx.settings.narrative_url.clone()));
    let (record, artifact) = sparecast_service::generate_report(&store, provider.as_ref(), &params)?;
    if ctx.json {
        emit_bytes(&artifact.to_bytes());
    } else {
        print_report(&record.run_id, &artifact);
    }
    Ok(if artifact.passed { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn value_text(v: &Value) -> String {
    match v {
        Value::Null => "n/a".into(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn print_report(run_id: &str, a: &ReportArtifact) {
    let mut out = String::new();
    let _ = writeln!(out, "{} report {run_id}", a.job.report_family);
    let _ = writeln!(out, "status: {}", if a.passed { "passed" } else { "FAILED validation" });
    let _ = writeln!(out, "content hash: {}", a.content_hash);
    let _ = writeln!(out, "window: {} .. {} ({})", a.lineage.window_start, a.lineage.window_end, a.lineage.evaluation_source);
    for s in &a.sections {
        match s {
            Section::Banner { text, violations, .. } => {
                let _ = writeln!(out, "\n!! {text}");
                for v in violations {
                    let _ = writeln!(out, "   - {}: {} ({})", v.kind.label(), v.detail, v.location);
                }
            }
            Section::Summary { title, metrics, .. } => {
                let _ = writeln!(out, "\n{title}");
                for m in metrics {
                    let _ = writeln!(out, "  {:<28} {}", m.name, value_text(&m.value));
                }
            }
            Section::Table { id, title, rows, .. } => {
                let _ = writeln!(out, "  [{id}] {title}: {} rows", rows.len());
            }
            Section::FigureSpec { .. } => {}
        }
    }
    if let Some(narrative) = &a.narrative {
        for (role, blocks) in narrative {
            let _ = writeln!(out, "\n{} narrative", role.as_str());
            for b in blocks {
                let _ = writeln!(out, "  {}  [{}]", b.text, b.provenance);
            }
        }
    }
    emit(&out);
}

fn validate_cmd(ctx: &Ctx, target: &str) -> Outcome {
    let path = Path::new(target);
    let bytes = if path.is_file() {
        std::fs::read(path).map_err(Failure::failed)?
    } else {
        ctx.store()?.fetch_attachment(target, REFLECTION_ATTACHMENT)?
    };
    let reflection: Reflection =
        serde_json::from_slice(&bytes).map_err(|e| Failure::Failed(format!("not a reflection: {e}")))?;
    let (checks, violations) = validate_contract(&reflection);
    if ctx.json {
        print_json(&json!({"checks": checks, "violations": violations}));
    } else {
        for c in &checks {
            println!("{:<24} {:>4} checked {:>3} violations", c.kind.label(), c.items_checked, c.violations);
        }
        for v in &violations {
            println!("violation: {}: {} ({})", v.kind.label(), v.detail, v.location);
        }
        println!("{} violations", violations.len());
    }
    Ok(if violations.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn show(ctx: &Ctx, run_id: &str, attachment: Option<&str>) -> Outcome {
    let store = ctx.store()?;
    let bytes = match attachment {
        Some(name) => store.fetch_attachment(run_id, name)?,
        None => store.fetch_artifact(run_id)?.1,
    };
    emit_bytes(&bytes);
    Ok(ExitCode::SUCCESS)
}

fn serve(ctx: &Ctx, port: Option<u16>, bind: &str) -> Outcome {
    let token = std::env::var(sparecast_service::TOKEN_ENV)
        .ok()
        .filter(|t| !t.is_empty())
        .or_else(|| ctx.settings.token.clone())
        .ok_or_else(|| Failure::Usage(format!("serve needs an API token in {} or `token` in the config file", sparecast_service::TOKEN_ENV)))?;
    let port = port.or(ctx.settings.port).unwrap_or(DEFAULT_PORT);
    let store = ctx.store()?;
    let state = sparecast_service::AppState::new(store, token).with_provider(provider(ctx.settings.narrative_url.clone()));
    let rt = tokio::runtime::Runtime::new().map_err(Failure::failed)?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind((bind, port)).await.map_err(Failure::failed)?;
        let addr = listener.local_addr().map_err(Failure::failed)?;
        println!("listening on http://{addr}");
        sparecast_service::serve(listener, state).await.map_err(Failure::failed)
    })?;
    Ok(ExitCode::SUCCESS)
}
