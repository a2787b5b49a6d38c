//! REST surface over the artifact store. Every `/v1` route except health
//! needs `Authorization: Bearer <token>`; the token is checked before any
//! lookup. Work runs on the blocking pool under a fixed request budget.

use axum::body::{Body, Bytes};
use axum::extract::{Path, Request, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Map, Value};
use sparecast_report::assemble::persist_report;
use sparecast_report::{
    assemble_report, execute_jobspec, normalize_request, run_forecast, ForecastConfig, NarrativeProvider, ReportArtifact,
    ReportError, ReportFamily, TemplateProvider,
};
use sparecast_store::{ArtifactKind, ArtifactStore, RunRecord, StoreError};
use std::sync::Arc;
use std::time::Duration;
use subtle::ConstantTimeEq;

pub const TOKEN_ENV: &str = "SPARECAST_API_TOKEN";
pub const REQUEST_BUDGET: Duration = Duration::from_secs(60);
pub const CONTENT_HASH_HEADER: &str = "x-content-hash";
pub const REPORT_ID_HEADER: &str = "x-report-id";

#[derive(Clone)]
pub struct AppState {
    store: Arc<ArtifactStore>,
    token: Arc<str>,
    provider: Arc<dyn NarrativeProvider>,
    budget: Duration,
}

impl AppState {
    /// Panics on an empty token; callers validate configuration first.
    pub fn new(store: ArtifactStore, token: impl Into<String>) -> Self {
        let token = token.into();
        assert!(!token.is_empty(), "API token must not be empty");
        Self {
            store: Arc::new(store),
            token: token.into(),
            provider: Arc::new(TemplateProvider),
            budget: REQUEST_BUDGET,
        }
    }

    pub fn with_provider(mut self, provider: Arc<dyn NarrativeProvider>) -> Self {
        self.provider = provider;
        self
    }

    pub fn with_budget(mut self, budget: Duration) -> Self {
        self.budget = budget;
        self
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    parameter: Option<String>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into(), parameter: None }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut err = json!({ "code": self.code, "message": self.message });
        if let Some(p) = self.parameter {
            err["parameter"] = Value::String(p);
        }
        (self.status, Json(json!({ "error": err }))).into_response()
    }
}

impl From<ReportError> for ApiError {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::InvalidParameter { name, reason } => ApiError {
                status: StatusCode::UNPROCESSABLE_ENTITY,
                code: "invalid_parameter",
                message: format!("invalid parameter {name}: {reason}"),
                parameter: Some(name),
            },
            ReportError::MissingArtifact(what) => ApiError::new(StatusCode::NOT_FOUND, "missing_artifact", format!("missing {what}")),
            ReportError::NotFound(what) => ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("not found: {what}")),
            ReportError::Store(s) => s.into(),
            ReportError::Core(c) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "unprocessable", c.to_string()),
            ReportError::Corrupt(_) => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "corrupt_artifact", "stored artifact is unreadable"),
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound(what) => ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("not found: {what}")),
            StoreError::Io(_) => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "storage_failure", "storage failure"),
            other => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_input", other.to_string()),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: AppState) -> Router {
    let protected = Router::new()
        .route("/v1/runs", post(create_run))
        .route("/v1/runs/{id}", get(fetch_run))
        .route("/v1/reports/scorecard", post(scorecard))
        .route("/v1/reports/trend-overall", post(trend_overall))
        .route("/v1/reports/trend-monthly", post(trend_monthly))
        .route("/v1/reports/{id}", get(fetch_report))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token));
    Router::new().route("/v1/health", get(health)).merge(protected).with_state(state)
}

pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

async fn require_token(State(state): State<AppState>, headers: HeaderMap, req: Request, next: Next) -> Response {
    let presented = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .unwrap_or("");
    if bool::from(presented.as_bytes().ct_eq(state.token.as_bytes())) {
        next.run(req).await
    } else {
        ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or invalid bearer token").into_response()
    }
}

async fn blocking<T: Send + 'static>(state: &AppState, f: impl FnOnce(&ArtifactStore) -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    let store = state.store.clone();
    let task = tokio::task::spawn_blocking(move || f(&store));
    match tokio::time::timeout(state.budget, task).await {
        Ok(Ok(r)) => r,
        Ok(Err(_)) => Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", "request failed")),
        Err(_) => Err(ApiError::new(StatusCode::GATEWAY_TIMEOUT, "timeout", "request exceeded its time budget")),
    }
}

fn json_object(body: &Bytes) -> ApiResult<Map<String, Value>> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(Map::new());
    }
    match serde_json::from_slice(body) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_json", "request body must be a JSON object")),
        Err(e) => Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_json", format!("request body: {e}"))),
    }
}

fn with_hash(status: StatusCode, content_type: &str, hash: &str, bytes: Vec<u8>) -> Response {
    let mut resp = Response::new(Body::from(bytes));
    *resp.status_mut() = status;
    let h = resp.headers_mut();
    h.insert(header::CONTENT_TYPE, HeaderValue::from_str(content_type).expect("ascii content type"));
    h.insert(CONTENT_HASH_HEADER, HeaderValue::from_str(hash).expect("hex hash"));
    resp
}

fn content_type(kind: ArtifactKind) -> String {
    format!("application/vnd.sparecast.{}+json", kind.as_str())
}

async fn health(State(state): State<AppState>) -> Json<Value> {
    let store = state.store.clone();
    let current = tokio::task::spawn_blocking(move || store.current_dataset().ok()).await.ok().flatten();
    Json(json!({
        "status": "ok",
        "version": env!("CARGO_PKG_VERSION"),
        "store": { "writable": state.store.root().is_dir(), "current_dataset": current },
    }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RunRequest {
    #[serde(default)]
    dataset_id: Option<String>,
    #[serde(default)]
    config: ForecastConfig,
}

async fn create_run(State(state): State<AppState>, body: Bytes) -> ApiResult<Response> {
    let req: RunRequest = serde_json::from_value(Value::Object(json_object(&body)?))
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_config", e.to_string()))?;
    let summary = blocking(&state, move |store| {
        let dataset_id = match req.dataset_id {
            Some(d) => d,
            None => store.current_dataset().map_err(|_| ApiError::new(StatusCode::NOT_FOUND, "not_found", "no dataset loaded"))?,
        };
        store
            .dataset_version(&dataset_id)
            .map_err(|_| ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("not found: dataset {dataset_id}")))?;
        Ok(run_forecast(store, &dataset_id, &req.config)?)
    })
    .await?;
    Ok((StatusCode::OK, Json(summary)).into_response())
}

async fn fetch_run(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let (record, bytes) = blocking(&state, move |store| Ok(store.fetch_artifact(&id)?)).await?;
    Ok(with_hash(StatusCode::OK, &content_type(record.kind), &record.content_hash, bytes))
}

async fn scorecard(state: State<AppState>, body: Bytes) -> ApiResult<Response> {
    report(state, ReportFamily::PerformanceScorecard, body).await
}

async fn trend_overall(state: State<AppState>, body: Bytes) -> ApiResult<Response> {
    report(state, ReportFamily::TrendOverall, body).await
}

async fn trend_monthly(state: State<AppState>, body: Bytes) -> ApiResult<Response> {
    report(state, ReportFamily::TrendMonthly, body).await
}

/// Normalize, execute, validate, assemble and persist one report.
pub fn generate_report(
    store: &ArtifactStore,
    provider: &dyn NarrativeProvider,
    params: &Map<String, Value>,
) -> Result<(RunRecord, ReportArtifact), ReportError> {
    let spec = normalize_request(params)?.resolve(store)?;
    let reflection = execute_jobspec(store, &spec)?;
    let artifact = assemble_report(&reflection, provider);
    let record = persist_report(store, &artifact, &reflection)?;
    let (_, bytes) = store.fetch_artifact(&record.run_id)?;
    let stored = serde_json::from_slice(&bytes).map_err(|e| ReportError::Corrupt(e.to_string()))?;
    Ok((record, stored))
}

async fn report(State(state): State<AppState>, family: ReportFamily, body: Bytes) -> ApiResult<Response> {
    let mut params = json_object(&body)?;
    for name in ["report_family", "family"] {
        if let Some(v) = params.remove(name) {
            if v.as_str().and_then(|s| s.parse::<ReportFamily>().ok()) != Some(family) {
                return Err(ReportError::InvalidParameter { name: name.into(), reason: "does not match the endpoint".into() }.into());
            }
        }
    }
    params.insert("report_family".into(), Value::String(family.as_str().into()));
    let provider = state.provider.clone();
    let (record, artifact) = blocking(&state, move |store| Ok(generate_report(store, provider.as_ref(), &params)?)).await?;
    let mut resp = with_hash(StatusCode::OK, "application/json", &artifact.content_hash, artifact.to_bytes());
    resp.headers_mut().insert(REPORT_ID_HEADER, HeaderValue::from_str(&record.run_id).expect("plain id"));
    Ok(resp)
}

fn is_report(kind: ArtifactKind) -> bool {
    matches!(kind, ArtifactKind::ScorecardReport | ArtifactKind::TrendReport | ArtifactKind::MonthlyTrendReport)
}

async fn fetch_report(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let (record, bytes) = blocking(&state, move |store| Ok(store.fetch_artifact(&id)?)).await?;
    if !is_report(record.kind) {
        return Err(ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("not found: report {}", record.run_id)));
    }
    let artifact: ReportArtifact = serde_json::from_slice(&bytes)
        .map_err(|_| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "corrupt_artifact", "stored artifact is unreadable"))?;
    Ok(with_hash(StatusCode::OK, &content_type(record.kind), &artifact.content_hash, bytes))
}
