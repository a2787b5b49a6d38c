use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use sparecast_core::fixture::{demo_dataset, part_id, DEMO_SEED};
use sparecast_service::{router, AppState, CONTENT_HASH_HEADER, REPORT_ID_HEADER};
use sparecast_store::ingest::{demand_csv, exogenous_csv, history_csv};
use sparecast_store::ArtifactStore;
use tower::ServiceExt;

const TOKEN: &str = "test-token";

fn small_store(dir: &std::path::Path) -> ArtifactStore {
    let d = demo_dataset(DEMO_SEED);
    let parts: Vec<String> = (0..10).map(part_id).collect();
    let keep = |c: &str, p: &str| c != "US" && parts.iter().any(|x| x == p);
    let series = d.series.into_iter().filter(|(k, _)| keep(&k.country, &k.part)).collect();
    let exog = d.exog.into_iter().filter(|(c, _)| c != "US").collect();
    let history: Vec<_> = d.forecast_history.into_iter().filter(|h| keep(&h.key.country, &h.key.part)).collect();
    let store = ArtifactStore::open(dir).unwrap();
    store
        .import_dataset(
            demand_csv(&series).as_bytes(),
            exogenous_csv(&exog).as_bytes(),
            Some(history_csv(&history).as_bytes()),
        )
        .unwrap();
    store
}

fn app(dir: &std::path::Path) -> Router {
    router(AppState::new(small_store(dir), TOKEN))
}

async fn call(app: &Router, method: &str, uri: &str, token: Option<&str>, body: Value) -> (StatusCode, axum::http::HeaderMap, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    if let Some(t) = token {
        req = req.header("authorization", format!("Bearer {t}"));
    }
    let body = if body.is_null() { Body::empty() } else { Body::from(body.to_string()) };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, headers, bytes)
}

fn as_json(b: &[u8]) -> Value {
    serde_json::from_slice(b).unwrap()
}

const RUN: &str = r#"{"config": {"clusters": 3}}"#;

#[tokio::test]
async fn health_is_open_and_everything_else_needs_the_token() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (s, _, b) = call(&app, "GET", "/v1/health", None, Value::Null).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(as_json(&b)["status"], "ok");
    assert!(as_json(&b)["store"]["current_dataset"].is_string());
    for (m, uri) in [("POST", "/v1/runs"), ("GET", "/v1/runs/nope"), ("GET", "/v1/reports/nope"), ("POST", "/v1/reports/scorecard")] {
        for token in [None, Some("wrong"), Some("test-token-x")] {
            let (s, _, b) = call(&app, m, uri, token, Value::Null).await;
            assert_eq!(s, StatusCode::UNAUTHORIZED, "{m} {uri}");
            assert_eq!(as_json(&b)["error"]["code"], "unauthorized");
        }
    }
}

#[tokio::test]
async fn runs_reports_and_fetches() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let root = dir.path().to_string_lossy().to_string();

    let (s, _, b) = call(&app, "POST", "/v1/reports/scorecard", Some(TOKEN), json!({})).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let err = as_json(&b);
    assert_eq!(err["error"]["code"], "missing_artifact");
    assert!(err["error"]["message"].as_str().unwrap().contains("missing backtest artifact"));

    let run: Value = serde_json::from_str(RUN).unwrap();
    let (s, _, b) = call(&app, "POST", "/v1/runs", Some(TOKEN), run.clone()).await;
    assert_eq!(s, StatusCode::OK, "{}", String::from_utf8_lossy(&b));
    let first = as_json(&b);
    for k in ["backtest_run", "weights_run", "forecasts_run"] {
        assert!(first[k].is_string(), "{k}");
    }
    let (_, _, b) = call(&app, "POST", "/v1/runs", Some(TOKEN), run).await;
    assert_eq!(as_json(&b), first);

    let (s, _, b) = call(&app, "POST", "/v1/runs", Some(TOKEN), json!({"config": {"clusterz": 3}})).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(String::from_utf8_lossy(&b).contains("clusterz"));
    let (s, _, _) = call(&app, "POST", "/v1/runs", Some(TOKEN), json!({"dataset_id": "ds-0000000000000000"})).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let weights = first["weights_run"].as_str().unwrap();
    let (s, h, b) = call(&app, "GET", &format!("/v1/runs/{weights}"), Some(TOKEN), Value::Null).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(h["content-type"], "application/vnd.sparecast.weights+json");
    let stored = std::fs::read(dir.path().join("runs").join(weights).join("payload.json")).unwrap();
    assert_eq!(b, stored);

    let (s, _, b) = call(&app, "GET", "/v1/runs/..%2F..%2Fetc", Some(TOKEN), Value::Null).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert!(!String::from_utf8_lossy(&b).contains(&root));

    let params = json!({"months": 6, "deviation": 20});
    let (s, h1, b1) = call(&app, "POST", "/v1/reports/scorecard", Some(TOKEN), params.clone()).await;
    assert_eq!(s, StatusCode::OK, "{}", String::from_utf8_lossy(&b1));
    let art = as_json(&b1);
    assert_eq!(art["passed"], true);
    assert_eq!(h1[CONTENT_HASH_HEADER].to_str().unwrap(), art["content_hash"].as_str().unwrap());
    let (_, h2, b2) = call(&app, "POST", "/v1/reports/scorecard", Some(TOKEN), params).await;
    assert_eq!(h1[CONTENT_HASH_HEADER], h2[CONTENT_HASH_HEADER]);
    assert_eq!(b1, b2);

    let id = h1[REPORT_ID_HEADER].to_str().unwrap().to_string();
    let (s, h, b) = call(&app, "GET", &format!("/v1/reports/{id}"), Some(TOKEN), Value::Null).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(b, b1);
    assert_eq!(h[CONTENT_HASH_HEADER], h1[CONTENT_HASH_HEADER]);
    let (s, _, _) = call(&app, "GET", &format!("/v1/reports/{weights}"), Some(TOKEN), Value::Null).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let (s, _, b) = call(&app, "POST", "/v1/reports/scorecard", Some(TOKEN), json!({"deviation": -5})).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(as_json(&b)["error"]["parameter"], "deviation_pct");
    let (s, _, b) = call(&app, "POST", "/v1/reports/scorecard", Some(TOKEN), json!({"family": "trend"})).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(as_json(&b)["error"]["parameter"], "family");
    let (s, _, b) = call(&app, "POST", "/v1/reports/trend-overall", Some(TOKEN), json!({"bogus": 1})).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(as_json(&b)["error"]["parameter"], "bogus");
    let (s, _, b) = call(&app, "POST", "/v1/reports/scorecard", Some(TOKEN), json!({"countries": ["XX"]})).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(String::from_utf8_lossy(&b).contains("no entities in scope"));
}

#[tokio::test]
async fn concurrent_reports_match_serial_ones() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let run: Value = serde_json::from_str(RUN).unwrap();
    call(&app, "POST", "/v1/runs", Some(TOKEN), run).await;
    let requests = [
        ("/v1/reports/scorecard", json!({"months": 6})),
        ("/v1/reports/trend-overall", json!({"months": 12})),
        ("/v1/reports/trend-monthly", json!({})),
        ("/v1/reports/scorecard", json!({"months": 3, "role": "planner"})),
    ];
    let futures = requests.iter().map(|(u, p)| {
        let (app, u, p) = (app.clone(), u.to_string(), p.clone());
        async move { call(&app, "POST", &u, Some(TOKEN), p).await }
    });
    let parallel: Vec<_> = futures_join(futures.collect()).await;

    let dir2 = tempfile::tempdir().unwrap();
    let app2 = self::app(dir2.path());
    call(&app2, "POST", "/v1/runs", Some(TOKEN), serde_json::from_str(RUN).unwrap()).await;
    for ((u, p), (s, h, _)) in requests.iter().zip(&parallel) {
        assert_eq!(*s, StatusCode::OK);
        let (_, h2, _) = call(&app2, "POST", u, Some(TOKEN), p.clone()).await;
        assert_eq!(h[CONTENT_HASH_HEADER], h2[CONTENT_HASH_HEADER], "{u}");
    }
}

async fn futures_join<F: std::future::Future + Send + 'static>(fs: Vec<F>) -> Vec<F::Output>
where
    F::Output: Send + 'static,
{
    let handles: Vec<_> = fs.into_iter().map(tokio::spawn).collect();
    let mut out = Vec::new();
    for h in handles {
        out.push(h.await.unwrap());
    }
    out
}
