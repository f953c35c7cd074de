#![allow(dead_code)]

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use loanlens_core::dataset::{
    generate_synthetic, prune_attributes, split, DEFAULT_BIAS_STRENGTH, DEFAULT_MAX_MISSING_RATE,
};
use loanlens_core::model::train;
use loanlens_core::{Dataset, GroupSpec, ScoringModel, TrainConfig};
use loanlens_service::{router, Clock, Service, StartupError, SESSION_HEADER};
use serde_json::Value;
use tower::ServiceExt;

pub struct Fixture {
    pub model: ScoringModel,
    pub test: Dataset,
    pub group: GroupSpec,
}

pub fn fixture() -> Fixture {
    let data = prune_attributes(
        &generate_synthetic(1000, 1, DEFAULT_BIAS_STRENGTH).unwrap(),
        DEFAULT_MAX_MISSING_RATE,
    )
    .unwrap();
    let (train_set, test) = split(&data, 0.7, 1).unwrap();
    let model = train(&train_set, &TrainConfig::default()).unwrap();
    let group = GroupSpec::new(data.attribute("nationality").unwrap(), "foreign").unwrap();
    Fixture { model, test, group }
}

/// Clock that ticks by one millisecond per reading.
pub fn ticking_clock(start: u64) -> Clock {
    let t = Arc::new(AtomicU64::new(start));
    Arc::new(move || t.fetch_add(1, Ordering::SeqCst))
}

pub fn open(f: &Fixture, log_dir: Option<&Path>) -> Result<Service, StartupError> {
    Service::open(
        f.model.clone(),
        f.test.schema.clone(),
        f.test.applications.clone(),
        f.group.clone(),
        log_dir,
        ticking_clock(1_700_000_000_000),
    )
}

pub fn app(f: &Fixture, log_dir: Option<&Path>) -> Router {
    router(Arc::new(open(f, log_dir).unwrap()))
}

pub async fn call(
    app: &Router,
    method: &str,
    uri: &str,
    token: Option<&str>,
    body: Option<Value>,
) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header(SESSION_HEADER, t);
    }
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(serde_json::to_vec(&b).unwrap()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

pub async fn json(
    app: &Router,
    method: &str,
    uri: &str,
    token: Option<&str>,
    body: Option<Value>,
) -> (StatusCode, Value) {
    let (s, b) = call(app, method, uri, token, body).await;
    let v = if b.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&b).unwrap()
    };
    (s, v)
}

pub async fn new_session(app: &Router, country: &str) -> String {
    let (s, v) = json(
        app,
        "POST",
        "/sessions",
        None,
        Some(serde_json::json!({"country": country, "pre_rating": 4})),
    )
    .await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    v["session_id"].as_str().unwrap().to_string()
}
