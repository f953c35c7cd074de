//! Routes and handlers. Handlers translate HTTP to `Service` calls; all
//! logic lives in the state module.

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{FromRequestParts, Path, Query, State};
use axum::http::request::Parts;
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use loanlens_core::fairness::OverviewCounts;
use loanlens_core::feedback::EventKind;
use loanlens_core::model::SimilarApplication;
use loanlens_core::JudgmentVerdict;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::ApiError;
use crate::state::{
    Acknowledgement, ApplicationDetail, Comparison, FairnessReportView, ListQuery, ModelView, Page, Service, Session,
    SessionView,
};
use crate::SESSION_HEADER;

type Shared = Arc<Service>;
type ApiResult<T> = Result<Json<T>, ApiError>;

/// Session token from the header, if one was sent.
pub struct OptionalSession(pub Option<String>);

/// Session token from the header; 401 when absent.
pub struct RequiredSession(pub String);

impl<S: Send + Sync> FromRequestParts<S> for OptionalSession {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, _: &S) -> Result<Self, ApiError> {
        match parts.headers.get(SESSION_HEADER) {
            None => Ok(Self(None)),
            Some(v) => v
                .to_str()
                .map(|s| Self(Some(s.trim().to_string())))
                .map_err(|_| ApiError::missing_session()),
        }
    }
}

impl<S: Send + Sync> FromRequestParts<S> for RequiredSession {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<Self, ApiError> {
        OptionalSession::from_request_parts(parts, state)
            .await?
            .0
            .map(Self)
            .ok_or_else(ApiError::missing_session)
    }
}

fn body<T>(r: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    r.map(|Json(v)| v)
        .map_err(|e| ApiError::validation("body", e.body_text()))
}

fn query<T>(r: Result<Query<T>, QueryRejection>) -> Result<T, ApiError> {
    r.map(|Query(v)| v)
        .map_err(|e| ApiError::validation("query", e.body_text()))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub country: String,
    #[serde(default)]
    pub pre_rating: Option<Value>,
}

#[derive(Debug, Serialize)]
pub struct Created {
    #[serde(flatten)]
    pub session: Session,
    pub sequence: usize,
}

async fn create_session(
    State(s): State<Shared>,
    payload: Result<Json<CreateSession>, JsonRejection>,
) -> Result<(StatusCode, Json<Created>), ApiError> {
    let req = body(payload)?;
    let pre = match req.pre_rating {
        None | Some(Value::Null) => None,
        Some(v) => Some(
            v.as_u64()
                .filter(|r| (1..=7).contains(r))
                .ok_or_else(|| ApiError::validation("pre_rating", "pre_rating must be an integer in 1..=7"))?
                as u8,
        ),
    };
    let (session, ack) = s.create_session(&req.country, pre)?;
    Ok((
        StatusCode::CREATED,
        Json(Created {
            session,
            sequence: ack.sequence,
        }),
    ))
}

async fn get_session(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<SessionView> {
    Ok(Json(s.session(&id)?))
}

async fn overview(State(s): State<Shared>, RequiredSession(id): RequiredSession) -> ApiResult<OverviewCounts> {
    Ok(Json(s.overview(&id)?))
}

async fn model(State(s): State<Shared>) -> Json<ModelView> {
    Json(s.model_view())
}

async fn list(
    State(s): State<Shared>,
    OptionalSession(session): OptionalSession,
    q: Result<Query<ListQuery>, QueryRejection>,
) -> ApiResult<Page> {
    Ok(Json(s.list(session.as_deref(), &query(q)?)?))
}

async fn detail(
    State(s): State<Shared>,
    OptionalSession(session): OptionalSession,
    Path(id): Path<String>,
) -> ApiResult<ApplicationDetail> {
    Ok(Json(s.detail(&id, session.as_deref())?))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JudgmentRequest {
    pub verdict: JudgmentVerdict,
    #[serde(default)]
    pub needs_human: bool,
}

#[derive(Debug, Serialize)]
pub struct JudgmentAck {
    #[serde(flatten)]
    pub ack: Acknowledgement,
    pub overview: OverviewCounts,
}

async fn judge(
    State(s): State<Shared>,
    RequiredSession(session): RequiredSession,
    Path(id): Path<String>,
    payload: Result<Json<JudgmentRequest>, JsonRejection>,
) -> ApiResult<JudgmentAck> {
    s.require_session(&session)?;
    let req = body(payload)?;
    let ack = s.judge(&session, &id, req.verdict, req.needs_human)?;
    Ok(Json(JudgmentAck {
        ack,
        overview: s.overview(&session)?,
    }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsRequest {
    pub weights: BTreeMap<String, f64>,
}

async fn suggest(
    State(s): State<Shared>,
    RequiredSession(session): RequiredSession,
    Path(id): Path<String>,
    payload: Result<Json<WeightsRequest>, JsonRejection>,
) -> ApiResult<Acknowledgement> {
    s.require_session(&session)?;
    let req = body(payload)?;
    Ok(Json(s.suggest(&session, &id, req.weights)?))
}

#[derive(Debug, Deserialize)]
pub struct RangeQuery {
    pub lo: Option<f64>,
    pub hi: Option<f64>,
}

async fn similar(
    State(s): State<Shared>,
    Path(id): Path<String>,
    q: Result<Query<RangeQuery>, QueryRejection>,
) -> ApiResult<Vec<SimilarApplication>> {
    let q = query(q)?;
    Ok(Json(s.similar(&id, q.lo.unwrap_or(0.0), q.hi.unwrap_or(1.0))?))
}

async fn compare(State(s): State<Shared>, Path((id, other)): Path<(String, String)>) -> ApiResult<Comparison> {
    Ok(Json(s.compare(&id, &other)?))
}

#[derive(Debug, Deserialize)]
pub struct FairnessQuery {
    pub group_attribute: Option<String>,
    pub protected: Option<String>,
}

async fn fairness(
    State(s): State<Shared>,
    q: Result<Query<FairnessQuery>, QueryRejection>,
) -> ApiResult<FairnessReportView> {
    let q = query(q)?;
    Ok(Json(s.fairness_report(
        q.group_attribute.as_deref(),
        q.protected.as_deref(),
    )?))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventRequest {
    #[serde(rename = "type")]
    pub kind: EventKind,
    #[serde(default)]
    pub application_id: Option<String>,
    #[serde(default)]
    pub payload: Value,
}

async fn event(
    State(s): State<Shared>,
    Path(id): Path<String>,
    payload: Result<Json<EventRequest>, JsonRejection>,
) -> ApiResult<Acknowledgement> {
    s.require_session(&id)?;
    let req = body(payload)?;
    Ok(Json(s.interaction(
        &id,
        req.kind,
        req.application_id.as_deref(),
        req.payload,
    )?))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatingRequest {
    pub rating: Value,
}

async fn post_rating(
    State(s): State<Shared>,
    Path(id): Path<String>,
    payload: Result<Json<RatingRequest>, JsonRejection>,
) -> ApiResult<Acknowledgement> {
    s.require_session(&id)?;
    let r = body(payload)?
        .rating
        .as_u64()
        .filter(|r| (1..=7).contains(r))
        .ok_or_else(|| ApiError::validation("rating", "rating must be an integer in 1..=7"))?;
    Ok(Json(s.post_rating(&id, r as u8)?))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskloadRequest {
    pub scores: Vec<Value>,
}

async fn taskload(
    State(s): State<Shared>,
    Path(id): Path<String>,
    payload: Result<Json<TaskloadRequest>, JsonRejection>,
) -> ApiResult<Acknowledgement> {
    s.require_session(&id)?;
    let bad = || ApiError::validation("scores", "scores must be six integers in 0..=100");
    let raw = body(payload)?.scores;
    if raw.len() != 6 {
        return Err(bad());
    }
    let mut scores = [0u8; 6];
    for (slot, v) in scores.iter_mut().zip(&raw) {
        *slot = v.as_u64().filter(|x| *x <= 100).ok_or_else(bad)? as u8;
    }
    Ok(Json(s.taskload(&id, scores)?))
}

async fn not_found() -> ApiError {
    ApiError {
        status: StatusCode::NOT_FOUND,
        body: crate::error::ErrorBody {
            code: "no_route",
            message: "no such endpoint".into(),
            field: None,
        },
    }
}

/// Every route as `(method, path)`, matching the committed API description.
pub const ROUTES: [(&str, &str); 14] = [
    ("post", "/sessions"),
    ("get", "/sessions/{id}"),
    ("post", "/sessions/{id}/events"),
    ("post", "/sessions/{id}/post_rating"),
    ("post", "/sessions/{id}/taskload"),
    ("get", "/overview"),
    ("get", "/model"),
    ("get", "/applications"),
    ("get", "/applications/{id}"),
    ("post", "/applications/{id}/judgment"),
    ("post", "/applications/{id}/weights"),
    ("get", "/applications/{id}/similar"),
    ("get", "/applications/{id}/compare/{other}"),
    ("get", "/reports/fairness"),
];

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/events", post(event))
        .route("/sessions/{id}/post_rating", post(post_rating))
        .route("/sessions/{id}/taskload", post(taskload))
        .route("/overview", get(overview))
        .route("/model", get(model))
        .route("/applications", get(list))
        .route("/applications/{id}", get(detail))
        .route("/applications/{id}/judgment", post(judge))
        .route("/applications/{id}/weights", post(suggest))
        .route("/applications/{id}/similar", get(similar))
        .route("/applications/{id}/compare/{other}", get(compare))
        .route("/reports/fairness", get(fairness))
        .fallback(not_found)
        .with_state(service)
}
