//! Service state: the immutable model and application set plus the
//! feedback log, which is the only mutable part. Every mutation is appended
//! to the on-disk log before it is applied and acknowledged; on start the
//! log is replayed through the same path.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use loanlens_core::dataset::Schema;
use loanlens_core::fairness::{overview_counts, GroupSpec, OverviewCounts};
use loanlens_core::feedback::{
    aggregate, fairness_delta, read_events, validate_suggestion, Ack, EventKind, EventRecord, FairnessDelta,
    FeedbackLog, Timestamp,
};
use loanlens_core::model::{
    attribute_similarities, similar_applications, similarity, value_distributions, AttributeImportance,
    CriticalityVector, SimilarApplication, ValueDistribution,
};
use loanlens_core::{
    Application, AttributeKind, Decision, FairnessJudgment, JudgmentVerdict, Prediction, ScoringModel, WeightSuggestion,
};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::error::ApiError;
use crate::query::{parse_filter, parse_sort, Row};

pub const LOG_FILE: &str = "events.ndjson";
pub const DEFAULT_PAGE: usize = 50;
pub const MAX_PAGE: usize = 300;

const DESCRIPTION: &str = "Each application is scored by a logistic regression. Every attribute value \
is scaled to [0, 1] (continuous values by the range seen in training, categories by their position), \
multiplied by the attribute's weight, and the products are added to a constant. The sum is squashed \
into a confidence between 0% and 100%; applications above 50% are accepted. Positive weights push \
towards acceptance, negative weights towards rejection, and the size of a weight is the attribute's \
importance.";

#[derive(Debug, Error)]
pub enum StartupError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("event log line {line}: {message}")]
    Log { line: usize, message: String },
    #[error("application {id}: {message}")]
    Application { id: String, message: String },
    #[error("duplicate application id {0}")]
    DuplicateApplication(String),
}

/// Millisecond clock; injectable so tests can pin timestamps.
pub type Clock = Arc<dyn Fn() -> Timestamp + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(|| {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as Timestamp)
            .unwrap_or(0)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub country: String,
    pub created_at: Timestamp,
    pub pre_rating: Option<u8>,
    pub post_rating: Option<u8>,
    pub taskload: Option<[u8; 6]>,
    #[serde(skip)]
    last_timestamp: Timestamp,
}

#[derive(Debug, Default)]
struct Inner {
    log: FeedbackLog,
    sessions: BTreeMap<String, Session>,
    writer: Option<File>,
}

fn rating(v: &Value, field: &str, lo: u64, hi: u64) -> Result<Option<u8>, ApiError> {
    match v {
        Value::Null => Ok(None),
        Value::Number(n) => match n.as_u64() {
            Some(x) if (lo..=hi).contains(&x) => Ok(Some(x as u8)),
            _ => Err(ApiError::validation(
                field,
                format!("{field} must be an integer in {lo}..={hi}"),
            )),
        },
        _ => Err(ApiError::validation(
            field,
            format!("{field} must be an integer in {lo}..={hi}"),
        )),
    }
}

fn taskload_scores(v: &Value) -> Result<[u8; 6], ApiError> {
    let bad = || ApiError::validation("scores", "scores must be six integers in 0..=100");
    let items = v.as_array().filter(|a| a.len() == 6).ok_or_else(bad)?;
    let mut out = [0u8; 6];
    for (slot, item) in out.iter_mut().zip(items) {
        *slot = rating(item, "scores", 0, 100)?.ok_or_else(bad)?;
    }
    Ok(out)
}

const INTERACTIONS: [EventKind; 4] = [
    EventKind::Filter,
    EventKind::Sort,
    EventKind::SelectApplication,
    EventKind::Compare,
];

impl Inner {
    /// Validates `record` against the current state without changing it.
    fn check(&self, r: &EventRecord, model: &ScoringModel, apps: &BTreeMap<String, usize>) -> Result<(), ApiError> {
        let session_known = || {
            if self.sessions.contains_key(&r.session_id) {
                Ok(())
            } else {
                Err(ApiError::unknown_session(&r.session_id))
            }
        };
        let app_known = |id: &str| {
            if apps.contains_key(id) {
                Ok(())
            } else {
                Err(ApiError::unknown_application(id))
            }
        };
        match r.kind {
            EventKind::Session => {
                if self.sessions.contains_key(&r.session_id) {
                    return Err(ApiError::validation("session_id", "session already exists"));
                }
                let country = r.payload.get("country").and_then(Value::as_str).unwrap_or("");
                if country.trim().is_empty() {
                    return Err(ApiError::validation("country", "country must be non-empty"));
                }
                rating(r.payload.get("pre_rating").unwrap_or(&Value::Null), "pre_rating", 1, 7)?;
            }
            EventKind::Judgment => {
                session_known()?;
                let j = r.to_judgment().map_err(|m| ApiError::validation("verdict", m))?;
                app_known(&j.application_id)?;
            }
            EventKind::Suggestion => {
                session_known()?;
                let s = r.to_suggestion().map_err(|m| ApiError::validation("weights", m))?;
                app_known(&s.application_id)?;
                validate_suggestion(&s, model)?;
            }
            EventKind::Rating => {
                session_known()?;
                match r.payload.get("stage").and_then(Value::as_str) {
                    Some("post") => {
                        rating(r.payload.get("rating").unwrap_or(&Value::Null), "rating", 1, 7)?
                            .ok_or_else(|| ApiError::validation("rating", "rating is required"))?;
                    }
                    Some("taskload") => {
                        taskload_scores(r.payload.get("scores").unwrap_or(&Value::Null))?;
                    }
                    _ => return Err(ApiError::validation("stage", "stage must be post or taskload")),
                }
            }
            kind => {
                debug_assert!(INTERACTIONS.contains(&kind));
                session_known()?;
                if let Some(id) = &r.application_id {
                    app_known(id)?;
                }
            }
        }
        Ok(())
    }

    /// Applies a record that passed `check`.
    fn apply(&mut self, r: EventRecord, model: &ScoringModel) -> Result<Ack, ApiError> {
        match r.kind {
            EventKind::Session => {
                self.sessions.insert(
                    r.session_id.clone(),
                    Session {
                        session_id: r.session_id.clone(),
                        country: r.payload["country"].as_str().unwrap_or_default().trim().to_string(),
                        created_at: r.timestamp,
                        pre_rating: r.payload.get("pre_rating").and_then(Value::as_u64).map(|v| v as u8),
                        post_rating: None,
                        taskload: None,
                        last_timestamp: r.timestamp,
                    },
                );
            }
            EventKind::Rating => {
                let s = self.sessions.get_mut(&r.session_id).expect("checked");
                if r.payload["stage"] == "post" {
                    s.post_rating = r.payload["rating"].as_u64().map(|v| v as u8);
                } else {
                    s.taskload = taskload_scores(&r.payload["scores"]).ok();
                }
            }
            _ => {}
        }
        if let Some(s) = self.sessions.get_mut(&r.session_id) {
            s.last_timestamp = s.last_timestamp.max(r.timestamp);
        }
        Ok(self.log.apply(r, model)?)
    }
}

pub struct Service {
    model: ScoringModel,
    schema: Schema,
    apps: Vec<Application>,
    index: BTreeMap<String, usize>,
    predictions: Vec<Prediction>,
    distributions: Vec<ValueDistribution>,
    group: GroupSpec,
    clock: Clock,
    log_path: Option<PathBuf>,
    inner: RwLock<Inner>,
}

/// One row of the application list.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ListItem {
    pub id: String,
    pub decision: Decision,
    pub confidence: f64,
    pub judgment: Option<JudgmentVerdict>,
    pub needs_human: bool,
    pub suggested: bool,
}

impl Row for ListItem {
    fn id(&self) -> &str {
        &self.id
    }
    fn attribute(&self, _: &str) -> Option<f64> {
        None
    }
    fn confidence(&self) -> f64 {
        self.confidence
    }
    fn decision(&self) -> Decision {
        self.decision
    }
    fn judgment_rank(&self) -> u8 {
        judgment_rank(self.judgment)
    }
}

fn judgment_rank(j: Option<JudgmentVerdict>) -> u8 {
    match j {
        Some(JudgmentVerdict::Fair) => 1,
        Some(JudgmentVerdict::Unfair) => 2,
        _ => 0,
    }
}

struct AppRow<'a> {
    app: &'a Application,
    item: ListItem,
}

impl Row for AppRow<'_> {
    fn id(&self) -> &str {
        &self.item.id
    }
    fn attribute(&self, name: &str) -> Option<f64> {
        self.app.value(name)
    }
    fn confidence(&self) -> f64 {
        self.item.confidence
    }
    fn decision(&self) -> Decision {
        self.item.decision
    }
    fn judgment_rank(&self) -> u8 {
        self.item.judgment_rank()
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct ListQuery {
    pub filter: Option<String>,
    pub sort: Option<String>,
    pub offset: Option<usize>,
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Page {
    pub total: usize,
    pub offset: usize,
    pub limit: usize,
    pub items: Vec<ListItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttributeView {
    pub attribute: String,
    pub kind: AttributeKind,
    pub categories: Vec<String>,
    pub provenance: String,
    pub sensitive: bool,
    pub weight: f64,
    pub importance: f64,
    pub relative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelView {
    pub description: String,
    pub intercept: f64,
    pub slider_limit: f64,
    /// Sorted by importance, largest first.
    pub attributes: Vec<AttributeView>,
    pub distributions: Vec<ValueDistribution>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetailValue {
    pub attribute: String,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub provenance: String,
    pub weight: f64,
    pub scaled: f64,
    pub criticality: f64,
    pub saturation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApplicationDetail {
    pub id: String,
    pub decision: Decision,
    pub confidence: f64,
    pub intercept: f64,
    pub values: Vec<DetailValue>,
    pub judgment: Option<FairnessJudgment>,
    pub suggestion: Option<WeightSuggestion>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparedAttribute {
    pub attribute: String,
    pub value: f64,
    pub other_value: f64,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub id: String,
    pub other_id: String,
    pub similarity: f64,
    pub attributes: Vec<ComparedAttribute>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FairnessReportView {
    #[serde(flatten)]
    pub delta: FairnessDelta,
    pub suggestions: usize,
    pub sessions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionView {
    #[serde(flatten)]
    pub session: Session,
    pub overview: OverviewCounts,
    pub events: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Acknowledgement {
    pub sequence: usize,
    pub timestamp: Timestamp,
}

impl Service {
    /// Builds the service over `apps` and, with a log directory, replays
    /// `events.ndjson` from it and appends new events there.
    pub fn open(
        model: ScoringModel,
        schema: Schema,
        apps: Vec<Application>,
        group: GroupSpec,
        log_dir: Option<&Path>,
        clock: Clock,
    ) -> Result<Self, StartupError> {
        let mut index = BTreeMap::new();
        for (i, a) in apps.iter().enumerate() {
            if index.insert(a.id.clone(), i).is_some() {
                return Err(StartupError::DuplicateApplication(a.id.clone()));
            }
        }
        let predictions = model.predict_all(&apps).map_err(|e| StartupError::Application {
            id: String::new(),
            message: e.to_string(),
        })?;
        let distributions =
            value_distributions(&model, &apps, &predictions).map_err(|e| StartupError::Application {
                id: String::new(),
                message: e.to_string(),
            })?;
        for a in &apps {
            group.membership(a).map_err(|e| StartupError::Application {
                id: a.id.clone(),
                message: e.to_string(),
            })?;
        }
        let service = Self {
            inner: RwLock::new(Inner {
                log: FeedbackLog::new(index.keys().cloned()),
                ..Inner::default()
            }),
            model,
            schema,
            apps,
            index,
            predictions,
            distributions,
            group,
            clock,
            log_path: log_dir.map(|d| d.join(LOG_FILE)),
        };
        if let Some(path) = &service.log_path {
            service.replay_file(path)?;
            let file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|source| StartupError::Io {
                    path: path.clone(),
                    source,
                })?;
            service.inner.write().expect("state lock").writer = Some(file);
        }
        Ok(service)
    }

    fn replay_file(&self, path: &Path) -> Result<(), StartupError> {
        let file = match File::open(path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(()),
            Err(source) => {
                return Err(StartupError::Io {
                    path: path.to_path_buf(),
                    source,
                })
            }
        };
        let records = read_events(BufReader::new(file)).map_err(|e| match e {
            loanlens_core::FeedbackError::Log { line, message } => StartupError::Log { line, message },
            other => StartupError::Log {
                line: 0,
                message: other.to_string(),
            },
        })?;
        self.replay(&records)
    }

    /// Applies `records` in order. On error nothing is applied and the
    /// 1-based position of the offending record is reported.
    pub fn replay(&self, records: &[EventRecord]) -> Result<(), StartupError> {
        let mut guard = self.inner.write().expect("state lock");
        let mut staged = Inner {
            log: guard.log.clone(),
            sessions: guard.sessions.clone(),
            writer: None,
        };
        for (i, r) in records.iter().enumerate() {
            let fail = |e: ApiError| StartupError::Log {
                line: i + 1,
                message: e.body.message,
            };
            staged.check(r, &self.model, &self.index).map_err(fail)?;
            staged.apply(r.clone(), &self.model).map_err(fail)?;
        }
        guard.log = staged.log;
        guard.sessions = staged.sessions;
        Ok(())
    }

    pub fn model(&self) -> &ScoringModel {
        &self.model
    }

    pub fn applications(&self) -> &[Application] {
        &self.apps
    }

    pub fn group(&self) -> &GroupSpec {
        &self.group
    }

    pub fn records(&self) -> Vec<EventRecord> {
        self.inner.read().expect("state lock").log.records().to_vec()
    }

    /// Validates, appends to the log file, then applies.
    fn commit(&self, mut record: EventRecord) -> Result<Acknowledgement, ApiError> {
        let mut inner = self.inner.write().expect("state lock");
        let now = (self.clock)();
        record.timestamp = match inner.sessions.get(&record.session_id) {
            Some(s) => now.max(s.last_timestamp),
            None => now,
        };
        inner.check(&record, &self.model, &self.index)?;
        if let Some(w) = inner.writer.as_mut() {
            let line = record.to_line() + "\n";
            w.write_all(line.as_bytes())
                .and_then(|_| w.flush())
                .map_err(|e| ApiError::internal(format!("event log write failed: {e}")))?;
        }
        let timestamp = record.timestamp;
        let ack = inner.apply(record, &self.model)?;
        Ok(Acknowledgement {
            sequence: ack.sequence,
            timestamp,
        })
    }

    pub fn create_session(
        &self,
        country: &str,
        pre_rating: Option<u8>,
    ) -> Result<(Session, Acknowledgement), ApiError> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let ack = self.commit(EventRecord::session(&id, country.trim(), pre_rating, 0))?;
        let session = self.session(&id)?.session;
        Ok((session, ack))
    }

    pub fn require_session(&self, id: &str) -> Result<(), ApiError> {
        if self.inner.read().expect("state lock").sessions.contains_key(id) {
            Ok(())
        } else {
            Err(ApiError::unknown_session(id))
        }
    }

    fn app(&self, id: &str) -> Result<usize, ApiError> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| ApiError::unknown_application(id))
    }

    pub fn judge(
        &self,
        session: &str,
        app: &str,
        verdict: JudgmentVerdict,
        needs_human: bool,
    ) -> Result<Acknowledgement, ApiError> {
        self.require_session(session)?;
        self.app(app)?;
        self.commit(EventRecord::judgment(&FairnessJudgment {
            session_id: session.to_string(),
            application_id: app.to_string(),
            verdict,
            needs_human,
            timestamp: 0,
        }))
    }

    pub fn suggest(
        &self,
        session: &str,
        app: &str,
        weights: BTreeMap<String, f64>,
    ) -> Result<Acknowledgement, ApiError> {
        self.require_session(session)?;
        self.app(app)?;
        if weights.is_empty() {
            return Err(ApiError::validation("weights", "at least one weight is required"));
        }
        self.commit(EventRecord::suggestion(&WeightSuggestion {
            session_id: session.to_string(),
            application_id: app.to_string(),
            weights,
            timestamp: 0,
        }))
    }

    pub fn interaction(
        &self,
        session: &str,
        kind: EventKind,
        application_id: Option<&str>,
        payload: Value,
    ) -> Result<Acknowledgement, ApiError> {
        if !INTERACTIONS.contains(&kind) {
            return Err(ApiError::validation(
                "type",
                format!("{} events have their own endpoint", kind.as_str()),
            ));
        }
        self.require_session(session)?;
        if let Some(id) = application_id {
            self.app(id)?;
        }
        let payload = if payload.is_null() {
            serde_json::json!({})
        } else {
            payload
        };
        self.commit(EventRecord::new(kind, session, application_id, payload, 0))
    }

    pub fn post_rating(&self, session: &str, value: u8) -> Result<Acknowledgement, ApiError> {
        self.require_session(session)?;
        self.commit(EventRecord::post_rating(session, value, 0))
    }

    pub fn taskload(&self, session: &str, scores: [u8; 6]) -> Result<Acknowledgement, ApiError> {
        self.require_session(session)?;
        self.commit(EventRecord::taskload(session, scores, 0))
    }

    pub fn session(&self, id: &str) -> Result<SessionView, ApiError> {
        let inner = self.inner.read().expect("state lock");
        let session = inner
            .sessions
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::unknown_session(id))?;
        let overview = overview_counts(&self.predictions, &inner.log.judgments_for(id));
        let events = inner.log.records().iter().filter(|r| r.session_id == id).count();
        Ok(SessionView {
            session,
            overview,
            events,
        })
    }

    pub fn overview(&self, session: &str) -> Result<OverviewCounts, ApiError> {
        let inner = self.inner.read().expect("state lock");
        if !inner.sessions.contains_key(session) {
            return Err(ApiError::unknown_session(session));
        }
        Ok(overview_counts(&self.predictions, &inner.log.judgments_for(session)))
    }

    pub fn model_view(&self) -> ModelView {
        let mut importance: Vec<AttributeImportance> = self.model.importance();
        importance.sort_by(|a, b| {
            b.importance
                .total_cmp(&a.importance)
                .then_with(|| a.attribute.cmp(&b.attribute))
        });
        let attributes = importance
            .into_iter()
            .map(|imp| {
                let spec = self
                    .schema
                    .attribute(&imp.attribute)
                    .expect("model attribute in schema");
                AttributeView {
                    attribute: imp.attribute,
                    kind: spec.kind,
                    categories: spec.categories.clone(),
                    provenance: spec.provenance.clone(),
                    sensitive: spec.sensitive,
                    weight: imp.weight,
                    importance: imp.importance,
                    relative: imp.relative,
                }
            })
            .collect();
        ModelView {
            description: DESCRIPTION.to_string(),
            intercept: self.model.intercept,
            slider_limit: loanlens_core::feedback::slider_limit(&self.model),
            attributes,
            distributions: self.distributions.clone(),
        }
    }

    fn item(&self, inner: &Inner, i: usize, session: Option<&str>) -> ListItem {
        let p = &self.predictions[i];
        let id = &self.apps[i].id;
        let judgment = session.and_then(|s| inner.log.judgment(s, id));
        ListItem {
            id: id.clone(),
            decision: p.decision,
            confidence: p.confidence,
            judgment: judgment.map(|j| j.verdict).filter(|v| *v != JudgmentVerdict::Cleared),
            needs_human: judgment.is_some_and(|j| j.needs_human),
            suggested: session.is_some_and(|s| inner.log.suggestion(s, id).is_some()),
        }
    }

    pub fn list(&self, session: Option<&str>, q: &ListQuery) -> Result<Page, ApiError> {
        let filter = parse_filter(q.filter.as_deref().unwrap_or(""), &self.schema)
            .map_err(|e| ApiError::validation("filter", e.0))?;
        let sort = parse_sort(q.sort.as_deref().unwrap_or("")).map_err(|e| ApiError::validation("sort", e.0))?;
        let limit = q.limit.unwrap_or(DEFAULT_PAGE);
        if limit == 0 || limit > MAX_PAGE {
            return Err(ApiError::validation(
                "limit",
                format!("limit must be in 1..={MAX_PAGE}"),
            ));
        }
        let offset = q.offset.unwrap_or(0);
        let inner = self.inner.read().expect("state lock");
        if let Some(s) = session {
            if !inner.sessions.contains_key(s) {
                return Err(ApiError::unknown_session(s));
            }
        }
        let mut rows: Vec<AppRow> = (0..self.apps.len())
            .map(|i| AppRow {
                app: &self.apps[i],
                item: self.item(&inner, i, session),
            })
            .filter(|r| filter.iter().all(|p| p.matches(r)))
            .collect();
        rows.sort_by(|a, b| sort.compare(a, b));
        let total = rows.len();
        let items = rows.into_iter().skip(offset).take(limit).map(|r| r.item).collect();
        Ok(Page {
            total,
            offset,
            limit,
            items,
        })
    }

    pub fn detail(&self, id: &str, session: Option<&str>) -> Result<ApplicationDetail, ApiError> {
        let i = self.app(id)?;
        let app = &self.apps[i];
        let crit: CriticalityVector = self
            .model
            .criticality(app)
            .map_err(|e| ApiError::internal(e.to_string()))?;
        let saturation = crit.saturation();
        let values = crit
            .entries
            .iter()
            .zip(saturation)
            .map(|(e, sat)| {
                let spec = self.schema.attribute(&e.attribute).expect("model attribute in schema");
                let raw = app.value(&e.attribute).unwrap_or(f64::NAN);
                DetailValue {
                    attribute: e.attribute.clone(),
                    value: raw,
                    label: spec.category_label(raw).map(str::to_string),
                    provenance: spec.provenance.clone(),
                    weight: e.weight,
                    scaled: e.value,
                    criticality: e.criticality,
                    saturation: sat,
                }
            })
            .collect();
        let inner = self.inner.read().expect("state lock");
        if let Some(s) = session {
            if !inner.sessions.contains_key(s) {
                return Err(ApiError::unknown_session(s));
            }
        }
        let p = &self.predictions[i];
        Ok(ApplicationDetail {
            id: app.id.clone(),
            decision: p.decision,
            confidence: p.confidence,
            intercept: self.model.intercept,
            values,
            judgment: session.and_then(|s| inner.log.judgment(s, id).cloned()),
            suggestion: session.and_then(|s| inner.log.suggestion(s, id).cloned()),
        })
    }

    /// Every other served application with its similarity to `id`.
    pub fn similar(&self, id: &str, lo: f64, hi: f64) -> Result<Vec<SimilarApplication>, ApiError> {
        let i = self.app(id)?;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return Err(ApiError::validation("lo", "need 0 <= lo <= hi <= 1"));
        }
        let pool: Vec<Application> = self.apps.iter().filter(|a| a.id != id).cloned().collect();
        similar_applications(&self.model, &self.apps[i], &pool, (lo, hi)).map_err(|e| ApiError::internal(e.to_string()))
    }

    pub fn compare(&self, id: &str, other: &str) -> Result<Comparison, ApiError> {
        let (a, b) = (&self.apps[self.app(id)?], &self.apps[self.app(other)?]);
        let enc = &self.model.encoder;
        let parts = attribute_similarities(a, b, enc).map_err(|e| ApiError::internal(e.to_string()))?;
        let attributes = parts
            .into_iter()
            .map(|(attribute, s)| ComparedAttribute {
                value: a.value(&attribute).unwrap_or(f64::NAN),
                other_value: b.value(&attribute).unwrap_or(f64::NAN),
                attribute,
                similarity: s,
            })
            .collect();
        Ok(Comparison {
            id: id.to_string(),
            other_id: other.to_string(),
            similarity: similarity(a, b, enc).map_err(|e| ApiError::internal(e.to_string()))?,
            attributes,
        })
    }

    /// Fairness before and after aggregating every session's suggestions.
    pub fn fairness_report(
        &self,
        group_attribute: Option<&str>,
        protected: Option<&str>,
    ) -> Result<FairnessReportView, ApiError> {
        let group = match group_attribute {
            None => self.group.clone(),
            Some(name) => {
                let spec = self
                    .schema
                    .attribute(name)
                    .ok_or_else(|| ApiError::validation("group_attribute", format!("unknown attribute {name}")))?;
                let value = match (protected, spec.kind) {
                    (Some(v), _) => v.to_string(),
                    (None, AttributeKind::Binary) => spec.categories[1].clone(),
                    (None, _) if name == self.group.attribute => self.group.protected_value.clone(),
                    (None, _) => {
                        return Err(ApiError::validation(
                            "protected",
                            "protected value required for this attribute",
                        ))
                    }
                };
                GroupSpec::new(spec, &value).map_err(|e| ApiError::validation("group_attribute", e.to_string()))?
            }
        };
        let inner = self.inner.read().expect("state lock");
        let suggestions = inner.log.suggestions();
        let adj = aggregate(&suggestions, &self.model, &self.apps)?;
        let delta = fairness_delta(&adj, &self.apps, &group)?;
        let sessions = suggestions
            .iter()
            .map(|s| s.session_id.as_str())
            .collect::<std::collections::BTreeSet<_>>()
            .len();
        Ok(FairnessReportView {
            delta,
            suggestions: suggestions.len(),
            sessions,
        })
    }
}
