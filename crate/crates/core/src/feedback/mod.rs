//! End-user feedback: fairness judgments and per-application weight
//! suggestions, their supersession rules, and the offline aggregation that
//! turns suggestions into adjusted decisions.

pub mod log;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Application, Decision};
use crate::fairness::{audit_decisions, FairnessError, FairnessReport, GroupSpec};
use crate::model::{ModelError, Prediction, ScoringModel};

pub use log::{read_events, write_events, EventKind, EventRecord};

/// Milliseconds since the Unix epoch.
pub type Timestamp = u64;

#[derive(Debug, Error)]
pub enum FeedbackError {
    #[error("unknown {kind} {id}")]
    NotFound { kind: &'static str, id: String },
    #[error("suggested weight {value} for {attribute} is outside [-{limit}, {limit}]")]
    OutOfBounds { attribute: String, value: f64, limit: f64 },
    #[error("unknown attribute {0}")]
    UnknownAttribute(String),
    #[error("event log line {line}: {message}")]
    Log { line: usize, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Fairness(#[from] FairnessError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgmentVerdict {
    Fair,
    Unfair,
    /// Withdraws an earlier fair/unfair markup.
    Cleared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessJudgment {
    pub session_id: String,
    pub application_id: String,
    pub verdict: JudgmentVerdict,
    #[serde(default)]
    pub needs_human: bool,
    pub timestamp: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSuggestion {
    pub session_id: String,
    pub application_id: String,
    /// Suggested weights for the attributes the user touched; others keep
    /// the model's weight.
    pub weights: BTreeMap<String, f64>,
    pub timestamp: Timestamp,
}

type Key = (String, String);

/// Latest judgment per (session, application), in list order.
pub fn effective_judgments(judgments: &[FairnessJudgment]) -> BTreeMap<Key, FairnessJudgment> {
    let mut out = BTreeMap::new();
    for j in judgments {
        out.insert((j.session_id.clone(), j.application_id.clone()), j.clone());
    }
    out
}

/// Latest suggestion per (session, application), in list order.
pub fn effective_suggestions(suggestions: &[WeightSuggestion]) -> BTreeMap<Key, WeightSuggestion> {
    let mut out = BTreeMap::new();
    for s in suggestions {
        out.insert((s.session_id.clone(), s.application_id.clone()), s.clone());
    }
    out
}

/// Suggestions may range over `[-2 max|w|, 2 max|w|]` of the original model.
pub fn slider_limit(m: &ScoringModel) -> f64 {
    2.0 * m.max_abs_weight()
}

pub fn validate_suggestion(s: &WeightSuggestion, m: &ScoringModel) -> Result<(), FeedbackError> {
    let limit = slider_limit(m);
    for (attribute, &value) in &s.weights {
        if m.weight(attribute).is_none() {
            return Err(FeedbackError::UnknownAttribute(attribute.clone()));
        }
        if !value.is_finite() || value.abs() > limit {
            return Err(FeedbackError::OutOfBounds {
                attribute: attribute.clone(),
                value,
                limit,
            });
        }
    }
    Ok(())
}

/// Sequence number of an accepted record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub sequence: usize,
}

/// Append-only feedback store with supersession. State is a pure fold over
/// the recorded events.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeedbackLog {
    applications: BTreeSet<String>,
    sessions: BTreeSet<String>,
    records: Vec<EventRecord>,
    judgments: BTreeMap<Key, FairnessJudgment>,
    suggestions: BTreeMap<Key, WeightSuggestion>,
}

impl FeedbackLog {
    pub fn new<I, S>(application_ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            applications: application_ids.into_iter().map(Into::into).collect(),
            ..Self::default()
        }
    }

    pub fn records(&self) -> &[EventRecord] {
        &self.records
    }

    pub fn has_session(&self, id: &str) -> bool {
        self.sessions.contains(id)
    }

    pub fn sessions(&self) -> impl Iterator<Item = &str> {
        self.sessions.iter().map(String::as_str)
    }

    fn check(&self, session: &str, application: Option<&str>) -> Result<(), FeedbackError> {
        if !self.sessions.contains(session) {
            return Err(FeedbackError::NotFound {
                kind: "session",
                id: session.to_string(),
            });
        }
        if let Some(app) = application {
            if !self.applications.contains(app) {
                return Err(FeedbackError::NotFound {
                    kind: "application",
                    id: app.to_string(),
                });
            }
        }
        Ok(())
    }

    fn push(&mut self, record: EventRecord) -> Ack {
        self.records.push(record);
        Ack {
            sequence: self.records.len() - 1,
        }
    }

    pub fn open_session(&mut self, record: EventRecord) -> Ack {
        debug_assert_eq!(record.kind, EventKind::Session);
        self.sessions.insert(record.session_id.clone());
        self.push(record)
    }

    pub fn record_judgment(&mut self, j: FairnessJudgment) -> Result<Ack, FeedbackError> {
        self.check(&j.session_id, Some(&j.application_id))?;
        let record = EventRecord::judgment(&j);
        self.judgments
            .insert((j.session_id.clone(), j.application_id.clone()), j);
        Ok(self.push(record))
    }

    pub fn record_suggestion(&mut self, s: WeightSuggestion, m: &ScoringModel) -> Result<Ack, FeedbackError> {
        self.check(&s.session_id, Some(&s.application_id))?;
        validate_suggestion(&s, m)?;
        let record = EventRecord::suggestion(&s);
        self.suggestions
            .insert((s.session_id.clone(), s.application_id.clone()), s);
        Ok(self.push(record))
    }

    /// Interaction events without effect on feedback state (filter, sort,
    /// selection, comparison, ratings).
    pub fn record_interaction(&mut self, record: EventRecord) -> Result<Ack, FeedbackError> {
        self.check(&record.session_id, None)?;
        Ok(self.push(record))
    }

    /// Applies one record of any kind.
    pub fn apply(&mut self, record: EventRecord, m: &ScoringModel) -> Result<Ack, FeedbackError> {
        let invalid = |message: String| FeedbackError::Log { line: 0, message };
        match record.kind {
            EventKind::Session => Ok(self.open_session(record)),
            EventKind::Judgment => self.record_judgment(record.to_judgment().map_err(invalid)?),
            EventKind::Suggestion => self.record_suggestion(record.to_suggestion().map_err(invalid)?, m),
            _ => self.record_interaction(record),
        }
    }

    /// Rebuilds state from `records`; errors carry the 1-based position of
    /// the offending record.
    pub fn replay<I, S>(application_ids: I, records: &[EventRecord], m: &ScoringModel) -> Result<Self, FeedbackError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut log = Self::new(application_ids);
        for (i, r) in records.iter().enumerate() {
            log.apply(r.clone(), m).map_err(|e| FeedbackError::Log {
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        Ok(log)
    }

    pub fn judgments(&self) -> impl Iterator<Item = &FairnessJudgment> {
        self.judgments.values()
    }

    pub fn judgments_for(&self, session: &str) -> Vec<FairnessJudgment> {
        self.judgments
            .values()
            .filter(|j| j.session_id == session)
            .cloned()
            .collect()
    }

    pub fn judgment(&self, session: &str, application: &str) -> Option<&FairnessJudgment> {
        self.judgments.get(&(session.to_string(), application.to_string()))
    }

    pub fn suggestion(&self, session: &str, application: &str) -> Option<&WeightSuggestion> {
        self.suggestions.get(&(session.to_string(), application.to_string()))
    }

    /// Effective suggestions, ordered by (session, application).
    pub fn suggestions(&self) -> Vec<WeightSuggestion> {
        self.suggestions.values().cloned().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjustedDecision {
    pub application_id: String,
    /// Effective weight vector in model attribute order.
    pub weights: Vec<f64>,
    pub confidence: f64,
    pub decision: Decision,
    /// Number of users whose suggestions were averaged in.
    pub suggestion_count: usize,
    pub original: Prediction,
}

impl AdjustedDecision {
    pub fn overridden(&self) -> bool {
        self.suggestion_count > 0
    }
}

/// Per-application decisions after averaging suggestions. Not a single
/// model: each application may carry its own weight vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjustedDecisionSet {
    pub decisions: Vec<AdjustedDecision>,
}

impl AdjustedDecisionSet {
    pub fn overridden_ids(&self) -> Vec<&str> {
        self.decisions
            .iter()
            .filter(|d| d.overridden())
            .map(|d| d.application_id.as_str())
            .collect()
    }

    pub fn original_decisions(&self) -> Vec<Decision> {
        self.decisions.iter().map(|d| d.original.decision).collect()
    }

    pub fn adjusted_decisions(&self) -> Vec<Decision> {
        self.decisions.iter().map(|d| d.decision).collect()
    }
}

fn mean_sorted(mut values: Vec<f64>) -> f64 {
    // Sorting first makes the sum independent of arrival order.
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

/// For each application and attribute with at least one suggestion, the
/// effective weight is the mean of the suggested values; everything else
/// keeps the original weight. Confidence is recomputed with the original
/// intercept.
pub fn aggregate(
    suggestions: &[WeightSuggestion],
    m: &ScoringModel,
    apps: &[Application],
) -> Result<AdjustedDecisionSet, FeedbackError> {
    let effective = effective_suggestions(suggestions);
    let mut per_app: BTreeMap<&str, (usize, BTreeMap<usize, Vec<f64>>)> = BTreeMap::new();
    for s in effective.values() {
        let entry = per_app.entry(s.application_id.as_str()).or_default();
        entry.0 += 1;
        for (attribute, &value) in &s.weights {
            let k = m
                .encoder
                .index_of(attribute)
                .ok_or_else(|| FeedbackError::UnknownAttribute(attribute.clone()))?;
            entry.1.entry(k).or_default().push(value);
        }
    }

    let mut decisions = Vec::with_capacity(apps.len());
    for app in apps {
        let original = m.predict(app)?;
        let adjusted = match per_app.remove(app.id.as_str()) {
            None => AdjustedDecision {
                application_id: app.id.clone(),
                weights: m.weights.clone(),
                confidence: original.confidence,
                decision: original.decision,
                suggestion_count: 0,
                original,
            },
            Some((count, by_attr)) => {
                let mut weights = m.weights.clone();
                for (k, values) in by_attr {
                    weights[k] = mean_sorted(values);
                }
                let p = m.predict_with_weights(&weights, app)?;
                AdjustedDecision {
                    application_id: app.id.clone(),
                    weights,
                    confidence: p.confidence,
                    decision: p.decision,
                    suggestion_count: count,
                    original,
                }
            }
        };
        decisions.push(adjusted);
    }
    Ok(AdjustedDecisionSet { decisions })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessDelta {
    pub before: FairnessReport,
    pub after: FairnessReport,
    pub overridden: usize,
}

/// Disparate impact of the original and the adjusted decisions. `apps` must
/// contain every application of `adj`.
pub fn fairness_delta(
    adj: &AdjustedDecisionSet,
    apps: &[Application],
    g: &GroupSpec,
) -> Result<FairnessDelta, FeedbackError> {
    let by_id: BTreeMap<&str, &Application> = apps.iter().map(|a| (a.id.as_str(), a)).collect();
    let ordered = adj
        .decisions
        .iter()
        .map(|d| {
            by_id
                .get(d.application_id.as_str())
                .map(|a| (*a).clone())
                .ok_or_else(|| FeedbackError::NotFound {
                    kind: "application",
                    id: d.application_id.clone(),
                })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let before = audit_decisions(&ordered, &adj.original_decisions(), g)?;
    let after = audit_decisions(&ordered, &adj.adjusted_decisions(), g)?;
    Ok(FairnessDelta {
        before,
        after,
        overridden: adj.overridden_ids().len(),
    })
}

/// Weight vector of one participant: for each attribute, the mean of the
/// values they suggested across all of their edited applications.
pub fn participant_weights(suggestions: &[&WeightSuggestion], m: &ScoringModel) -> Result<Vec<f64>, FeedbackError> {
    let mut by_attr: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for s in suggestions {
        for (attribute, &value) in &s.weights {
            let k = m
                .encoder
                .index_of(attribute)
                .ok_or_else(|| FeedbackError::UnknownAttribute(attribute.clone()))?;
            by_attr.entry(k).or_default().push(value);
        }
    }
    let mut weights = m.weights.clone();
    for (k, values) in by_attr {
        weights[k] = mean_sorted(values);
    }
    Ok(weights)
}

/// Disparate impact, per participant, of a model that applies that
/// participant's mean suggested weights to every application. Sessions
/// without suggestions do not appear.
pub fn per_participant_models(
    suggestions: &[WeightSuggestion],
    m: &ScoringModel,
    apps: &[Application],
    g: &GroupSpec,
) -> Result<BTreeMap<String, FairnessReport>, FeedbackError> {
    let effective = effective_suggestions(suggestions);
    let mut by_session: BTreeMap<&str, Vec<&WeightSuggestion>> = BTreeMap::new();
    for s in effective.values() {
        by_session.entry(s.session_id.as_str()).or_default().push(s);
    }
    let mut out = BTreeMap::new();
    for (session, list) in by_session {
        let weights = participant_weights(&list, m)?;
        let decisions = apps
            .iter()
            .map(|a| Ok(m.predict_with_weights(&weights, a)?.decision))
            .collect::<Result<Vec<_>, ModelError>>()?;
        out.insert(session.to_string(), audit_decisions(apps, &decisions, g)?);
    }
    Ok(out)
}
