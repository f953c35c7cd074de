//! Newline-delimited JSON event records.
//!
//! Each line is one object `{type, session_id, application_id, payload,
//! timestamp}`. Serialisation is deterministic (struct field order, sorted
//! maps), so writing a parsed log reproduces the original bytes.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{FairnessJudgment, FeedbackError, JudgmentVerdict, Timestamp, WeightSuggestion};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    /// Session creation; payload carries the country and optional pre-rating.
    Session,
    Filter,
    Sort,
    SelectApplication,
    Compare,
    Judgment,
    Suggestion,
    /// Post-study rating or task-load scores.
    Rating,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Session => "session",
            EventKind::Filter => "filter",
            EventKind::Sort => "sort",
            EventKind::SelectApplication => "select_application",
            EventKind::Compare => "compare",
            EventKind::Judgment => "judgment",
            EventKind::Suggestion => "suggestion",
            EventKind::Rating => "rating",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    #[serde(rename = "type")]
    pub kind: EventKind,
    pub session_id: String,
    #[serde(default)]
    pub application_id: Option<String>,
    #[serde(default)]
    pub payload: Value,
    pub timestamp: Timestamp,
}

impl EventRecord {
    pub fn new(
        kind: EventKind,
        session_id: &str,
        application_id: Option<&str>,
        payload: Value,
        timestamp: Timestamp,
    ) -> Self {
        Self {
            kind,
            session_id: session_id.to_string(),
            application_id: application_id.map(str::to_string),
            payload,
            timestamp,
        }
    }

    pub fn judgment(j: &FairnessJudgment) -> Self {
        Self::new(
            EventKind::Judgment,
            &j.session_id,
            Some(&j.application_id),
            json!({ "verdict": j.verdict, "needs_human": j.needs_human }),
            j.timestamp,
        )
    }

    pub fn suggestion(s: &WeightSuggestion) -> Self {
        Self::new(
            EventKind::Suggestion,
            &s.session_id,
            Some(&s.application_id),
            json!({ "weights": s.weights }),
            s.timestamp,
        )
    }

    pub fn session(session_id: &str, country: &str, pre_rating: Option<u8>, timestamp: Timestamp) -> Self {
        let payload = match pre_rating {
            Some(r) => json!({ "country": country, "pre_rating": r }),
            None => json!({ "country": country }),
        };
        Self::new(EventKind::Session, session_id, None, payload, timestamp)
    }

    pub fn post_rating(session_id: &str, rating: u8, timestamp: Timestamp) -> Self {
        Self::new(
            EventKind::Rating,
            session_id,
            None,
            json!({ "stage": "post", "rating": rating }),
            timestamp,
        )
    }

    pub fn taskload(session_id: &str, scores: [u8; 6], timestamp: Timestamp) -> Self {
        Self::new(
            EventKind::Rating,
            session_id,
            None,
            json!({ "stage": "taskload", "scores": scores }),
            timestamp,
        )
    }

    fn application(&self) -> Result<&str, String> {
        self.application_id
            .as_deref()
            .ok_or_else(|| format!("{} event without application_id", self.kind.as_str()))
    }

    pub fn to_judgment(&self) -> Result<FairnessJudgment, String> {
        #[derive(Deserialize)]
        struct Payload {
            verdict: JudgmentVerdict,
            #[serde(default)]
            needs_human: bool,
        }
        let p: Payload = serde_json::from_value(self.payload.clone()).map_err(|e| e.to_string())?;
        Ok(FairnessJudgment {
            session_id: self.session_id.clone(),
            application_id: self.application()?.to_string(),
            verdict: p.verdict,
            needs_human: p.needs_human,
            timestamp: self.timestamp,
        })
    }

    pub fn to_suggestion(&self) -> Result<WeightSuggestion, String> {
        #[derive(Deserialize)]
        struct Payload {
            weights: std::collections::BTreeMap<String, f64>,
        }
        let p: Payload = serde_json::from_value(self.payload.clone()).map_err(|e| e.to_string())?;
        Ok(WeightSuggestion {
            session_id: self.session_id.clone(),
            application_id: self.application()?.to_string(),
            weights: p.weights,
            timestamp: self.timestamp,
        })
    }

    /// One NDJSON line, without the trailing newline.
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("event record serialises")
    }
}

/// Parses an NDJSON log. Blank lines are skipped; the first malformed line
/// aborts with its 1-based line number.
pub fn read_events<R: BufRead>(reader: R) -> Result<Vec<EventRecord>, FeedbackError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| FeedbackError::Log {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| FeedbackError::Log {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_events<W: Write>(records: &[EventRecord], mut writer: W) -> std::io::Result<()> {
    for r in records {
        writeln!(writer, "{}", r.to_line())?;
    }
    writer.flush()
}
