//! Disparate impact, balanced accuracy, judgment counts and unfairness
//! ratios.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Application, AttributeSpec, Decision};
use crate::feedback::{effective_judgments, FairnessJudgment, JudgmentVerdict};
use crate::model::Prediction;

/// Four-fifths rule: a disparate impact below this signals discrimination.
pub const DI_THRESHOLD: f64 = 0.8;

#[derive(Debug, Error, PartialEq)]
pub enum FairnessError {
    #[error("{0} group is empty")]
    EmptyGroup(&'static str),
    #[error("reference group has no accepted applications; disparate impact is undefined")]
    UndefinedRatio,
    #[error("no fair or unfair judgments; unfairness ratio is undefined")]
    NoJudgments,
    #[error("invalid group: {0}")]
    InvalidGroup(String),
    #[error("{0}")]
    Contract(String),
}

/// Protected value versus the remaining categories of one attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub attribute: String,
    pub protected_value: String,
    pub reference_values: Vec<String>,
    protected_index: usize,
    reference_indices: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Membership {
    Protected,
    Reference,
}

impl GroupSpec {
    /// All categories other than `protected_value` form the reference group.
    pub fn new(spec: &AttributeSpec, protected_value: &str) -> Result<Self, FairnessError> {
        if spec.is_continuous() {
            return Err(FairnessError::InvalidGroup(format!(
                "{} is continuous; groups need a categorical attribute",
                spec.name
            )));
        }
        let protected_index = spec.category_index(protected_value).ok_or_else(|| {
            FairnessError::InvalidGroup(format!("{protected_value:?} is not a category of {}", spec.name))
        })?;
        let (reference_indices, reference_values) = spec
            .categories
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != protected_index)
            .map(|(i, c)| (i, c.clone()))
            .unzip();
        Ok(Self {
            attribute: spec.name.clone(),
            protected_value: protected_value.to_string(),
            reference_values,
            protected_index,
            reference_indices,
        })
    }

    pub fn membership(&self, app: &Application) -> Result<Membership, FairnessError> {
        let v = app
            .value(&self.attribute)
            .ok_or_else(|| FairnessError::Contract(format!("application {} lacks {}", app.id, self.attribute)))?;
        let idx = v as usize;
        if v == self.protected_index as f64 {
            Ok(Membership::Protected)
        } else if v.fract() == 0.0 && v >= 0.0 && self.reference_indices.contains(&idx) {
            Ok(Membership::Reference)
        } else {
            Err(FairnessError::Contract(format!(
                "application {}: {} value {v} is not a known category",
                app.id, self.attribute
            )))
        }
    }

    /// Same attribute, protected and reference roles swapped. Only defined
    /// for two-category attributes.
    pub fn swapped(&self) -> Option<Self> {
        if self.reference_values.len() != 1 {
            return None;
        }
        Some(Self {
            attribute: self.attribute.clone(),
            protected_value: self.reference_values[0].clone(),
            reference_values: vec![self.protected_value.clone()],
            protected_index: self.reference_indices[0],
            reference_indices: vec![self.protected_index],
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupCounts {
    pub accepted: usize,
    pub rejected: usize,
}

impl GroupCounts {
    pub fn total(&self) -> usize {
        self.accepted + self.rejected
    }

    pub fn accept_rate(&self) -> f64 {
        self.accepted as f64 / self.total() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Fair,
    Unfair,
}

impl Verdict {
    pub fn for_di(di: f64) -> Self {
        if di < DI_THRESHOLD {
            Verdict::Unfair
        } else {
            Verdict::Fair
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Fair => "fair",
            Verdict::Unfair => "unfair",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub attribute: String,
    pub protected_value: String,
    pub disparate_impact: f64,
    pub protected_accept_rate: f64,
    pub reference_accept_rate: f64,
    pub verdict: Verdict,
    pub protected: GroupCounts,
    pub reference: GroupCounts,
}

impl fmt::Display for FairnessReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "attribute              {}", self.attribute)?;
        writeln!(f, "group                  accepted  rejected  accept rate")?;
        writeln!(
            f,
            "{:<22} {:>8}  {:>8}  {:>11.4}",
            format!("{} (protected)", self.protected_value),
            self.protected.accepted,
            self.protected.rejected,
            self.protected_accept_rate
        )?;
        writeln!(
            f,
            "{:<22} {:>8}  {:>8}  {:>11.4}",
            "reference", self.reference.accepted, self.reference.rejected, self.reference_accept_rate
        )?;
        writeln!(f, "disparate impact       {:.4}", self.disparate_impact)?;
        write!(f, "verdict                {}", self.verdict)
    }
}

/// `accept_rate(protected) / accept_rate(reference)`.
pub fn disparate_impact<I>(decisions: I, g: &GroupSpec) -> Result<FairnessReport, FairnessError>
where
    I: IntoIterator<Item = (Membership, Decision)>,
{
    let mut protected = GroupCounts::default();
    let mut reference = GroupCounts::default();
    for (membership, decision) in decisions {
        let counts = match membership {
            Membership::Protected => &mut protected,
            Membership::Reference => &mut reference,
        };
        match decision {
            Decision::Accepted => counts.accepted += 1,
            Decision::Rejected => counts.rejected += 1,
        }
    }
    if protected.total() == 0 {
        return Err(FairnessError::EmptyGroup("protected"));
    }
    if reference.total() == 0 {
        return Err(FairnessError::EmptyGroup("reference"));
    }
    if reference.accepted == 0 {
        return Err(FairnessError::UndefinedRatio);
    }
    let protected_accept_rate = protected.accept_rate();
    let reference_accept_rate = reference.accept_rate();
    let di = protected_accept_rate / reference_accept_rate;
    Ok(FairnessReport {
        attribute: g.attribute.clone(),
        protected_value: g.protected_value.clone(),
        disparate_impact: di,
        protected_accept_rate,
        reference_accept_rate,
        verdict: Verdict::for_di(di),
        protected,
        reference,
    })
}

/// Disparate impact of `decisions[i]` taken on `apps[i]`.
pub fn audit_decisions(
    apps: &[Application],
    decisions: &[Decision],
    g: &GroupSpec,
) -> Result<FairnessReport, FairnessError> {
    if apps.len() != decisions.len() {
        return Err(FairnessError::Contract(format!(
            "{} applications but {} decisions",
            apps.len(),
            decisions.len()
        )));
    }
    let rows = apps
        .iter()
        .zip(decisions)
        .map(|(a, d)| Ok((g.membership(a)?, *d)))
        .collect::<Result<Vec<_>, FairnessError>>()?;
    disparate_impact(rows, g)
}

/// `(TPR + TNR) / 2` with accepted as the positive class.
pub fn balanced_accuracy(predicted: &[Decision], truth: &[Decision]) -> Result<f64, FairnessError> {
    if predicted.len() != truth.len() || predicted.is_empty() {
        return Err(FairnessError::Contract(
            "predictions and labels must be aligned and non-empty".into(),
        ));
    }
    let (mut tp, mut pos, mut tn, mut neg) = (0usize, 0usize, 0usize, 0usize);
    for (p, t) in predicted.iter().zip(truth) {
        match t {
            Decision::Accepted => {
                pos += 1;
                tp += usize::from(*p == Decision::Accepted);
            }
            Decision::Rejected => {
                neg += 1;
                tn += usize::from(*p == Decision::Rejected);
            }
        }
    }
    if pos == 0 || neg == 0 {
        return Err(FairnessError::Contract("labels must contain both classes".into()));
    }
    Ok((tp as f64 / pos as f64 + tn as f64 / neg as f64) / 2.0)
}

fn fair_unfair_counts<'a, I>(judgments: I) -> (usize, usize)
where
    I: IntoIterator<Item = &'a FairnessJudgment>,
{
    judgments.into_iter().fold((0, 0), |(f, u), j| match j.verdict {
        JudgmentVerdict::Fair => (f + 1, u),
        JudgmentVerdict::Unfair => (f, u + 1),
        JudgmentVerdict::Cleared => (f, u),
    })
}

/// `unfair / (fair + unfair)` over the effective judgments; needs-human
/// flags and cleared markups count toward neither.
pub fn unfairness_ratio(judgments: &[FairnessJudgment]) -> Result<f64, FairnessError> {
    let effective = effective_judgments(judgments);
    let (fair, unfair) = fair_unfair_counts(effective.values());
    if fair + unfair == 0 {
        return Err(FairnessError::NoJudgments);
    }
    Ok(unfair as f64 / (fair + unfair) as f64)
}

/// Mean over sessions of each session's unfairness ratio. Sessions without
/// any fair/unfair judgment are left out.
pub fn mean_unfairness_ratio(judgments: &[FairnessJudgment]) -> Result<f64, FairnessError> {
    let mut by_session: BTreeMap<&str, Vec<FairnessJudgment>> = BTreeMap::new();
    for j in judgments {
        by_session.entry(j.session_id.as_str()).or_default().push(j.clone());
    }
    let ratios: Vec<f64> = by_session.values().filter_map(|js| unfairness_ratio(js).ok()).collect();
    if ratios.is_empty() {
        return Err(FairnessError::NoJudgments);
    }
    Ok(ratios.iter().sum::<f64>() / ratios.len() as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverviewCounts {
    pub accepted: usize,
    pub rejected: usize,
    pub judged_fair: usize,
    pub judged_unfair: usize,
    pub needs_human: usize,
}

/// Decision counts plus one user's effective markup, restricted to the
/// predicted applications.
pub fn overview_counts(preds: &[Prediction], judgments: &[FairnessJudgment]) -> OverviewCounts {
    let mut counts = OverviewCounts::default();
    for p in preds {
        match p.decision {
            Decision::Accepted => counts.accepted += 1,
            Decision::Rejected => counts.rejected += 1,
        }
    }
    let ids: std::collections::BTreeSet<&str> = preds.iter().map(|p| p.application_id.as_str()).collect();
    for j in effective_judgments(judgments).values() {
        if !ids.contains(j.application_id.as_str()) {
            continue;
        }
        match j.verdict {
            JudgmentVerdict::Fair => counts.judged_fair += 1,
            JudgmentVerdict::Unfair => counts.judged_unfair += 1,
            JudgmentVerdict::Cleared => {}
        }
        counts.needs_human += usize::from(j.needs_human);
    }
    counts
}
