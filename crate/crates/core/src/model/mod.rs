//! Logistic-regression scoring model and the explanations built on it:
//! confidence, criticality, attribute importance, value distributions and
//! application similarity.

mod encode;
mod persist;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Application, AttributeKind, Dataset, Decision};

type BinBounds = (Option<f64>, Option<f64>);

pub use encode::{FeatureEncoder, FeatureEncoding};
pub use persist::{ModelDocument, MODEL_FORMAT, MODEL_FORMAT_VERSION};
pub use train::{lbfgs, sigmoid, softplus, LbfgsOutcome, LogisticObjective, OptimizationTrace, TrainConfig, F_FUZZ};

/// Decisions are accepted strictly above this confidence.
pub const ACCEPT_THRESHOLD: f64 = 0.5;

/// Number of equal-width bins for continuous value distributions.
pub const DISTRIBUTION_BINS: usize = 5;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("degenerate training data: {0}")]
    DegenerateData(String),
    #[error("L-BFGS did not converge after {iterations} iterations (gradient norm {gradient_norm:e})")]
    Convergence { iterations: usize, gradient_norm: f64 },
    #[error("application {id}: {message}")]
    Contract { id: String, message: String },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unknown attribute {0}")]
    UnknownAttribute(String),
    #[error("model document: {0}")]
    Persistence(String),
}

impl ModelError {
    pub(crate) fn missing(id: &str, attribute: &str) -> Self {
        ModelError::Contract {
            id: id.to_string(),
            message: format!("missing value for {attribute}"),
        }
    }
}

pub fn decide(confidence: f64) -> Decision {
    if confidence > ACCEPT_THRESHOLD {
        Decision::Accepted
    } else {
        Decision::Rejected
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub application_id: String,
    /// Probability of acceptance.
    pub confidence: f64,
    pub decision: Decision,
}

/// Weights in scaled feature units, one per attribute, plus the intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringModel {
    pub encoder: FeatureEncoder,
    pub weights: Vec<f64>,
    pub intercept: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeImportance {
    pub attribute: String,
    pub weight: f64,
    /// `|w|`.
    pub importance: f64,
    /// `|w| / max |w|`, for sizing.
    pub relative: f64,
}

impl ScoringModel {
    pub fn from_parts(encoder: FeatureEncoder, weights: Vec<f64>, intercept: f64) -> Result<Self, ModelError> {
        if weights.len() != encoder.len() {
            return Err(ModelError::InvalidParameter(format!(
                "{} weights for {} attributes",
                weights.len(),
                encoder.len()
            )));
        }
        Ok(Self {
            encoder,
            weights,
            intercept,
        })
    }

    pub fn attribute_names(&self) -> impl Iterator<Item = &str> {
        self.encoder.names()
    }

    pub fn weight(&self, attribute: &str) -> Option<f64> {
        self.encoder.index_of(attribute).map(|k| self.weights[k])
    }

    pub fn max_abs_weight(&self) -> f64 {
        self.weights.iter().fold(0.0, |m, w| m.max(w.abs()))
    }

    /// `b + sum_k w_k x_k`, summed in attribute order.
    pub fn utility_with(&self, weights: &[f64], features: &[f64]) -> f64 {
        weights
            .iter()
            .zip(features)
            .fold(self.intercept, |acc, (w, x)| acc + w * x)
    }

    pub fn predict(&self, app: &Application) -> Result<Prediction, ModelError> {
        self.predict_with_weights(&self.weights, app)
    }

    /// Scores `app` with a substitute weight vector and the model's
    /// intercept.
    pub fn predict_with_weights(&self, weights: &[f64], app: &Application) -> Result<Prediction, ModelError> {
        let x = self.encoder.encode(app)?;
        let confidence = sigmoid(self.utility_with(weights, &x));
        Ok(Prediction {
            application_id: app.id.clone(),
            confidence,
            decision: decide(confidence),
        })
    }

    pub fn predict_all(&self, apps: &[Application]) -> Result<Vec<Prediction>, ModelError> {
        apps.iter().map(|a| self.predict(a)).collect()
    }

    pub fn importance(&self) -> Vec<AttributeImportance> {
        let max = self.max_abs_weight();
        self.encoder
            .names()
            .zip(&self.weights)
            .map(|(name, &w)| AttributeImportance {
                attribute: name.to_string(),
                weight: w,
                importance: w.abs(),
                relative: if max > 0.0 { w.abs() / max } else { 0.0 },
            })
            .collect()
    }

    pub fn criticality(&self, app: &Application) -> Result<CriticalityVector, ModelError> {
        let x = self.encoder.encode(app)?;
        let entries = self
            .encoder
            .names()
            .zip(self.weights.iter().zip(&x))
            .map(|(name, (&w, &v))| CriticalityEntry {
                attribute: name.to_string(),
                weight: w,
                value: v,
                criticality: w * v,
            })
            .collect();
        Ok(CriticalityVector {
            application_id: app.id.clone(),
            entries,
            intercept: self.intercept,
        })
    }
}

/// Trains on every labelled application of `train_set`.
pub fn train(train_set: &Dataset, config: &TrainConfig) -> Result<ScoringModel, ModelError> {
    train_with_trace(train_set, config).map(|(m, _)| m)
}

pub fn train_with_trace(
    train_set: &Dataset,
    config: &TrainConfig,
) -> Result<(ScoringModel, OptimizationTrace), ModelError> {
    if config.l2_strength.is_nan() || config.l2_strength <= 0.0 {
        return Err(ModelError::InvalidParameter(format!(
            "l2_strength must be positive, got {}",
            config.l2_strength
        )));
    }
    let encoder = FeatureEncoder::fit(train_set)?;
    let mut rows = Vec::with_capacity(train_set.len());
    let mut targets = Vec::with_capacity(train_set.len());
    for app in &train_set.applications {
        let label = app.label.ok_or_else(|| ModelError::Contract {
            id: app.id.clone(),
            message: "training application has no label".into(),
        })?;
        rows.push(encoder.encode(app)?);
        targets.push(if label == Decision::Accepted { 1.0 } else { 0.0 });
    }
    let positives = targets.iter().filter(|&&t| t == 1.0).count();
    if positives == 0 || positives == targets.len() {
        return Err(ModelError::DegenerateData(
            "training set must contain both accepted and rejected applications".into(),
        ));
    }

    let objective = LogisticObjective::new(&rows, &targets, config.l2_strength);
    let outcome = lbfgs(
        |p| objective.value_and_gradient(p),
        vec![0.0; objective.dimension()],
        config,
    );
    if !outcome.trace.converged {
        return Err(ModelError::Convergence {
            iterations: outcome.trace.iterations,
            gradient_norm: outcome.trace.gradient_norm,
        });
    }
    let mut params = outcome.params;
    let intercept = params.pop().expect("intercept");
    Ok((ScoringModel::from_parts(encoder, params, intercept)?, outcome.trace))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalityEntry {
    pub attribute: String,
    pub weight: f64,
    /// Scaled feature value.
    pub value: f64,
    /// `weight * value`.
    pub criticality: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalityVector {
    pub application_id: String,
    pub entries: Vec<CriticalityEntry>,
    pub intercept: f64,
}

impl CriticalityVector {
    pub fn utility(&self) -> f64 {
        self.entries.iter().fold(self.intercept, |acc, e| acc + e.criticality)
    }

    pub fn get(&self, attribute: &str) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.attribute == attribute)
            .map(|e| e.criticality)
    }

    /// Entries ordered by weight, largest first.
    pub fn sorted_by_weight(&self) -> Vec<&CriticalityEntry> {
        let mut v: Vec<_> = self.entries.iter().collect();
        v.sort_by(|a, b| {
            b.weight
                .total_cmp(&a.weight)
                .then_with(|| a.attribute.cmp(&b.attribute))
        });
        v
    }

    /// `|criticality| / max |criticality|` per entry, in attribute order.
    pub fn saturation(&self) -> Vec<f64> {
        let max = self.entries.iter().fold(0.0f64, |m, e| m.max(e.criticality.abs()));
        self.entries
            .iter()
            .map(|e| if max > 0.0 { e.criticality.abs() / max } else { 0.0 })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueBin {
    pub label: String,
    /// Raw-unit bounds for continuous bins.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
    pub count: usize,
    /// Percent of all applications that fall in this bin and are accepted.
    pub accepted_pct: f64,
    pub rejected_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueDistribution {
    pub attribute: String,
    pub bins: Vec<ValueBin>,
    /// Set when a continuous attribute is constant and collapses to one bin.
    pub degenerate: bool,
}

impl ValueDistribution {
    pub fn total_pct(&self) -> f64 {
        self.bins.iter().map(|b| b.accepted_pct + b.rejected_pct).sum()
    }
}

/// Accepted/rejected shares per value bin. Continuous attributes are cut
/// into five equal-width bins between the observed minimum and maximum
/// (the last bin is closed); categorical and binary attributes get one bin
/// per category.
pub fn value_distributions(
    m: &ScoringModel,
    apps: &[Application],
    preds: &[Prediction],
) -> Result<Vec<ValueDistribution>, ModelError> {
    if apps.is_empty() {
        return Err(ModelError::InvalidParameter("no applications".into()));
    }
    if apps.len() != preds.len() {
        return Err(ModelError::InvalidParameter(format!(
            "{} applications but {} predictions",
            apps.len(),
            preds.len()
        )));
    }
    if let Some((a, p)) = apps.iter().zip(preds).find(|(a, p)| a.id != p.application_id) {
        return Err(ModelError::InvalidParameter(format!(
            "prediction {} does not match application {}",
            p.application_id, a.id
        )));
    }
    let total = apps.len() as f64;
    let mut out = Vec::with_capacity(m.encoder.len());
    for (k, spec) in m.encoder.attributes.iter().enumerate() {
        let raw: Vec<f64> = apps
            .iter()
            .map(|a| m.encoder.raw_value(a, k))
            .collect::<Result<_, _>>()?;
        let (labels, bounds, index): (Vec<String>, Vec<BinBounds>, Vec<usize>);
        let mut degenerate = false;
        match spec.kind {
            AttributeKind::Continuous => {
                let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
                let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if max > min {
                    let width = (max - min) / DISTRIBUTION_BINS as f64;
                    let edges: Vec<f64> = (0..=DISTRIBUTION_BINS)
                        .map(|i| {
                            if i == DISTRIBUTION_BINS {
                                max
                            } else {
                                min + width * i as f64
                            }
                        })
                        .collect();
                    labels = edges.windows(2).map(|e| format!("{}-{}", e[0], e[1])).collect();
                    bounds = edges.windows(2).map(|e| (Some(e[0]), Some(e[1]))).collect();
                    index = raw
                        .iter()
                        .map(|v| (((v - min) / width).floor() as usize).min(DISTRIBUTION_BINS - 1))
                        .collect();
                } else {
                    degenerate = true;
                    labels = vec![format!("{min}")];
                    bounds = vec![(Some(min), Some(max))];
                    index = vec![0; raw.len()];
                }
            }
            AttributeKind::Categorical | AttributeKind::Binary => {
                labels = spec.categories.clone();
                bounds = vec![(None, None); labels.len()];
                index = raw.iter().map(|v| *v as usize).collect();
            }
        }
        let mut accepted = vec![0usize; labels.len()];
        let mut rejected = vec![0usize; labels.len()];
        for (&i, p) in index.iter().zip(preds) {
            match p.decision {
                Decision::Accepted => accepted[i] += 1,
                Decision::Rejected => rejected[i] += 1,
            }
        }
        let bins = labels
            .into_iter()
            .zip(bounds)
            .enumerate()
            .map(|(i, (label, (lower, upper)))| ValueBin {
                label,
                lower,
                upper,
                count: accepted[i] + rejected[i],
                accepted_pct: 100.0 * accepted[i] as f64 / total,
                rejected_pct: 100.0 * rejected[i] as f64 / total,
            })
            .collect();
        out.push(ValueDistribution {
            attribute: spec.name.clone(),
            bins,
            degenerate,
        });
    }
    Ok(out)
}

/// Per-attribute similarity in `[0, 1]`: `1 - |x - y|` on min-max scaled
/// values for continuous attributes (i.e. divided by the training range),
/// and 1 for equal / 0 for different categories.
pub fn attribute_similarities(
    a: &Application,
    b: &Application,
    encoder: &FeatureEncoder,
) -> Result<Vec<(String, f64)>, ModelError> {
    (0..encoder.len())
        .map(|k| {
            let spec = &encoder.attributes[k];
            let (x, y) = (encoder.raw_value(a, k)?, encoder.raw_value(b, k)?);
            let s = match encoder.encodings[k] {
                enc @ FeatureEncoding::MinMax { .. } => 1.0 - (enc.apply(x) - enc.apply(y)).abs(),
                _ => {
                    if x == y {
                        1.0
                    } else {
                        0.0
                    }
                }
            };
            Ok((spec.name.clone(), s))
        })
        .collect()
}

/// Mean of the per-attribute similarities.
pub fn similarity(a: &Application, b: &Application, encoder: &FeatureEncoder) -> Result<f64, ModelError> {
    let parts = attribute_similarities(a, b, encoder)?;
    if parts.is_empty() {
        return Ok(1.0);
    }
    Ok(parts.iter().map(|(_, s)| s).sum::<f64>() / parts.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarApplication {
    pub application_id: String,
    pub similarity: f64,
    pub confidence: f64,
    pub decision: Decision,
    /// False when the similarity falls outside the requested range.
    pub selectable: bool,
}

/// Annotates every pool application with its similarity to `target` and its
/// prediction. Applications outside `[lo, hi]` are kept but marked
/// unselectable.
pub fn similar_applications(
    m: &ScoringModel,
    target: &Application,
    pool: &[Application],
    range: (f64, f64),
) -> Result<Vec<SimilarApplication>, ModelError> {
    let (lo, hi) = range;
    if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
        return Err(ModelError::InvalidParameter(format!(
            "similarity range must satisfy 0 <= lo <= hi <= 1, got ({lo}, {hi})"
        )));
    }
    pool.iter()
        .map(|app| {
            let s = similarity(target, app, &m.encoder)?;
            let p = m.predict(app)?;
            Ok(SimilarApplication {
                application_id: app.id.clone(),
                similarity: s,
                confidence: p.confidence,
                decision: p.decision,
                selectable: lo <= s && s <= hi,
            })
        })
        .collect()
}
