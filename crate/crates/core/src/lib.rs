//! Interpretable loan scoring with end-user fairness feedback.
//!
//! The crate trains an L2-regularised logistic regression over per-attribute
//! scaled features, explains each decision (confidence, weights, criticality,
//! similar cases), records end-user fairness judgments and weight
//! suggestions, aggregates that feedback into adjusted decision sets and
//! measures the effect with disparate impact, optionally sliced by
//! Hofstede cultural-dimension groups.

pub mod analysis;
pub mod culture;
pub mod dataset;
pub mod fairness;
pub mod feedback;
pub mod model;
pub mod simulate;

pub use dataset::{Application, AttributeKind, AttributeSpec, Dataset, DatasetError, Decision, Schema};
pub use fairness::{FairnessError, FairnessReport, GroupSpec, Verdict};
pub use feedback::{FairnessJudgment, FeedbackError, JudgmentVerdict, WeightSuggestion};
pub use model::{ModelError, Prediction, ScoringModel, TrainConfig};
