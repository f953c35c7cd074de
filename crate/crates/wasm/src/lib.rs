//! Browser bindings for a self-contained demo: train on a synthetic dataset
//! with a chosen bias strength, audit it, simulate corrective feedback and
//! explore similar applications. Results cross the boundary as JSON.

use loanlens_core::dataset::{generate_synthetic, prune_attributes, split, DEFAULT_MAX_MISSING_RATE};
use loanlens_core::fairness::audit_decisions;
use loanlens_core::feedback::{aggregate, fairness_delta};
use loanlens_core::model::{similar_applications, train};
use loanlens_core::simulate::{simulate_cohort, CohortStrategy};
use loanlens_core::{Application, Dataset, Decision, GroupSpec, ScoringModel, TrainConfig};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const N: usize = 1000;
const GROUP: (&str, &str) = ("nationality", "foreign");

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Audit {
    pub disparate_impact: f64,
    pub protected_accept_rate: f64,
    pub reference_accept_rate: f64,
    pub verdict: String,
    pub nationality_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub cohort_size: usize,
    pub disparate_impact: f64,
    pub overridden: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScatterPoint {
    pub id: String,
    pub confidence: f64,
    pub similarity: f64,
    pub accepted: bool,
    pub selectable: bool,
}

#[wasm_bindgen]
pub struct Demo {
    data: Dataset,
    test: Vec<Application>,
    model: ScoringModel,
    group: GroupSpec,
}

impl Demo {
    pub fn create(bias: f64, seed: u64) -> Result<Demo, String> {
        let raw = generate_synthetic(N, seed, bias).map_err(|e| e.to_string())?;
        let data = prune_attributes(&raw, DEFAULT_MAX_MISSING_RATE).map_err(|e| e.to_string())?;
        let (train_set, test) = split(&data, 0.7, seed).map_err(|e| e.to_string())?;
        let model = train(&train_set, &TrainConfig::default()).map_err(|e| e.to_string())?;
        let spec = data.attribute(GROUP.0).ok_or("dataset lacks nationality")?;
        let group = GroupSpec::new(spec, GROUP.1).map_err(|e| e.to_string())?;
        Ok(Demo {
            data,
            test: test.applications,
            model,
            group,
        })
    }

    pub fn audit_report(&self) -> Result<Audit, String> {
        let apps = &self.data.applications;
        let decisions: Vec<Decision> = self
            .model
            .predict_all(apps)
            .map_err(|e| e.to_string())?
            .iter()
            .map(|p| p.decision)
            .collect();
        let r = audit_decisions(apps, &decisions, &self.group).map_err(|e| e.to_string())?;
        Ok(Audit {
            disparate_impact: r.disparate_impact,
            protected_accept_rate: r.protected_accept_rate,
            reference_accept_rate: r.reference_accept_rate,
            verdict: r.verdict.to_string(),
            nationality_weight: self.model.weight(GROUP.0).unwrap_or(0.0),
        })
    }

    /// DI after corrective cohorts of each size (nested: larger cohorts
    /// extend smaller ones).
    pub fn curve(&self, sizes: &[usize], seed: u64) -> Result<Vec<CurvePoint>, String> {
        let apps = &self.data.applications;
        sizes
            .iter()
            .map(|&k| {
                let strategy = CohortStrategy::corrective(GROUP.0, k, seed);
                let s = simulate_cohort(&strategy, &self.model, apps, &self.group).map_err(|e| e.to_string())?;
                let adj = aggregate(&s, &self.model, apps).map_err(|e| e.to_string())?;
                let d = fairness_delta(&adj, apps, &self.group).map_err(|e| e.to_string())?;
                Ok(CurvePoint {
                    cohort_size: k,
                    disparate_impact: d.after.disparate_impact,
                    overridden: d.overridden,
                })
            })
            .collect()
    }

    /// Test applications against the `index`-th one; points outside
    /// `[lo, hi]` are not selectable.
    pub fn scatter_points(&self, index: usize, lo: f64, hi: f64) -> Result<Vec<ScatterPoint>, String> {
        let target = self.test.get(index).ok_or_else(|| format!("no application {index}"))?;
        let others: Vec<Application> = self.test.iter().filter(|a| a.id != target.id).cloned().collect();
        let list = similar_applications(&self.model, target, &others, (lo, hi)).map_err(|e| e.to_string())?;
        Ok(list
            .into_iter()
            .map(|s| ScatterPoint {
                id: s.application_id,
                confidence: s.confidence,
                similarity: s.similarity,
                accepted: s.decision == Decision::Accepted,
                selectable: s.selectable,
            })
            .collect())
    }
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
impl Demo {
    /// Generates and trains; takes a moment for 1000 applications.
    #[wasm_bindgen(constructor)]
    pub fn new(bias: f64, seed: u32) -> Result<Demo, JsError> {
        Demo::create(bias, u64::from(seed)).map_err(|e| JsError::new(&e))
    }

    #[wasm_bindgen(js_name = testSize)]
    pub fn test_size(&self) -> usize {
        self.test.len()
    }

    /// JSON `Audit`.
    pub fn audit(&self) -> Result<String, JsError> {
        to_js(self.audit_report())
    }

    /// JSON array of `CurvePoint`.
    #[wasm_bindgen(js_name = cohortCurve)]
    pub fn cohort_curve(&self, sizes: Vec<u32>, seed: u32) -> Result<String, JsError> {
        let sizes: Vec<usize> = sizes.into_iter().map(|s| s as usize).collect();
        to_js(self.curve(&sizes, u64::from(seed)))
    }

    /// JSON array of `ScatterPoint`.
    pub fn scatter(&self, index: usize, lo: f64, hi: f64) -> Result<String, JsError> {
        to_js(self.scatter_points(index, lo, hi))
    }
}
