//! Loan-application datasets: schema, cleaning, splitting and a synthetic
//! generator with a planted nationality penalty.

mod io;
mod synthetic;

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{load_csv, read_csv, read_schema, write_csv, write_schema};
pub use synthetic::{generate_synthetic, synthetic_schema, SyntheticConfig, DEFAULT_BIAS_STRENGTH};

/// Missing-value threshold used when cleaning: attributes missing in more
/// than this fraction of rows are dropped.
pub const DEFAULT_MAX_MISSING_RATE: f64 = 0.10;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("application {id}: {message}")]
    Nonconforming { id: String, message: String },
    #[error("every attribute was pruned; nothing left to model")]
    Empty,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeKind {
    Continuous,
    Categorical,
    Binary,
}

/// Outcome of a loan decision, used both for ground-truth labels and model
/// predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Accepted,
    Rejected,
}

impl Decision {
    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Accepted => "accepted",
            Decision::Rejected => "rejected",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "accepted" | "accept" | "1" | "true" | "yes" => Some(Decision::Accepted),
            "rejected" | "reject" | "0" | "false" | "no" => Some(Decision::Rejected),
            _ => None,
        }
    }
}

impl std::fmt::Display for Decision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub name: String,
    pub kind: AttributeKind,
    /// Ordered category labels; empty for continuous attributes.
    #[serde(default)]
    pub categories: Vec<String>,
    /// Where the value comes from (shown as a tooltip next to the value).
    #[serde(default)]
    pub provenance: String,
    #[serde(default)]
    pub sensitive: bool,
}

impl AttributeSpec {
    pub fn continuous(name: &str, provenance: &str) -> Self {
        Self {
            name: name.to_string(),
            kind: AttributeKind::Continuous,
            categories: Vec::new(),
            provenance: provenance.to_string(),
            sensitive: false,
        }
    }

    pub fn categorical(name: &str, categories: &[&str], provenance: &str) -> Self {
        Self {
            name: name.to_string(),
            kind: AttributeKind::Categorical,
            categories: categories.iter().map(|c| c.to_string()).collect(),
            provenance: provenance.to_string(),
            sensitive: false,
        }
    }

    pub fn binary(name: &str, off: &str, on: &str, provenance: &str) -> Self {
        Self {
            name: name.to_string(),
            kind: AttributeKind::Binary,
            categories: vec![off.to_string(), on.to_string()],
            provenance: provenance.to_string(),
            sensitive: false,
        }
    }

    pub fn sensitive(mut self) -> Self {
        self.sensitive = true;
        self
    }

    pub fn is_continuous(&self) -> bool {
        self.kind == AttributeKind::Continuous
    }

    pub fn category_index(&self, label: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == label)
    }

    pub fn category_label(&self, value: f64) -> Option<&str> {
        if value < 0.0 || value.fract() != 0.0 {
            return None;
        }
        self.categories.get(value as usize).map(String::as_str)
    }

    /// Checks a single raw value against this attribute's kind.
    pub fn check_value(&self, value: f64) -> Result<(), String> {
        if !value.is_finite() {
            return Err(format!("{}: non-finite value", self.name));
        }
        if !self.is_continuous() && self.category_label(value).is_none() {
            return Err(format!(
                "{}: category index {value} outside 0..{}",
                self.name,
                self.categories.len()
            ));
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), DatasetError> {
        let bad = |msg: &str| Err(DatasetError::InvalidSchema(format!("{}: {msg}", self.name)));
        match self.kind {
            AttributeKind::Continuous if !self.categories.is_empty() => {
                bad("continuous attribute must not list categories")
            }
            AttributeKind::Categorical if self.categories.len() < 2 => {
                bad("categorical attribute needs at least two categories")
            }
            AttributeKind::Binary if self.categories.len() != 2 => bad("binary attribute needs exactly two categories"),
            _ => Ok(()),
        }
    }
}

/// Column layout of a dataset. Serialised as the JSON sidecar next to CSV
/// exports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub id_column: String,
    pub label_name: String,
    pub attributes: Vec<AttributeSpec>,
}

impl Schema {
    pub fn new(id_column: &str, label_name: &str, attributes: Vec<AttributeSpec>) -> Result<Self, DatasetError> {
        let schema = Self {
            id_column: id_column.to_string(),
            label_name: label_name.to_string(),
            attributes,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let mut seen = BTreeSet::new();
        for spec in &self.attributes {
            spec.validate()?;
            if !seen.insert(spec.name.as_str()) {
                return Err(DatasetError::InvalidSchema(format!(
                    "duplicate attribute {}",
                    spec.name
                )));
            }
        }
        if seen.contains(self.id_column.as_str()) || seen.contains(self.label_name.as_str()) {
            return Err(DatasetError::InvalidSchema(
                "id and label columns must not double as attributes".into(),
            ));
        }
        if self.id_column == self.label_name {
            return Err(DatasetError::InvalidSchema("id and label columns share a name".into()));
        }
        Ok(())
    }

    pub fn attribute(&self, name: &str) -> Option<&AttributeSpec> {
        self.attributes.iter().find(|a| a.name == name)
    }

    pub fn attribute_names(&self) -> impl Iterator<Item = &str> {
        self.attributes.iter().map(|a| a.name.as_str())
    }
}

/// One loan application. Categorical values are stored as category indices;
/// a missing value is an absent key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Application {
    pub id: String,
    pub values: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Decision>,
}

impl Application {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            values: BTreeMap::new(),
            label: None,
        }
    }

    pub fn with(mut self, attribute: &str, value: f64) -> Self {
        self.values.insert(attribute.to_string(), value);
        self
    }

    pub fn labelled(mut self, label: Decision) -> Self {
        self.label = Some(label);
        self
    }

    pub fn value(&self, attribute: &str) -> Option<f64> {
        self.values.get(attribute).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImputationMethod {
    Median,
    Mode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrunedAttribute {
    pub name: String,
    pub missing_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Imputation {
    pub attribute: String,
    pub method: ImputationMethod,
    pub fill_value: f64,
    pub filled: usize,
}

/// Record of what cleaning did to a dataset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CleaningMeta {
    pub max_missing_rate: Option<f64>,
    pub pruned: Vec<PrunedAttribute>,
    pub imputed: Vec<Imputation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub schema: Schema,
    pub applications: Vec<Application>,
    #[serde(default)]
    pub cleaning: CleaningMeta,
}

impl Dataset {
    /// Builds a dataset, rejecting applications that carry unknown attributes
    /// or out-of-range category indices. Missing values are allowed.
    pub fn new(schema: Schema, applications: Vec<Application>) -> Result<Self, DatasetError> {
        schema.validate()?;
        let dataset = Self {
            schema,
            applications,
            cleaning: CleaningMeta::default(),
        };
        for app in &dataset.applications {
            dataset.check_application(app)?;
        }
        Ok(dataset)
    }

    pub fn len(&self) -> usize {
        self.applications.len()
    }

    pub fn is_empty(&self) -> bool {
        self.applications.is_empty()
    }

    pub fn attributes(&self) -> &[AttributeSpec] {
        &self.schema.attributes
    }

    pub fn attribute(&self, name: &str) -> Option<&AttributeSpec> {
        self.schema.attribute(name)
    }

    pub fn application(&self, id: &str) -> Option<&Application> {
        self.applications.iter().find(|a| a.id == id)
    }

    fn check_application(&self, app: &Application) -> Result<(), DatasetError> {
        let nonconforming = |message: String| DatasetError::Nonconforming {
            id: app.id.clone(),
            message,
        };
        for (name, &value) in &app.values {
            let spec = self
                .schema
                .attribute(name)
                .ok_or_else(|| nonconforming(format!("unknown attribute {name}")))?;
            spec.check_value(value).map_err(nonconforming)?;
        }
        Ok(())
    }

    pub fn missing_count(&self, attribute: &str) -> usize {
        self.applications
            .iter()
            .filter(|a| !a.values.contains_key(attribute))
            .count()
    }

    pub fn missing_rate(&self, attribute: &str) -> f64 {
        if self.applications.is_empty() {
            return 0.0;
        }
        self.missing_count(attribute) as f64 / self.applications.len() as f64
    }

    /// True when every application has a value for every attribute.
    pub fn is_complete(&self) -> bool {
        self.applications
            .iter()
            .all(|a| self.schema.attributes.iter().all(|s| a.values.contains_key(&s.name)))
    }

    pub fn labels(&self) -> Vec<Option<Decision>> {
        self.applications.iter().map(|a| a.label).collect()
    }

    fn with_applications(&self, applications: Vec<Application>) -> Self {
        Self {
            schema: self.schema.clone(),
            applications,
            cleaning: self.cleaning.clone(),
        }
    }
}

/// Drops attributes whose missing rate exceeds `max_missing_rate` (strictly)
/// and imputes the remaining gaps: median for continuous attributes, mode
/// (lowest index on ties) for categorical and binary ones.
pub fn prune_attributes(d: &Dataset, max_missing_rate: f64) -> Result<Dataset, DatasetError> {
    if !(max_missing_rate > 0.0 && max_missing_rate < 1.0) {
        return Err(DatasetError::InvalidParameter(format!(
            "max_missing_rate must lie in (0, 1), got {max_missing_rate}"
        )));
    }
    let mut kept = Vec::new();
    let mut meta = CleaningMeta {
        max_missing_rate: Some(max_missing_rate),
        pruned: d.cleaning.pruned.clone(),
        imputed: d.cleaning.imputed.clone(),
    };
    for spec in &d.schema.attributes {
        let rate = d.missing_rate(&spec.name);
        if rate > max_missing_rate {
            meta.pruned.push(PrunedAttribute {
                name: spec.name.clone(),
                missing_rate: rate,
            });
        } else {
            kept.push(spec.clone());
        }
    }
    if kept.is_empty() {
        return Err(DatasetError::Empty);
    }

    let mut applications: Vec<Application> = d
        .applications
        .iter()
        .map(|a| Application {
            id: a.id.clone(),
            values: a
                .values
                .iter()
                .filter(|(k, _)| kept.iter().any(|s| &s.name == *k))
                .map(|(k, v)| (k.clone(), *v))
                .collect(),
            label: a.label,
        })
        .collect();

    for spec in &kept {
        let present: Vec<f64> = applications.iter().filter_map(|a| a.value(&spec.name)).collect();
        let filled = applications.len() - present.len();
        if filled == 0 {
            continue;
        }
        let (method, fill_value) = if spec.is_continuous() {
            (ImputationMethod::Median, median(&present))
        } else {
            (ImputationMethod::Mode, mode(&present, spec.categories.len()))
        };
        for app in &mut applications {
            app.values.entry(spec.name.clone()).or_insert(fill_value);
        }
        meta.imputed.push(Imputation {
            attribute: spec.name.clone(),
            method,
            fill_value,
            filled,
        });
    }

    Ok(Dataset {
        schema: Schema {
            id_column: d.schema.id_column.clone(),
            label_name: d.schema.label_name.clone(),
            attributes: kept,
        },
        applications,
        cleaning: meta,
    })
}

fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

fn mode(values: &[f64], categories: usize) -> f64 {
    let mut counts = vec![0usize; categories];
    for &v in values {
        counts[v as usize] += 1;
    }
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best as f64
}

/// Random partition into a training part of `round(n * train_fraction)`
/// applications and a test part holding the rest. Both parts keep the
/// original row order.
pub fn split(d: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset), DatasetError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DatasetError::InvalidParameter(format!(
            "train_fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let n = d.len();
    let n_train = (n as f64 * train_fraction).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut train_idx = order[..n_train].to_vec();
    let mut test_idx = order[n_train..].to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    let pick = |idx: &[usize]| idx.iter().map(|&i| d.applications[i].clone()).collect();
    Ok((
        d.with_applications(pick(&train_idx)),
        d.with_applications(pick(&test_idx)),
    ))
}
