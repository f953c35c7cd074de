//! Run configuration: defaults, overlaid by a model's embedded config, a
//! TOML file, `--set key=value` pairs and finally explicit flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use loanlens_core::dataset::{
    generate_synthetic, load_csv, prune_attributes, read_schema, split, DEFAULT_BIAS_STRENGTH, DEFAULT_MAX_MISSING_RATE,
};
use loanlens_core::{Application, Dataset, GroupSpec, TrainConfig};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// CSV input; mutually exclusive with `synthetic_n`.
    pub dataset: Option<PathBuf>,
    /// Schema for `dataset`; defaults to the CSV path with `.schema.json`.
    pub schema: Option<PathBuf>,
    pub synthetic_n: Option<usize>,
    pub bias_strength: f64,
    pub seed: u64,
    pub l2: f64,
    pub train_fraction: f64,
    pub max_missing_rate: f64,
    pub group_attribute: String,
    /// Defaults to the second category of a binary attribute.
    pub protected_value: Option<String>,
    /// Applications that audit and simulate evaluate.
    pub scope: Scope,
    pub log_dir: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    /// The whole cleaned dataset.
    All,
    /// The held-out split, i.e. the applications the service presents.
    Test,
}

pub const DEFAULT_SYNTHETIC_N: usize = 1000;

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            schema: None,
            synthetic_n: None,
            bias_strength: DEFAULT_BIAS_STRENGTH,
            seed: 1,
            l2: TrainConfig::default().l2_strength,
            train_fraction: 0.7,
            max_missing_rate: DEFAULT_MAX_MISSING_RATE,
            group_attribute: "nationality".into(),
            protected_value: None,
            scope: Scope::All,
            log_dir: None,
            out: None,
        }
    }
}

/// Layers are merged key by key; later layers win.
#[derive(Debug, Default)]
pub struct ConfigBuilder {
    table: Table,
}

impl ConfigBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn layer(mut self, layer: Table) -> Self {
        for (k, v) in layer {
            self.table.insert(k, v);
        }
        self
    }

    pub fn without(mut self, key: &str) -> Self {
        self.table.remove(key);
        self
    }

    /// Input-selecting keys from a model's embedded configuration; output
    /// paths of the producing run are not inherited.
    pub fn embedded(self, config: &serde_json::Value) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_value(config.clone()).context("embedded run config")?;
        let mut t = to_table(&cfg)?;
        t.remove("out");
        t.remove("log_dir");
        Ok(self.layer(t))
    }

    pub fn file(self, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let t: Table = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        Ok(self.layer(t))
    }

    /// `key=value` pairs; values use TOML syntax, bare words are strings.
    pub fn pairs(self, pairs: &[String]) -> Result<Self> {
        let mut t = Table::new();
        for p in pairs {
            let Some((k, v)) = p.split_once('=') else {
                bail!("expected key=value, got {p:?}");
            };
            let (k, v) = (k.trim().replace('-', "_"), v.trim());
            let value = match toml::from_str::<Table>(&format!("v = {v}")) {
                Ok(mut parsed) => parsed.remove("v").expect("parsed key"),
                Err(_) => Value::String(v.to_string()),
            };
            t.insert(k, value);
        }
        Ok(self.layer(t))
    }

    pub fn build(self) -> Result<RunConfig> {
        let mut t = to_table(&RunConfig::default())?;
        for (k, v) in self.table {
            t.insert(k, v);
        }
        let cfg: RunConfig = t.try_into().context("invalid configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn to_table(cfg: &RunConfig) -> Result<Table> {
    Ok(Table::try_from(cfg)?)
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dataset.is_some() && self.synthetic_n.is_some() {
            bail!("dataset and synthetic_n are mutually exclusive");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            bail!("train_fraction {} outside (0, 1)", self.train_fraction);
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            bail!("l2 must be a finite non-negative number");
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            l2_strength: self.l2,
            ..TrainConfig::default()
        }
    }

    pub fn schema_path(&self) -> Option<PathBuf> {
        self.schema
            .clone()
            .or_else(|| self.dataset.as_ref().map(|d| schema_beside(d)))
    }

    /// Raw dataset, before cleaning.
    pub fn load_raw(&self) -> Result<Dataset> {
        match &self.dataset {
            Some(path) => {
                let schema_path = self.schema_path().expect("dataset set");
                let schema = read_schema(&schema_path)?;
                Ok(load_csv(path, &schema)?)
            }
            None => Ok(generate_synthetic(
                self.synthetic_n.unwrap_or(DEFAULT_SYNTHETIC_N),
                self.seed,
                self.bias_strength,
            )?),
        }
    }

    /// Cleaned dataset split into `(train, test)`.
    pub fn load_split(&self) -> Result<(Dataset, Dataset, Dataset)> {
        let data = prune_attributes(&self.load_raw()?, self.max_missing_rate)?;
        let (train, test) = split(&data, self.train_fraction, self.seed)?;
        Ok((data, train, test))
    }

    /// Cleaned dataset and the applications selected by `scope`.
    pub fn load_scoped(&self) -> Result<(Dataset, Vec<Application>)> {
        let (data, _, test) = self.load_split()?;
        let apps = match self.scope {
            Scope::All => data.applications.clone(),
            Scope::Test => test.applications,
        };
        Ok((data, apps))
    }

    pub fn group(&self, d: &Dataset) -> Result<GroupSpec> {
        let spec = d
            .attribute(&self.group_attribute)
            .with_context(|| format!("group attribute {:?} is not in the dataset", self.group_attribute))?;
        let protected = match &self.protected_value {
            Some(v) => v.clone(),
            None if spec.categories.len() == 2 => spec.categories[1].clone(),
            None => bail!("protected_value is required for attribute {:?}", self.group_attribute),
        };
        Ok(GroupSpec::new(spec, &protected)?)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serialises")
    }
}

pub fn schema_beside(csv: &Path) -> PathBuf {
    csv.with_extension("schema.json")
}
