use std::collections::BTreeMap;
use std::io::{BufReader, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use loanlens_core::analysis::{study_report, summarize_sessions};
use loanlens_core::culture::{assign_groups, group_fairness_delta, ScoreMatrix};
use loanlens_core::dataset::{write_csv, write_schema};
use loanlens_core::fairness::{audit_decisions, balanced_accuracy};
use loanlens_core::feedback::log::{read_events, write_events, EventKind, EventRecord};
use loanlens_core::feedback::{aggregate, fairness_delta};
use loanlens_core::model::{train, ModelDocument};
use loanlens_core::simulate::{simulate_cohort, CohortStrategy};
use loanlens_core::{Application, Dataset, Decision, WeightSuggestion};
use loanlens_service::{system_clock, Service, LOG_FILE};
use serde::Deserialize;
use serde_json::json;

use crate::config::{schema_beside, ConfigBuilder, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "loanlens", version, about = "Loan scoring with end-user fairness feedback")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct GlobalArgs {
    /// Labelled CSV; its schema is read from `<name>.schema.json`.
    #[arg(long, global = true, conflicts_with = "synthetic_n")]
    pub dataset: Option<PathBuf>,
    /// Size of the generated synthetic dataset.
    #[arg(long, global = true)]
    pub synthetic_n: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// L2 penalty strength.
    #[arg(long, global = true)]
    pub l2: Option<f64>,
    #[arg(long, global = true)]
    pub train_fraction: Option<f64>,
    #[arg(long, global = true)]
    pub group_attribute: Option<String>,
    #[arg(long, global = true)]
    pub protected_value: Option<String>,
    /// Applications evaluated by audit, simulate and analyze: `all` or `test`.
    #[arg(long, global = true, value_parser = ["all", "test"])]
    pub scope: Option<String>,
    #[arg(long, global = true)]
    pub log_dir: Option<PathBuf>,
    /// Primary output file.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// TOML file of configuration keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one configuration key (`key=value`, repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset as CSV plus schema.
    Generate,
    /// Train on the training split and write a model file.
    Train,
    /// Disparate impact of a model, or of explicit decisions, on a group.
    Audit {
        #[arg(long)]
        model: Option<PathBuf>,
        /// CSV with `id,decision` columns to audit instead of a model.
        #[arg(long, conflicts_with = "model")]
        decisions: Option<PathBuf>,
    },
    /// Run a scripted suggestion cohort and report the fairness delta.
    Simulate {
        #[arg(long)]
        model: PathBuf,
        /// TOML cohort strategy.
        #[arg(long)]
        strategy: PathBuf,
        /// JSON report destination.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Statistics over event logs grouped by cultural dimension.
    Analyze {
        /// Event log files; defaults to the log in `--log-dir`.
        #[arg(long = "log")]
        logs: Vec<PathBuf>,
        /// Adds per-group disparate impact of the logged suggestions.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Country score matrix CSV (defaults to the bundled one).
        #[arg(long)]
        culture_matrix: Option<PathBuf>,
        #[arg(long, requires = "culture_matrix")]
        neighbors: Option<PathBuf>,
        #[arg(long, requires = "culture_matrix")]
        aliases: Option<PathBuf>,
    },
    /// Serve the HTTP API over the test split.
    Serve {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
}

impl GlobalArgs {
    fn flags(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push(format!("{k}={v}"));
            }
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| toml_string(&p.to_string_lossy()));
        push("dataset", path(&self.dataset));
        push("synthetic_n", self.synthetic_n.map(|v| v.to_string()));
        push("seed", self.seed.map(|v| v.to_string()));
        push("l2", self.l2.map(toml_float));
        push("train_fraction", self.train_fraction.map(toml_float));
        push("group_attribute", self.group_attribute.as_deref().map(toml_string));
        push("protected_value", self.protected_value.as_deref().map(toml_string));
        push("scope", self.scope.as_deref().map(toml_string));
        push("log_dir", path(&self.log_dir));
        push("out", path(&self.out));
        out
    }

    /// defaults < model's embedded config < `--config` < `--set` < flags
    pub fn resolve(&self, embedded: Option<&serde_json::Value>) -> Result<RunConfig> {
        let mut b = ConfigBuilder::new();
        if let Some(e) = embedded {
            b = b.embedded(e)?;
        }
        if let Some(path) = &self.config {
            b = b.file(path)?;
        }
        let mut b = b.pairs(&self.set)?;
        // an explicit data source replaces an inherited one
        if self.dataset.is_some() {
            b = b.without("synthetic_n");
        } else if self.synthetic_n.is_some() {
            b = b.without("dataset").without("schema");
        }
        let b = b.pairs(&self.flags())?;
        b.build()
    }
}

fn toml_string(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

fn toml_float(v: f64) -> String {
    toml::Value::Float(v).to_string()
}

fn load_model(path: &Path) -> Result<ModelDocument> {
    Ok(ModelDocument::load(path)?)
}

fn embedded_config(doc: &ModelDocument) -> Option<&serde_json::Value> {
    doc.provenance.get("config")
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let g = &cli.global;
    match cli.command {
        Command::Generate => {
            let cfg = g.resolve(None)?;
            if cfg.dataset.is_some() {
                bail!("generate writes a synthetic dataset; --dataset is an input option");
            }
            let data = cfg.load_raw()?;
            let path = cfg.out.clone().unwrap_or_else(|| PathBuf::from("applications.csv"));
            let file = std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
            write_csv(&data, file)?;
            let schema_path = schema_beside(&path);
            write_schema(&data.schema, &schema_path)?;
            writeln!(out, "wrote {} applications to {}", data.len(), path.display())?;
            writeln!(out, "schema: {}", schema_path.display())?;
        }
        Command::Train => {
            let cfg = g.resolve(None)?;
            let (data, train_set, test) = cfg.load_split()?;
            let model = train(&train_set, &cfg.train_config())?;
            let predicted: Vec<Decision> = model
                .predict_all(&test.applications)?
                .iter()
                .map(|p| p.decision)
                .collect();
            let truth = test
                .labels()
                .into_iter()
                .collect::<Option<Vec<_>>>()
                .context("test split contains unlabelled applications")?;
            let ba = balanced_accuracy(&predicted, &truth)?;
            let provenance = json!({
                "config": cfg.to_json(),
                "attributes": data.schema.attributes.len(),
                "pruned": data.cleaning.pruned.iter().map(|p| &p.name).collect::<Vec<_>>(),
                "split": { "train": train_set.len(), "test": test.len() },
                "balanced_accuracy": ba,
            });
            let path = cfg.out.clone().unwrap_or_else(|| PathBuf::from("model.json"));
            ModelDocument::new(model, provenance).save(&path)?;
            writeln!(out, "split: {} train / {} test", train_set.len(), test.len())?;
            writeln!(out, "balanced accuracy: {ba:.4}")?;
            writeln!(out, "model: {}", path.display())?;
        }
        Command::Audit { model, decisions } => {
            let (report, cfg) = match (model, decisions) {
                (Some(path), None) => {
                    let doc = load_model(&path)?;
                    let cfg = g.resolve(embedded_config(&doc))?;
                    let (data, apps) = cfg.load_scoped()?;
                    let decided: Vec<Decision> = doc.model.predict_all(&apps)?.iter().map(|p| p.decision).collect();
                    (audit_decisions(&apps, &decided, &cfg.group(&data)?)?, cfg)
                }
                (None, Some(path)) => {
                    let cfg = g.resolve(None)?;
                    let data = cfg.load_raw()?;
                    let (apps, decided) = read_decisions(&path, &data)?;
                    (audit_decisions(&apps, &decided, &cfg.group(&data)?)?, cfg)
                }
                _ => bail!("audit needs --model or --decisions"),
            };
            writeln!(out, "{report}")?;
            if let Some(path) = &cfg.out {
                write_json(path, &json!({ "config": cfg.to_json(), "report": report }))?;
            }
        }
        Command::Simulate {
            model,
            strategy,
            report,
        } => {
            let doc = load_model(&model)?;
            let cfg = g.resolve(embedded_config(&doc))?;
            let text = std::fs::read_to_string(&strategy).with_context(|| format!("reading {}", strategy.display()))?;
            let strategy: CohortStrategy =
                toml::from_str(&text).with_context(|| format!("parsing {}", strategy.display()))?;
            let (data, apps) = cfg.load_scoped()?;
            let group = cfg.group(&data)?;
            let suggestions = simulate_cohort(&strategy, &doc.model, &apps, &group)?;
            let adj = aggregate(&suggestions, &doc.model, &apps)?;
            let delta = fairness_delta(&adj, &apps, &group)?;

            let records = suggestion_log(&strategy, &suggestions);
            let log_path = match (&cfg.out, &cfg.log_dir) {
                (Some(p), _) => p.clone(),
                (None, Some(dir)) => {
                    std::fs::create_dir_all(dir)?;
                    dir.join(LOG_FILE)
                }
                (None, None) => PathBuf::from("suggestions.ndjson"),
            };
            let file = std::fs::File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
            write_events(&records, std::io::BufWriter::new(file))?;

            writeln!(
                out,
                "cohort: {} users, {} suggestions",
                strategy.cohort_size,
                suggestions.len()
            )?;
            writeln!(out, "overridden applications: {}", delta.overridden)?;
            writeln!(out, "\nbefore\n{}\n\nafter\n{}", delta.before, delta.after)?;
            writeln!(out, "\nlog: {}", log_path.display())?;
            if let Some(path) = report {
                write_json(
                    &path,
                    &json!({ "config": cfg.to_json(), "strategy": strategy, "delta": delta }),
                )?;
            }
        }
        Command::Analyze {
            logs,
            model,
            culture_matrix,
            neighbors,
            aliases,
        } => {
            let doc = model.as_deref().map(load_model).transpose()?;
            let cfg = g.resolve(doc.as_ref().and_then(embedded_config))?;
            let logs = if logs.is_empty() {
                match &cfg.log_dir {
                    Some(dir) => vec![dir.join(LOG_FILE)],
                    None => bail!("analyze needs --log or --log-dir"),
                }
            } else {
                logs
            };
            let mut records = Vec::new();
            for path in &logs {
                let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
                records.extend(read_events(BufReader::new(file)).with_context(|| path.display().to_string())?);
            }
            let matrix = match &culture_matrix {
                Some(m) => ScoreMatrix::load(m, neighbors.as_deref(), aliases.as_deref())?,
                None => ScoreMatrix::bundled(),
            };
            let sessions = summarize_sessions(&records);
            let pairs: Vec<(String, String)> = sessions
                .iter()
                .map(|s| (s.session_id.clone(), s.country.clone().unwrap_or_default()))
                .collect();
            let groupings = assign_groups(&pairs, &matrix, &matrix.dimension_means());

            let (original, deltas) = match &doc {
                Some(doc) => {
                    let (data, apps) = cfg.load_scoped()?;
                    let group = cfg.group(&data)?;
                    let suggestions = records
                        .iter()
                        .filter(|r| r.kind == EventKind::Suggestion)
                        .map(|r| r.to_suggestion().map_err(anyhow::Error::msg))
                        .collect::<Result<Vec<_>>>()?;
                    let decided: Vec<Decision> = doc.model.predict_all(&apps)?.iter().map(|p| p.decision).collect();
                    let original = audit_decisions(&apps, &decided, &group)?;
                    let deltas = groupings
                        .iter()
                        .map(|gr| {
                            group_fairness_delta(gr, &suggestions, &doc.model, &apps, &group).map(|r| (gr.dimension, r))
                        })
                        .collect::<Result<Vec<_>, _>>()?;
                    (Some(original), deltas)
                }
                None => (None, Vec::new()),
            };
            let report = study_report(&sessions, &groupings, original.as_ref(), &deltas);
            writeln!(out, "{report}")?;
            if let Some(path) = &cfg.out {
                write_json(
                    path,
                    &json!({ "config": cfg.to_json(), "logs": logs, "report": report }),
                )?;
            }
        }
        Command::Serve { model, addr } => {
            let doc = load_model(&model)?;
            let cfg = g.resolve(embedded_config(&doc))?;
            let (data, _, test) = cfg.load_split()?;
            let group = cfg.group(&data)?;
            let service = Service::open(
                doc.model,
                test.schema.clone(),
                test.applications,
                group,
                cfg.log_dir.as_deref(),
                system_clock(),
            )?;
            writeln!(
                out,
                "serving {} applications on http://{addr}",
                service.applications().len()
            )?;
            out.flush()?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(loanlens_service::serve(service, addr))?;
        }
    }
    Ok(())
}

/// A replayable log: one session record per simulated user, then its
/// suggestions.
fn suggestion_log(strategy: &CohortStrategy, suggestions: &[WeightSuggestion]) -> Vec<EventRecord> {
    let mut by_session: BTreeMap<String, Vec<EventRecord>> = BTreeMap::new();
    for user in 0..strategy.cohort_size {
        let id = strategy.session_id(user);
        let opened = EventRecord::session(&id, "simulated", None, user as u64 * 1_000_000);
        by_session.insert(id, vec![opened]);
    }
    for s in suggestions {
        by_session
            .get_mut(&s.session_id)
            .expect("suggestion from a cohort session")
            .push(EventRecord::suggestion(s));
    }
    by_session.into_values().flatten().collect()
}

#[derive(Debug, Deserialize)]
struct DecisionRow {
    id: String,
    decision: String,
}

fn read_decisions(path: &Path, data: &Dataset) -> Result<(Vec<Application>, Vec<Decision>)> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let mut apps = Vec::new();
    let mut decisions = Vec::new();
    for (i, row) in reader.deserialize::<DecisionRow>().enumerate() {
        let row = row.with_context(|| format!("{} row {}", path.display(), i + 2))?;
        let app = data
            .application(&row.id)
            .with_context(|| format!("{} row {}: unknown application {:?}", path.display(), i + 2, row.id))?;
        let d = Decision::parse(&row.decision)
            .with_context(|| format!("{} row {}: invalid decision {:?}", path.display(), i + 2, row.decision))?;
        apps.push(app.clone());
        decisions.push(d);
    }
    Ok((apps, decisions))
}
