//! Country-level cultural-dimension scores and High/Low participant groups.
//!
//! Scores are only ever used to place sessions into groups; there is no
//! per-individual score API.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Application;
use crate::fairness::{audit_decisions, FairnessReport, GroupSpec};
use crate::feedback::{aggregate, FeedbackError, WeightSuggestion};
use crate::model::ScoringModel;

const BUNDLED_MATRIX: &str = include_str!("../data/hofstede.csv");
const BUNDLED_NEIGHBORS: &str = include_str!("../data/neighbors.csv");
const BUNDLED_ALIASES: &str = include_str!("../data/aliases.csv");

/// Cell value marking a missing score in the matrix file.
pub const MISSING_SENTINEL: &str = "#NULL!";

#[derive(Debug, Error)]
pub enum CultureError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("no scores for {country} and no neighbours to fill {dimension}")]
    Unresolved { country: String, dimension: Dimension },
    #[error("score matrix is empty")]
    Empty,
    #[error(transparent)]
    Feedback(#[from] FeedbackError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Dimension {
    #[serde(rename = "PD")]
    PowerDistance,
    #[serde(rename = "IDV")]
    Individualism,
    #[serde(rename = "MSC")]
    Masculinity,
    #[serde(rename = "UA")]
    UncertaintyAvoidance,
    #[serde(rename = "LTO")]
    LongTermOrientation,
    #[serde(rename = "IDG")]
    Indulgence,
}

impl Dimension {
    pub const ALL: [Dimension; 6] = [
        Dimension::PowerDistance,
        Dimension::Individualism,
        Dimension::Masculinity,
        Dimension::UncertaintyAvoidance,
        Dimension::LongTermOrientation,
        Dimension::Indulgence,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Dimension::PowerDistance => "PD",
            Dimension::Individualism => "IDV",
            Dimension::Masculinity => "MSC",
            Dimension::UncertaintyAvoidance => "UA",
            Dimension::LongTermOrientation => "LTO",
            Dimension::Indulgence => "IDG",
        }
    }

    pub fn parse(code: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|d| d.code().eq_ignore_ascii_case(code))
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CultureScores {
    pub country: String,
    pub pd: f64,
    pub idv: f64,
    pub msc: f64,
    pub ua: f64,
    pub lto: f64,
    pub idg: f64,
}

impl CultureScores {
    fn from_array(country: &str, v: [f64; 6]) -> Self {
        Self {
            country: country.to_string(),
            pd: v[0],
            idv: v[1],
            msc: v[2],
            ua: v[3],
            lto: v[4],
            idg: v[5],
        }
    }

    pub fn get(&self, d: Dimension) -> f64 {
        match d {
            Dimension::PowerDistance => self.pd,
            Dimension::Individualism => self.idv,
            Dimension::Masculinity => self.msc,
            Dimension::UncertaintyAvoidance => self.ua,
            Dimension::LongTermOrientation => self.lto,
            Dimension::Indulgence => self.idg,
        }
    }
}

pub type DimensionMeans = BTreeMap<Dimension, f64>;

/// Raw score matrix plus the neighbour list used to fill gaps and a table of
/// alternative country names.
#[derive(Debug, Clone, Default)]
pub struct ScoreMatrix {
    rows: BTreeMap<String, [Option<f64>; 6]>,
    neighbors: BTreeMap<String, Vec<String>>,
    aliases: BTreeMap<String, String>,
}

fn records(text: &str) -> impl Iterator<Item = (usize, Result<csv::StringRecord, csv::Error>)> + '_ {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'%'))
        .from_reader(text.as_bytes())
        .into_records()
        .map(|r| {
            let line = r
                .as_ref()
                .ok()
                .and_then(|r| r.position())
                .map_or(0, |p| p.line() as usize);
            (line, r)
        })
}

fn parse_err(line: usize, e: impl fmt::Display) -> CultureError {
    CultureError::Parse {
        line,
        message: e.to_string(),
    }
}

/// Parses `country,pd,idv,msc,ua,lto,idg`; empty cells and `#NULL!` are
/// missing.
pub fn parse_matrix(text: &str) -> Result<BTreeMap<String, [Option<f64>; 6]>, CultureError> {
    let mut out = BTreeMap::new();
    for (line, r) in records(text) {
        let r = r.map_err(|e| parse_err(line, e))?;
        if r.len() != 7 {
            return Err(parse_err(line, format!("expected 7 fields, found {}", r.len())));
        }
        let mut scores = [None; 6];
        for (k, cell) in r.iter().skip(1).enumerate() {
            if cell.is_empty() || cell == MISSING_SENTINEL {
                continue;
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(line, format!("bad score {cell:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("non-finite score {cell:?}")));
            }
            scores[k] = Some(v);
        }
        out.insert(r[0].to_string(), scores);
    }
    Ok(out)
}

fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, CultureError> {
    records(text)
        .map(|(line, r)| {
            let r = r.map_err(|e| parse_err(line, e))?;
            if r.len() != 2 {
                return Err(parse_err(line, format!("expected 2 fields, found {}", r.len())));
            }
            Ok((r[0].to_string(), r[1].to_string()))
        })
        .collect()
}

fn read(path: &Path) -> Result<String, CultureError> {
    std::fs::read_to_string(path).map_err(|e| CultureError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

impl ScoreMatrix {
    pub fn from_text(matrix: &str, neighbors: &str, aliases: &str) -> Result<Self, CultureError> {
        let rows = parse_matrix(matrix)?;
        if rows.is_empty() {
            return Err(CultureError::Empty);
        }
        let mut adjacency: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (c, n) in parse_pairs(neighbors)? {
            adjacency.entry(c).or_default().push(n);
        }
        Ok(Self {
            rows,
            neighbors: adjacency,
            aliases: parse_pairs(aliases)?.into_iter().collect(),
        })
    }

    /// The pinned matrix shipped with the crate.
    pub fn bundled() -> Self {
        Self::from_text(BUNDLED_MATRIX, BUNDLED_NEIGHBORS, BUNDLED_ALIASES).expect("bundled culture data parses")
    }

    /// Loads a matrix file; neighbour and alias files default to the bundled
    /// ones.
    pub fn load(matrix: &Path, neighbors: Option<&Path>, aliases: Option<&Path>) -> Result<Self, CultureError> {
        let n = neighbors.map(read).transpose()?;
        let a = aliases.map(read).transpose()?;
        Self::from_text(
            &read(matrix)?,
            n.as_deref().unwrap_or(BUNDLED_NEIGHBORS),
            a.as_deref().unwrap_or(BUNDLED_ALIASES),
        )
    }

    pub fn countries(&self) -> impl Iterator<Item = &str> {
        self.rows.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Canonical matrix name: exact, then alias, then case-insensitive.
    pub fn canonical<'a>(&'a self, country: &'a str) -> &'a str {
        let country = country.trim();
        if self.rows.contains_key(country) || self.neighbors.contains_key(country) {
            return country;
        }
        if let Some(c) = self.aliases.get(country) {
            return c;
        }
        let fold = |s: &str| s.to_lowercase();
        let wanted = fold(country);
        self.rows
            .keys()
            .chain(self.neighbors.keys())
            .find(|k| fold(k) == wanted)
            .or_else(|| self.aliases.iter().find(|(k, _)| fold(k) == wanted).map(|(_, v)| v))
            .map_or(country, String::as_str)
    }

    /// Matrix scores for `country`, with each missing dimension replaced by
    /// the mean over the designated neighbours that have it.
    pub fn resolve(&self, country: &str) -> Result<CultureScores, CultureError> {
        let name = self.canonical(country);
        let own = self.rows.get(name).copied().unwrap_or([None; 6]);
        let neighbors = self.neighbors.get(name).map(Vec::as_slice).unwrap_or(&[]);
        let mut out = [0.0; 6];
        for d in Dimension::ALL {
            let k = d.index();
            out[k] = match own[k] {
                Some(v) => v,
                None => {
                    let vals: Vec<f64> = neighbors
                        .iter()
                        .filter_map(|n| self.rows.get(n.as_str()).and_then(|r| r[k]))
                        .collect();
                    if vals.is_empty() {
                        return Err(CultureError::Unresolved {
                            country: country.to_string(),
                            dimension: d,
                        });
                    }
                    vals.iter().sum::<f64>() / vals.len() as f64
                }
            };
        }
        Ok(CultureScores::from_array(name, out))
    }

    /// Means over the scores present in the matrix, per dimension.
    /// Neighbour-filled values do not enter the mean.
    pub fn dimension_means(&self) -> DimensionMeans {
        Dimension::ALL
            .into_iter()
            .map(|d| {
                let vals: Vec<f64> = self.rows.values().filter_map(|r| r[d.index()]).collect();
                (d, vals.iter().sum::<f64>() / vals.len() as f64)
            })
            .collect()
    }
}

/// Every country listed in the matrix file, resolved.
pub fn load_scores(matrix: &Path) -> Result<BTreeMap<String, CultureScores>, CultureError> {
    let m = ScoreMatrix::load(matrix, None, None)?;
    m.countries().map(|c| Ok((c.to_string(), m.resolve(c)?))).collect()
}

/// Arithmetic mean of each dimension over complete score records.
pub fn dimension_means(scores: &[CultureScores]) -> DimensionMeans {
    Dimension::ALL
        .into_iter()
        .map(|d| (d, scores.iter().map(|s| s.get(d)).sum::<f64>() / scores.len() as f64))
        .collect()
}

/// Where a participant's country can come from, in precedence order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountrySources {
    pub registered_residence: Option<String>,
    pub registered_birth: Option<String>,
    pub questionnaire_residence: Option<String>,
    pub questionnaire_nationality: Option<String>,
}

impl CountrySources {
    fn ordered(&self) -> impl Iterator<Item = &str> {
        [
            &self.registered_residence,
            &self.registered_birth,
            &self.questionnaire_residence,
            &self.questionnaire_nationality,
        ]
        .into_iter()
        .flatten()
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
    }

    /// First source, in precedence order, that resolves against `m`.
    pub fn resolve(&self, m: &ScoreMatrix) -> Option<CultureScores> {
        self.ordered().find_map(|c| m.resolve(c).ok())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Level {
    High,
    Low,
}

impl Level {
    /// High only when strictly above the mean.
    pub fn classify(score: f64, mean: f64) -> Self {
        if score > mean {
            Level::High
        } else {
            Level::Low
        }
    }

    pub fn suffix(self) -> &'static str {
        match self {
            Level::High => "H",
            Level::Low => "L",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionGrouping {
    pub dimension: Dimension,
    pub mean: f64,
    pub assignment: BTreeMap<String, Level>,
    /// Sessions whose country could not be resolved.
    pub unresolved: Vec<String>,
}

impl DimensionGrouping {
    pub fn members(&self, level: Level) -> impl Iterator<Item = &str> {
        self.assignment
            .iter()
            .filter(move |(_, l)| **l == level)
            .map(|(s, _)| s.as_str())
    }

    pub fn count(&self, level: Level) -> usize {
        self.members(level).count()
    }

    /// Splits suggestions by the level of their session; suggestions from
    /// ungrouped sessions are dropped.
    pub fn partition(&self, suggestions: &[WeightSuggestion]) -> BTreeMap<Level, Vec<WeightSuggestion>> {
        let mut out: BTreeMap<Level, Vec<WeightSuggestion>> = [(Level::High, Vec::new()), (Level::Low, Vec::new())]
            .into_iter()
            .collect();
        for s in suggestions {
            if let Some(level) = self.assignment.get(&s.session_id) {
                out.get_mut(level).expect("both levels present").push(s.clone());
            }
        }
        out
    }
}

/// One grouping per dimension for `(session_id, country)` pairs.
pub fn assign_groups(sessions: &[(String, String)], m: &ScoreMatrix, means: &DimensionMeans) -> Vec<DimensionGrouping> {
    let resolved: Vec<(&str, Option<CultureScores>)> =
        sessions.iter().map(|(s, c)| (s.as_str(), m.resolve(c).ok())).collect();
    Dimension::ALL
        .into_iter()
        .map(|d| {
            let mean = means[&d];
            let mut grouping = DimensionGrouping {
                dimension: d,
                mean,
                assignment: BTreeMap::new(),
                unresolved: Vec::new(),
            };
            for (session, scores) in &resolved {
                match scores {
                    Some(s) => {
                        grouping
                            .assignment
                            .insert(session.to_string(), Level::classify(s.get(d), mean));
                    }
                    None => grouping.unresolved.push(session.to_string()),
                }
            }
            grouping
        })
        .collect()
}

/// Disparate impact after aggregating only each subgroup's suggestions. An
/// empty subgroup reproduces the original model's report.
pub fn group_fairness_delta(
    grouping: &DimensionGrouping,
    suggestions: &[WeightSuggestion],
    m: &ScoringModel,
    apps: &[Application],
    g: &GroupSpec,
) -> Result<BTreeMap<Level, FairnessReport>, CultureError> {
    grouping
        .partition(suggestions)
        .into_iter()
        .map(|(level, subset)| {
            let adj = aggregate(&subset, m, apps)?;
            let report = audit_decisions(apps, &adj.adjusted_decisions(), g).map_err(FeedbackError::from)?;
            Ok((level, report))
        })
        .collect()
}
