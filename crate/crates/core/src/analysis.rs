//! Rank-based tests, correlation, and the study report that groups
//! per-session feedback by cultural dimension.
//!
//! All tests are two-sided.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal, StudentsT};
use thiserror::Error;

use crate::culture::{Dimension, DimensionGrouping, Level};
use crate::fairness::{unfairness_ratio, FairnessReport};
use crate::feedback::{effective_judgments, EventKind, EventRecord, FairnessJudgment, JudgmentVerdict};

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("sample is empty")]
    EmptySample,
    #[error("need at least 2 groups, got {0}")]
    TooFewGroups(usize),
    #[error("samples differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least 3 paired observations, got {0}")]
    TooShort(usize),
    #[error("sample has zero variance")]
    ZeroVariance,
    #[error("sample contains a non-finite value")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    /// U, H or r depending on the test.
    pub statistic: f64,
    pub p_value: f64,
    pub group_sizes: Vec<usize>,
    pub method: String,
}

/// When exact permutation p-values are used instead of large-sample
/// approximations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExactPolicy {
    /// Mann-Whitney is exact while `n_x + n_y` is at most this.
    pub mann_whitney_max_total: usize,
    /// Kruskal-Wallis is exact while the number of distinct group
    /// assignments `N! / (n_1! ... n_k!)` is at most this.
    pub kruskal_max_assignments: u64,
}

impl Default for ExactPolicy {
    fn default() -> Self {
        Self {
            mann_whitney_max_total: 20,
            kruskal_max_assignments: 20_000_000,
        }
    }
}

fn check(sample: &[f64]) -> Result<(), AnalysisError> {
    if sample.is_empty() {
        return Err(AnalysisError::EmptySample);
    }
    if sample.iter().any(|v| !v.is_finite()) {
        return Err(AnalysisError::NonFinite);
    }
    Ok(())
}

/// Midranks (1-based) of `values`, and the tie term `sum(t^3 - t)`.
pub fn midranks(values: &[f64]) -> (Vec<f64>, f64) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i..j share rank (i+1 + j)/2
        let r = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        let t = (j - i) as f64;
        ties += t * t * t - t;
        i = j;
    }
    (ranks, ties)
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

pub fn mann_whitney_u(x: &[f64], y: &[f64]) -> Result<TestResult, AnalysisError> {
    mann_whitney_u_with(x, y, &ExactPolicy::default())
}

/// U for `x`: `R_x - n_x (n_x + 1) / 2` with midranks.
pub fn mann_whitney_u_with(x: &[f64], y: &[f64], policy: &ExactPolicy) -> Result<TestResult, AnalysisError> {
    check(x)?;
    check(y)?;
    let (nx, ny) = (x.len(), y.len());
    let n = nx + ny;
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let rx: f64 = ranks[..nx].iter().sum();
    let u = rx - (nx * (nx + 1)) as f64 / 2.0;

    let (p, method) = if n <= policy.mann_whitney_max_total {
        (exact_rank_sum_p(&ranks, nx), "mann-whitney exact")
    } else {
        let mean = (nx * ny) as f64 / 2.0;
        let var = (nx * ny) as f64 / 12.0 * ((n + 1) as f64 - ties / (n * (n - 1)) as f64);
        let p = if var <= 0.0 {
            1.0
        } else {
            let z = ((u - mean).abs() - 0.5).max(0.0) / var.sqrt();
            2.0 * standard_normal().sf(z)
        };
        (p, "mann-whitney normal approximation")
    };
    Ok(TestResult {
        statistic: u,
        p_value: p.clamp(0.0, 1.0),
        group_sizes: vec![nx, ny],
        method: method.to_string(),
    })
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

/// Permutation p-value of the rank sum of the first `nx` entries, counting
/// subsets by doubled rank sum so midranks stay integral.
fn exact_rank_sum_p(ranks: &[f64], nx: usize) -> f64 {
    let n = ranks.len();
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let max_sum: usize = doubled.iter().sum();
    // counts[j][s]: subsets of size j with doubled sum s
    let mut counts = vec![vec![0.0f64; max_sum + 1]; nx + 1];
    counts[0][0] = 1.0;
    for &r in &doubled {
        for j in (1..=nx).rev() {
            for s in (r..=max_sum).rev() {
                let c = counts[j - 1][s - r];
                if c != 0.0 {
                    counts[j][s] += c;
                }
            }
        }
    }
    let observed: usize = doubled[..nx].iter().sum();
    let centre = (nx * (n + 1)) as i64;
    let d = (observed as i64 - centre).abs();
    let extreme: f64 = counts[nx]
        .iter()
        .enumerate()
        .filter(|(s, _)| (*s as i64 - centre).abs() >= d)
        .map(|(_, c)| c)
        .sum();
    extreme / binomial(n, nx)
}

pub fn kruskal_wallis(groups: &[&[f64]]) -> Result<TestResult, AnalysisError> {
    kruskal_wallis_with(groups, &ExactPolicy::default())
}

/// H with tie correction. Exact permutation p when the assignment count
/// fits the policy, chi-squared with `k - 1` df otherwise.
pub fn kruskal_wallis_with(groups: &[&[f64]], policy: &ExactPolicy) -> Result<TestResult, AnalysisError> {
    if groups.len() < 2 {
        return Err(AnalysisError::TooFewGroups(groups.len()));
    }
    for g in groups {
        check(g)?;
    }
    let sizes: Vec<usize> = groups.iter().map(|g| g.len()).collect();
    let pooled: Vec<f64> = groups.iter().flat_map(|g| g.iter().copied()).collect();
    let (ranks, ties) = midranks(&pooled);
    let h = kruskal_h(&ranks, &sizes, ties);

    let (p, method) = match multinomial(&sizes) {
        Some(count) if count <= policy.kruskal_max_assignments as f64 => {
            (exact_kruskal_p(&ranks, &sizes), "kruskal-wallis exact")
        }
        _ if h == 0.0 => (1.0, "kruskal-wallis chi-squared"),
        _ => {
            let chi = ChiSquared::new((groups.len() - 1) as f64).expect("positive df");
            (chi.sf(h), "kruskal-wallis chi-squared")
        }
    };
    Ok(TestResult {
        statistic: h,
        p_value: p.clamp(0.0, 1.0),
        group_sizes: sizes,
        method: method.to_string(),
    })
}

fn kruskal_h(ranks: &[f64], sizes: &[usize], ties: f64) -> f64 {
    let n = ranks.len() as f64;
    let correction = 1.0 - ties / (n * n * n - n);
    if correction <= 0.0 {
        return 0.0;
    }
    let mut start = 0;
    let mut sum = 0.0;
    for &size in sizes {
        let r: f64 = ranks[start..start + size].iter().sum();
        sum += r * r / size as f64;
        start += size;
    }
    let h = (12.0 / (n * (n + 1.0)) * sum - 3.0 * (n + 1.0)) / correction;
    h.max(0.0)
}

fn multinomial(sizes: &[usize]) -> Option<f64> {
    let mut total = 0;
    let mut count = 1.0f64;
    for &s in sizes {
        total += s;
        count *= binomial(total, s);
        if !count.is_finite() {
            return None;
        }
    }
    Some(count)
}

fn gcd(a: u128, b: u128) -> u128 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Enumerates every assignment of the pooled ranks to groups of the given
/// sizes. H is monotone in `sum R_g^2 / n_g`, which is compared exactly as an
/// integer after scaling by the lcm of the group sizes.
fn exact_kruskal_p(ranks: &[f64], sizes: &[usize]) -> f64 {
    let doubled: Vec<u128> = ranks.iter().map(|r| (2.0 * r).round() as u128).collect();
    let lcm = sizes.iter().fold(1u128, |l, &s| l / gcd(l, s as u128) * s as u128);
    let weights: Vec<u128> = sizes.iter().map(|&s| lcm / s as u128).collect();

    let mut start = 0;
    let mut observed = 0u128;
    for (g, &size) in sizes.iter().enumerate() {
        let s: u128 = doubled[start..start + size].iter().sum();
        observed += s * s * weights[g];
        start += size;
    }

    let mut suffix = vec![0u128; doubled.len() + 1];
    for i in (0..doubled.len()).rev() {
        suffix[i] = suffix[i + 1] + doubled[i];
    }

    struct Search<'a> {
        doubled: &'a [u128],
        suffix: &'a [u128],
        weights: &'a [u128],
        observed: u128,
        caps: Vec<usize>,
        sums: Vec<u128>,
        extreme: f64,
        total: f64,
    }

    impl Search<'_> {
        fn leaf(&mut self) {
            let t: u128 = self.sums.iter().zip(self.weights).map(|(s, w)| s * s * w).sum();
            self.total += 1.0;
            if t >= self.observed {
                self.extreme += 1.0;
            }
        }

        fn go(&mut self, i: usize) {
            let open: Vec<usize> = (0..self.caps.len()).filter(|&g| self.caps[g] > 0).collect();
            if open.len() <= 1 {
                if let Some(&g) = open.first() {
                    self.sums[g] += self.suffix[i];
                    self.leaf();
                    self.sums[g] -= self.suffix[i];
                } else {
                    self.leaf();
                }
                return;
            }
            let r = self.doubled[i];
            for g in open {
                self.caps[g] -= 1;
                self.sums[g] += r;
                self.go(i + 1);
                self.sums[g] -= r;
                self.caps[g] += 1;
            }
        }
    }

    let mut search = Search {
        doubled: &doubled,
        suffix: &suffix,
        weights: &weights,
        observed,
        caps: sizes.to_vec(),
        sums: vec![0; sizes.len()],
        extreme: 0.0,
        total: 0.0,
    };
    search.go(0);
    search.extreme / search.total
}

/// `P(Q <= q)` for the studentized range of `k` standard normals with
/// infinite degrees of freedom:
/// `k * integral phi(z) [Phi(z) - Phi(z - q)]^(k-1) dz`.
pub fn studentized_range_cdf(q: f64, k: usize) -> f64 {
    if q <= 0.0 {
        return 0.0;
    }
    let norm = standard_normal();
    let (lo, hi, steps) = (-8.0, 8.0, 4000);
    let h = (hi - lo) / steps as f64;
    let f = |z: f64| {
        let phi = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        phi * (norm.cdf(z) - norm.cdf(z - q)).powi(k as i32 - 1)
    };
    // composite Simpson
    let mut acc = f(lo) + f(hi);
    for i in 1..steps {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(lo + i as f64 * h);
    }
    (k as f64 * acc * h / 3.0).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseResult {
    pub first: usize,
    pub second: usize,
    /// Standardised rank sum of `first` within the pair.
    pub statistic: f64,
    pub p_value: f64,
}

/// Steel-Dwass all-pairs comparison: each pair is re-ranked on its own and
/// the standardised rank sum is referred to the studentized range with `k`
/// groups and infinite df.
pub fn steel_dwass(groups: &[&[f64]]) -> Result<Vec<PairwiseResult>, AnalysisError> {
    let k = groups.len();
    if k < 2 {
        return Err(AnalysisError::TooFewGroups(k));
    }
    for g in groups {
        check(g)?;
    }
    let mut out = Vec::with_capacity(k * (k - 1) / 2);
    for i in 0..k {
        for j in i + 1..k {
            let (a, b) = (groups[i], groups[j]);
            let n = (a.len() + b.len()) as f64;
            let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
            let (ranks, _) = midranks(&pooled);
            let ra: f64 = ranks[..a.len()].iter().sum();
            let mean = a.len() as f64 * (n + 1.0) / 2.0;
            let sq: f64 = ranks.iter().map(|r| r * r).sum();
            let var = (a.len() * b.len()) as f64 / (n * (n - 1.0)) * (sq - n * (n + 1.0) * (n + 1.0) / 4.0);
            let (t, p) = if var > 0.0 && n > 1.0 {
                let t = (ra - mean) / var.sqrt();
                (t, 1.0 - studentized_range_cdf(std::f64::consts::SQRT_2 * t.abs(), k))
            } else {
                (0.0, 1.0)
            };
            out.push(PairwiseResult {
                first: i,
                second: j,
                statistic: t,
                p_value: p.clamp(0.0, 1.0),
            });
        }
    }
    Ok(out)
}

/// Pearson's r with a two-sided t-test on `n - 2` df.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<TestResult, AnalysisError> {
    if x.len() != y.len() {
        return Err(AnalysisError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(AnalysisError::TooShort(x.len()));
    }
    check(x)?;
    check(y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(AnalysisError::ZeroVariance);
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let df = n - 2.0;
    let p = if r.abs() >= 1.0 {
        0.0
    } else {
        let t = r * (df / (1.0 - r * r)).sqrt();
        2.0 * StudentsT::new(0.0, 1.0, df).expect("positive df").sf(t.abs())
    };
    Ok(TestResult {
        statistic: r,
        p_value: p.clamp(0.0, 1.0),
        group_sizes: vec![x.len()],
        method: "pearson t".to_string(),
    })
}

/// Per-session facts pulled from an event log.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub country: Option<String>,
    pub judged_fair: usize,
    pub judged_unfair: usize,
    pub needs_human: usize,
    pub unfairness_ratio: Option<f64>,
    pub suggestions: usize,
    pub pre_rating: Option<u8>,
    pub post_rating: Option<u8>,
    pub taskload: Option<Vec<u8>>,
}

/// Folds an event log into one summary per session, in session order.
pub fn summarize_sessions(records: &[EventRecord]) -> Vec<SessionSummary> {
    let mut sessions: BTreeMap<String, SessionSummary> = BTreeMap::new();
    let mut judgments: BTreeMap<String, Vec<FairnessJudgment>> = BTreeMap::new();
    let mut suggested: BTreeMap<String, std::collections::BTreeSet<String>> = BTreeMap::new();
    for r in records {
        let s = sessions.entry(r.session_id.clone()).or_insert_with(|| SessionSummary {
            session_id: r.session_id.clone(),
            ..SessionSummary::default()
        });
        let field = |k: &str| r.payload.get(k);
        let small = |v: Option<&serde_json::Value>| v.and_then(|v| v.as_u64()).and_then(|v| u8::try_from(v).ok());
        match r.kind {
            EventKind::Session => {
                s.country = field("country").and_then(|v| v.as_str()).map(str::to_string);
                s.pre_rating = small(field("pre_rating"));
            }
            EventKind::Rating => match field("stage").and_then(|v| v.as_str()) {
                Some("post") => s.post_rating = small(field("rating")),
                Some("taskload") => {
                    s.taskload = field("scores")
                        .and_then(|v| v.as_array())
                        .map(|a| a.iter().filter_map(|x| small(Some(x))).collect());
                }
                _ => {}
            },
            EventKind::Judgment => {
                if let Ok(j) = r.to_judgment() {
                    judgments.entry(r.session_id.clone()).or_default().push(j);
                }
            }
            EventKind::Suggestion => {
                if let Some(app) = &r.application_id {
                    suggested.entry(r.session_id.clone()).or_default().insert(app.clone());
                }
            }
            _ => {}
        }
    }
    for (id, s) in sessions.iter_mut() {
        if let Some(js) = judgments.get(id) {
            for j in effective_judgments(js).values() {
                match j.verdict {
                    JudgmentVerdict::Fair => s.judged_fair += 1,
                    JudgmentVerdict::Unfair => s.judged_unfair += 1,
                    JudgmentVerdict::Cleared => {}
                }
                s.needs_human += usize::from(j.needs_human);
            }
            s.unfairness_ratio = unfairness_ratio(js).ok();
        }
        s.suggestions = suggested.get(id).map_or(0, |a| a.len());
    }
    sessions.into_values().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    JudgedFair,
    JudgedUnfair,
    UnfairnessRatio,
}

impl Measure {
    pub const ALL: [Measure; 3] = [Measure::JudgedFair, Measure::JudgedUnfair, Measure::UnfairnessRatio];

    pub fn label(self) -> &'static str {
        match self {
            Measure::JudgedFair => "Judged fair",
            Measure::JudgedUnfair => "Judged unfair",
            Measure::UnfairnessRatio => "Unfairness ratio",
        }
    }

    /// Value for one session; sessions without fair/unfair judgments have
    /// no unfairness ratio.
    pub fn of(self, s: &SessionSummary) -> Option<f64> {
        match self {
            Measure::JudgedFair => Some(s.judged_fair as f64),
            Measure::JudgedUnfair => Some(s.judged_unfair as f64),
            Measure::UnfairnessRatio => s.unfairness_ratio,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Describe {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n - 1).
    pub sd: f64,
}

impl Describe {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self::default();
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { n, mean, sd }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureComparison {
    pub measure: Measure,
    pub low: Describe,
    pub high: Describe,
    /// Mann-Whitney with the Low group as `x`; absent if either side is empty.
    pub test: Option<TestResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionTable {
    pub dimension: Dimension,
    pub mean: f64,
    pub low_sessions: usize,
    pub high_sessions: usize,
    pub measures: Vec<MeasureComparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetweenGroups {
    pub measure: Measure,
    /// Group labels such as `UA-H`, aligned with the test's group sizes.
    pub groups: Vec<String>,
    pub test: TestResult,
    /// Pairs with post-hoc p below the significance level.
    pub significant_pairs: Vec<(String, String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupDisparateImpact {
    pub dimension: Dimension,
    pub level: Level,
    pub disparate_impact: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub sessions: usize,
    pub significance: f64,
    pub tables: Vec<DimensionTable>,
    pub between_groups: Vec<BetweenGroups>,
    /// Post-study rating against unfairness ratio.
    pub rating_correlation: Option<TestResult>,
    pub original_di: Option<f64>,
    pub group_di: Vec<GroupDisparateImpact>,
}

pub const SIGNIFICANCE: f64 = 0.05;

fn group_values<'a>(
    summaries: &'a BTreeMap<&str, &SessionSummary>,
    grouping: &'a DimensionGrouping,
    level: Level,
    measure: Measure,
) -> Vec<f64> {
    grouping
        .members(level)
        .filter_map(|id| summaries.get(id))
        .filter_map(|s| measure.of(s))
        .collect()
}

/// Assembles the per-dimension tables, between-group tests, the rating
/// correlation and per-group disparate impact.
pub fn study_report(
    sessions: &[SessionSummary],
    groupings: &[DimensionGrouping],
    original: Option<&FairnessReport>,
    deltas: &[(Dimension, BTreeMap<Level, FairnessReport>)],
) -> StudyReport {
    let by_id: BTreeMap<&str, &SessionSummary> = sessions.iter().map(|s| (s.session_id.as_str(), s)).collect();
    let mut tables = Vec::new();
    for g in groupings {
        let measures = Measure::ALL
            .into_iter()
            .map(|m| {
                let low = group_values(&by_id, g, Level::Low, m);
                let high = group_values(&by_id, g, Level::High, m);
                MeasureComparison {
                    measure: m,
                    low: Describe::of(&low),
                    high: Describe::of(&high),
                    test: mann_whitney_u(&low, &high).ok(),
                }
            })
            .collect();
        tables.push(DimensionTable {
            dimension: g.dimension,
            mean: g.mean,
            low_sessions: g.members(Level::Low).filter(|id| by_id.contains_key(id)).count(),
            high_sessions: g.members(Level::High).filter(|id| by_id.contains_key(id)).count(),
            measures,
        });
    }

    let mut between_groups = Vec::new();
    for m in [Measure::JudgedUnfair, Measure::UnfairnessRatio] {
        let mut labels = Vec::new();
        let mut samples = Vec::new();
        for g in groupings {
            for level in [Level::High, Level::Low] {
                let v = group_values(&by_id, g, level, m);
                if !v.is_empty() {
                    labels.push(format!("{}-{}", g.dimension.code(), level.suffix()));
                    samples.push(v);
                }
            }
        }
        let refs: Vec<&[f64]> = samples.iter().map(Vec::as_slice).collect();
        if let Ok(test) = kruskal_wallis(&refs) {
            let significant_pairs = steel_dwass(&refs)
                .unwrap_or_default()
                .into_iter()
                .filter(|p| p.p_value < SIGNIFICANCE)
                .map(|p| (labels[p.first].clone(), labels[p.second].clone(), p.p_value))
                .collect();
            between_groups.push(BetweenGroups {
                measure: m,
                groups: labels,
                test,
                significant_pairs,
            });
        }
    }

    let (ratings, ratios): (Vec<f64>, Vec<f64>) = sessions
        .iter()
        .filter_map(|s| Some((f64::from(s.post_rating?), s.unfairness_ratio?)))
        .unzip();
    let rating_correlation = pearson_r(&ratings, &ratios).ok();

    let group_di = deltas
        .iter()
        .flat_map(|(d, reports)| {
            reports.iter().map(move |(level, r)| GroupDisparateImpact {
                dimension: *d,
                level: *level,
                disparate_impact: r.disparate_impact,
            })
        })
        .collect();

    StudyReport {
        sessions: sessions.len(),
        significance: SIGNIFICANCE,
        tables,
        between_groups,
        rating_correlation,
        original_di: original.map(|r| r.disparate_impact),
        group_di,
    }
}

impl StudyReport {
    /// Contrasts `(dimension, measure)` whose Low/High test is significant.
    pub fn significant_contrasts(&self) -> Vec<(Dimension, Measure, f64)> {
        self.tables
            .iter()
            .flat_map(|t| {
                t.measures.iter().filter_map(move |m| {
                    let p = m.test.as_ref()?.p_value;
                    (p < self.significance).then_some((t.dimension, m.measure, p))
                })
            })
            .collect()
    }
}

fn cell(test: &Option<TestResult>) -> (String, String) {
    match test {
        Some(t) => (format!("{:.1}", t.statistic), format!("{:.3}", t.p_value)),
        None => ("-".into(), "-".into()),
    }
}

impl fmt::Display for StudyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = String::new();
        writeln!(out, "sessions: {}", self.sessions)?;
        for m in Measure::ALL {
            writeln!(out)?;
            writeln!(out, "{}", m.label())?;
            writeln!(
                out,
                "{:<6} {:>5} {:>9} {:>9} {:>10} {:>7}",
                "group", "N", "M", "SD", "U", "p"
            )?;
            for t in &self.tables {
                let Some(c) = t.measures.iter().find(|c| c.measure == m) else {
                    continue;
                };
                let (u, p) = cell(&c.test);
                let flag = if c.test.as_ref().is_some_and(|t| t.p_value < self.significance) {
                    " *"
                } else {
                    ""
                };
                for (level, d, u, p) in [
                    (Level::Low, c.low, u.as_str(), p.as_str()),
                    (Level::High, c.high, "", ""),
                ] {
                    writeln!(
                        out,
                        "{:<6} {:>5} {:>9.3} {:>9.3} {:>10} {:>7}{}",
                        format!("{}-{}", t.dimension.code(), level.suffix()),
                        d.n,
                        d.mean,
                        d.sd,
                        u,
                        p,
                        if level == Level::Low { flag } else { "" }
                    )?;
                }
            }
        }
        for b in &self.between_groups {
            writeln!(out)?;
            writeln!(
                out,
                "{} between groups: H = {:.2}, p = {:.3}",
                b.measure.label(),
                b.test.statistic,
                b.test.p_value
            )?;
            for (a, c, p) in &b.significant_pairs {
                writeln!(out, "  {a} vs {c}: p = {p:.3}")?;
            }
        }
        if let Some(r) = &self.rating_correlation {
            writeln!(out)?;
            writeln!(
                out,
                "post rating vs unfairness ratio: r = {:.3}, p = {:.3}",
                r.statistic, r.p_value
            )?;
        }
        if !self.group_di.is_empty() || self.original_di.is_some() {
            writeln!(out)?;
            writeln!(out, "disparate impact by group")?;
            if let Some(di) = self.original_di {
                writeln!(out, "{:<6} {:>7.3}", "model", di)?;
            }
            for g in &self.group_di {
                writeln!(
                    out,
                    "{:<6} {:>7.3}",
                    format!("{}-{}", g.dimension.code(), g.level.suffix()),
                    g.disparate_impact
                )?;
            }
        }
        f.write_str(&out)
    }
}
