//! Scripted stand-ins for study participants: weight-suggestion cohorts for
//! fairness-delta experiments and judgment cohorts with planted cultural
//! effects for the statistics pipeline.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::culture::{Dimension, Level, ScoreMatrix};
use crate::dataset::{Application, Decision};
use crate::fairness::{GroupSpec, Membership};
use crate::feedback::{slider_limit, EventRecord, FairnessJudgment, JudgmentVerdict, WeightSuggestion};
use crate::model::ScoringModel;

#[derive(Debug, Error)]
pub enum SimulateError {
    #[error("invalid strategy: {0}")]
    Invalid(String),
    #[error("{0} is not a model attribute")]
    UnknownAttribute(String),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Fairness(#[from] crate::fairness::FairnessError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// `w * (1 - magnitude)`.
    TowardZero,
    /// `w * (1 + magnitude)`, clipped to the slider range.
    Amplify,
}

/// Which applications a simulated user edits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSelector {
    RejectedProtected,
    AcceptedProtected,
    Protected,
    All,
}

/// Declarative description of a scripted cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortStrategy {
    pub attribute: String,
    pub direction: Direction,
    pub magnitude: f64,
    /// Probability that a user edits any one targeted application.
    pub fraction: f64,
    pub cohort_size: usize,
    /// Defaults by direction: corrective users edit rejected protected
    /// applications, adversarial users accepted ones.
    #[serde(default)]
    pub target: Option<TargetSelector>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_prefix")]
    pub session_prefix: String,
}

fn default_prefix() -> String {
    "sim".to_string()
}

impl CohortStrategy {
    pub fn corrective(attribute: &str, cohort_size: usize, seed: u64) -> Self {
        Self {
            attribute: attribute.to_string(),
            direction: Direction::TowardZero,
            magnitude: 1.0,
            fraction: 0.1,
            cohort_size,
            target: None,
            seed,
            session_prefix: default_prefix(),
        }
    }

    pub fn adversarial(attribute: &str, cohort_size: usize, seed: u64) -> Self {
        Self {
            direction: Direction::Amplify,
            ..Self::corrective(attribute, cohort_size, seed)
        }
    }

    pub fn target(&self) -> TargetSelector {
        self.target.unwrap_or(match self.direction {
            Direction::TowardZero => TargetSelector::RejectedProtected,
            Direction::Amplify => TargetSelector::AcceptedProtected,
        })
    }

    pub fn validate(&self) -> Result<(), SimulateError> {
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(SimulateError::Invalid(format!(
                "fraction {} outside (0, 1]",
                self.fraction
            )));
        }
        let max = match self.direction {
            Direction::TowardZero => 1.0,
            Direction::Amplify => f64::INFINITY,
        };
        if !(self.magnitude >= 0.0 && self.magnitude <= max) {
            return Err(SimulateError::Invalid(format!(
                "magnitude {} out of range",
                self.magnitude
            )));
        }
        Ok(())
    }

    fn suggested(&self, w: f64, limit: f64) -> f64 {
        match self.direction {
            Direction::TowardZero => w * (1.0 - self.magnitude),
            Direction::Amplify => (w * (1.0 + self.magnitude)).clamp(-limit, limit),
        }
    }

    pub fn session_id(&self, user: usize) -> String {
        format!("{}-{user:04}", self.session_prefix)
    }
}

fn targeted(
    sel: TargetSelector,
    m: &ScoringModel,
    apps: &[Application],
    g: &GroupSpec,
) -> Result<Vec<String>, SimulateError> {
    let mut out = Vec::new();
    for a in apps {
        let protected = g.membership(a)? == Membership::Protected;
        let accepted = m.predict(a)?.decision == Decision::Accepted;
        let hit = match sel {
            TargetSelector::RejectedProtected => protected && !accepted,
            TargetSelector::AcceptedProtected => protected && accepted,
            TargetSelector::Protected => protected,
            TargetSelector::All => true,
        };
        if hit {
            out.push(a.id.clone());
        }
    }
    Ok(out)
}

/// Suggestions of a scripted cohort. User `i` draws from its own stream, so
/// the first `k` users behave identically whatever the cohort size.
pub fn simulate_cohort(
    strategy: &CohortStrategy,
    m: &ScoringModel,
    apps: &[Application],
    g: &GroupSpec,
) -> Result<Vec<WeightSuggestion>, SimulateError> {
    strategy.validate()?;
    let w = m
        .weight(&strategy.attribute)
        .ok_or_else(|| SimulateError::UnknownAttribute(strategy.attribute.clone()))?;
    let value = strategy.suggested(w, slider_limit(m));
    let targets = targeted(strategy.target(), m, apps, g)?;
    let mut out = Vec::new();
    for user in 0..strategy.cohort_size {
        let mut rng = ChaCha8Rng::seed_from_u64(strategy.seed);
        rng.set_stream(user as u64);
        let session = strategy.session_id(user);
        let mut t = 0;
        for id in &targets {
            if rng.random_bool(strategy.fraction) {
                out.push(WeightSuggestion {
                    session_id: session.clone(),
                    application_id: id.clone(),
                    weights: [(strategy.attribute.clone(), value)].into_iter().collect(),
                    timestamp: user as u64 * 1_000_000 + t,
                });
                t += 1;
            }
        }
    }
    Ok(out)
}

/// Judgment cohort with an optional planted High/Low difference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyCohort {
    pub sessions: usize,
    pub seed: u64,
    /// Judgments per session are drawn uniformly from this range.
    pub judgments: (usize, usize),
    pub base_unfair_rate: f64,
    /// Extra probability of an unfair verdict for sessions in the High group
    /// of the dimension.
    pub effect: Option<(Dimension, f64)>,
}

impl Default for StudyCohort {
    fn default() -> Self {
        Self {
            sessions: 200,
            seed: 0,
            judgments: (10, 40),
            base_unfair_rate: 0.15,
            effect: None,
        }
    }
}

/// Event log for a synthetic study: session records with countries drawn
/// from the matrix, judgments, and post ratings that fall with the
/// session's unfairness ratio.
pub fn simulate_study(cohort: &StudyCohort, matrix: &ScoreMatrix, application_ids: &[String]) -> Vec<EventRecord> {
    let countries: Vec<&str> = matrix.countries().filter(|c| matrix.resolve(c).is_ok()).collect();
    let means = matrix.dimension_means();
    let mut rng = ChaCha8Rng::seed_from_u64(cohort.seed);
    let mut out = Vec::new();
    let (lo, hi) = cohort.judgments;
    for i in 0..cohort.sessions {
        let session = format!("study-{i:04}");
        let country = countries[rng.random_range(0..countries.len())];
        let mut t = i as u64 * 1_000_000;
        out.push(EventRecord::session(
            &session,
            country,
            Some(rng.random_range(1..=7)),
            t,
        ));
        let mut rate = cohort.base_unfair_rate;
        if let Some((d, delta)) = cohort.effect {
            let score = matrix.resolve(country).expect("country resolves").get(d);
            if Level::classify(score, means[&d]) == Level::High {
                rate += delta;
            }
        }
        let count = rng.random_range(lo..=hi.max(lo)).min(application_ids.len());
        let mut ids: Vec<&String> = application_ids.iter().collect();
        let mut unfair = 0;
        for k in 0..count {
            // partial Fisher-Yates: distinct applications per session
            let pick = rng.random_range(k..ids.len());
            ids.swap(k, pick);
            let is_unfair = rng.random_bool(rate.clamp(0.0, 1.0));
            unfair += usize::from(is_unfair);
            t += 1;
            out.push(EventRecord::judgment(&FairnessJudgment {
                session_id: session.clone(),
                application_id: ids[k].clone(),
                verdict: if is_unfair {
                    JudgmentVerdict::Unfair
                } else {
                    JudgmentVerdict::Fair
                },
                needs_human: rng.random_bool(0.05),
                timestamp: t,
            }));
        }
        let ratio = if count > 0 { unfair as f64 / count as f64 } else { 0.0 };
        let noise: f64 = rng.random_range(-1.0..1.0);
        let rating = (6.0 - 6.0 * ratio + noise).round().clamp(1.0, 7.0) as u8;
        out.push(EventRecord::post_rating(&session, rating, t + 1));
        let mut tlx = [0u8; 6];
        for v in &mut tlx {
            *v = rng.random_range(0..=100);
        }
        out.push(EventRecord::taskload(&session, tlx, t + 2));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::AttributeSpec;
    use crate::model::FeatureEncoder;

    fn setup() -> (ScoringModel, Vec<Application>, GroupSpec) {
        let nat = AttributeSpec::binary("nationality", "citizen", "foreign", "");
        let enc = FeatureEncoder::identity(vec![AttributeSpec::continuous("score", ""), nat.clone()]);
        let m = ScoringModel::from_parts(enc, vec![2.0, -1.0], -0.5).unwrap();
        let apps = (0..40)
            .map(|i| {
                Application::new(format!("A{i:02}"))
                    .with("score", (i % 10) as f64 / 10.0)
                    .with("nationality", (i % 2) as f64)
            })
            .collect();
        (m, apps, GroupSpec::new(&nat, "foreign").unwrap())
    }

    #[test]
    fn cohorts_are_nested() {
        let (m, apps, g) = setup();
        let small = simulate_cohort(&CohortStrategy::corrective("nationality", 3, 9), &m, &apps, &g).unwrap();
        let large = simulate_cohort(&CohortStrategy::corrective("nationality", 6, 9), &m, &apps, &g).unwrap();
        assert_eq!(&large[..small.len()], &small[..]);
    }

    #[test]
    fn corrective_suggestions_zero_the_weight_on_rejected_foreign() {
        let (m, apps, g) = setup();
        let mut s = CohortStrategy::corrective("nationality", 4, 1);
        s.fraction = 1.0;
        let out = simulate_cohort(&s, &m, &apps, &g).unwrap();
        assert!(!out.is_empty());
        for sug in &out {
            assert_eq!(sug.weights["nationality"], 0.0);
            let a = apps.iter().find(|a| a.id == sug.application_id).unwrap();
            assert_eq!(a.value("nationality"), Some(1.0));
            assert_eq!(m.predict(a).unwrap().decision, Decision::Rejected);
        }
    }

    #[test]
    fn amplify_is_clipped() {
        let (m, apps, g) = setup();
        let mut s = CohortStrategy::adversarial("nationality", 1, 1);
        s.magnitude = 10.0;
        s.fraction = 1.0;
        let out = simulate_cohort(&s, &m, &apps, &g).unwrap();
        assert!(out.iter().all(|x| x.weights["nationality"] == -slider_limit(&m)));
    }

    #[test]
    fn invalid_strategies() {
        let (m, apps, g) = setup();
        let mut s = CohortStrategy::corrective("nationality", 1, 1);
        s.fraction = 0.0;
        assert!(simulate_cohort(&s, &m, &apps, &g).is_err());
        let s = CohortStrategy::corrective("zodiac", 1, 1);
        assert!(matches!(
            simulate_cohort(&s, &m, &apps, &g),
            Err(SimulateError::UnknownAttribute(_))
        ));
    }

    #[test]
    fn study_is_deterministic() {
        let ids: Vec<String> = (0..50).map(|i| format!("A{i}")).collect();
        let c = StudyCohort {
            sessions: 5,
            ..StudyCohort::default()
        };
        let m = ScoreMatrix::bundled();
        assert_eq!(simulate_study(&c, &m, &ids), simulate_study(&c, &m, &ids));
    }
}
