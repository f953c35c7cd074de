//! Synthetic loan applications with a planted penalty on foreign applicants.
//!
//! Every applicant profile gets a latent creditworthiness; observable
//! attributes are noisy functions of it and an unbiased score combines it
//! with affordability and logistic noise. Nationality is then assigned by
//! blocked randomisation over that score, so both groups cover the same
//! applicants, and `bias_strength` is subtracted from the score of foreign
//! applicants before thresholding it into the label. With a zero bias the
//! label and every other attribute are independent of nationality.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, StandardNormal};

use super::{Application, AttributeSpec, Dataset, DatasetError, Decision, Schema};

/// Score penalty applied to foreign applicants by default. Calibrated so a
/// model trained on a 70% split of 1000 applications has nationality
/// disparate impact of about 0.72 (sd 0.035 across seeds) over the
/// generated applications.
pub const DEFAULT_BIAS_STRENGTH: f64 = 0.63;

/// Share of foreign applicants; the count is fixed at `round(n * share)`.
const FOREIGN_SHARE: f64 = 0.4;
/// Logistic noise scale on the label score.
const LABEL_NOISE: f64 = 0.15;
/// Profiles are sorted by score and split into blocks of this size for
/// nationality assignment.
const BLOCK: usize = 5;
const LABEL_THRESHOLD: f64 = -0.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    pub n: usize,
    pub seed: u64,
    pub bias_strength: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            seed: 1,
            bias_strength: DEFAULT_BIAS_STRENGTH,
        }
    }
}

const APPLICANT: &str = "applicant-provided (application form)";
const BANK: &str = "bank records";
const BUREAU: &str = "third-party (credit reference agency)";
const DERIVED: &str = "derived by the bank from the requested loan";

/// The 30 raw attributes. `postcode_region`, `previous_default_amount`,
/// `secondary_income` and `guarantor_income` are more than 10% missing and
/// fall out during cleaning, leaving 26.
pub fn synthetic_schema() -> Schema {
    let attributes = vec![
        AttributeSpec::binary("nationality", "citizen", "foreign", APPLICANT).sensitive(),
        AttributeSpec::binary("gender", "female", "male", APPLICANT).sensitive(),
        AttributeSpec::continuous("age", APPLICANT).sensitive(),
        AttributeSpec::categorical(
            "marital_status",
            &["single", "married", "divorced", "widowed"],
            APPLICANT,
        )
        .sensitive(),
        AttributeSpec::continuous("number_of_dependents", APPLICANT),
        AttributeSpec::categorical("residence_status", &["owner", "tenant", "with_family"], APPLICANT),
        AttributeSpec::categorical(
            "employment_status",
            &["employed", "self_employed", "unemployed", "retired"],
            APPLICANT,
        ),
        AttributeSpec::continuous("years_at_current_job", APPLICANT),
        AttributeSpec::continuous("monthly_income", APPLICANT),
        AttributeSpec::continuous("number_of_earners", APPLICANT),
        AttributeSpec::categorical(
            "income_contributor",
            &["applicant_only", "shared", "partner_main"],
            APPLICANT,
        ),
        AttributeSpec::continuous("household_expenses", APPLICANT),
        AttributeSpec::continuous("maximum_monthly_payment", APPLICANT),
        AttributeSpec::continuous("loan_amount", APPLICANT),
        AttributeSpec::continuous("loan_duration", APPLICANT),
        AttributeSpec::categorical(
            "purpose_of_loan",
            &[
                "car",
                "home_improvement",
                "debt_consolidation",
                "education",
                "business",
                "other",
            ],
            APPLICANT,
        ),
        AttributeSpec::categorical("type_of_loan", &["personal", "secured", "revolving"], APPLICANT),
        AttributeSpec::continuous("annual_interest", DERIVED),
        AttributeSpec::continuous("monthly_payments", DERIVED),
        AttributeSpec::binary("insurance", "no", "yes", APPLICANT),
        AttributeSpec::binary("has_joint_mortgage", "no", "yes", BUREAU),
        AttributeSpec::continuous("existing_loans_count", BUREAU),
        AttributeSpec::continuous("credit_score", BANK),
        AttributeSpec::categorical("credit_risk_level", &["low", "medium", "high", "very_high"], BANK),
        AttributeSpec::continuous("years_of_business_with_bank", BANK),
        AttributeSpec::binary("money_laundering_check", "pass", "review", BANK),
        AttributeSpec::categorical(
            "postcode_region",
            &["north", "south", "east", "west", "central"],
            APPLICANT,
        ),
        AttributeSpec::continuous("previous_default_amount", BUREAU),
        AttributeSpec::continuous("secondary_income", APPLICANT),
        AttributeSpec::continuous("guarantor_income", APPLICANT),
    ];
    Schema::new("id", "decision", attributes).expect("synthetic schema is valid")
}

/// Generates `n` applications. A pure function of `(n, seed, bias_strength)`.
pub fn generate_synthetic(n: usize, seed: u64, bias_strength: f64) -> Result<Dataset, DatasetError> {
    if n < 100 {
        return Err(DatasetError::InvalidParameter(format!(
            "need at least 100 applications, got {n}"
        )));
    }
    if !bias_strength.is_finite() {
        return Err(DatasetError::InvalidParameter("bias_strength must be finite".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let profiles: Vec<(BTreeMap<String, f64>, f64)> = (0..n).map(|_| Draw { rng: &mut rng }.profile()).collect();

    // Blocked assignment: walk the profiles in order of unbiased score and
    // make a fixed share of each block of five foreign, chosen at random.
    // Both groups then cover the same range of applicants and the planted
    // penalty is the only systematic difference between them.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| profiles[a].1.total_cmp(&profiles[b].1).then(a.cmp(&b)));
    let n_foreign = (n as f64 * FOREIGN_SHARE).round() as usize;
    let quota = |k: usize| (k * n_foreign + n / 2) / n;
    let mut foreign = vec![false; n];
    for (block, chunk) in order.chunks(BLOCK).enumerate() {
        let start = block * BLOCK;
        let take = quota(start + chunk.len()) - quota(start);
        let mut members = chunk.to_vec();
        members.shuffle(&mut rng);
        for &i in &members[..take] {
            foreign[i] = true;
        }
    }

    let width = n.to_string().len().max(4);
    let applications = profiles
        .into_iter()
        .zip(foreign)
        .enumerate()
        .map(|(i, ((mut values, score), is_foreign))| {
            values.insert("nationality".to_string(), f64::from(u8::from(is_foreign)));
            let biased = score - if is_foreign { bias_strength } else { 0.0 };
            let label = if biased > LABEL_THRESHOLD {
                Decision::Accepted
            } else {
                Decision::Rejected
            };
            Application {
                id: format!("A{:0width$}", i + 1),
                values,
                label: Some(label),
            }
        })
        .collect();
    Dataset::new(synthetic_schema(), applications)
}

struct Draw<'a> {
    rng: &'a mut ChaCha8Rng,
}

impl Draw<'_> {
    fn normal(&mut self) -> f64 {
        StandardNormal.sample(self.rng)
    }

    fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.rng.random_range(lo..hi)
    }

    fn chance(&mut self, p: f64) -> bool {
        self.rng.random_bool(p.clamp(0.0, 1.0))
    }

    fn pick(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let mut u = self.uniform(0.0, total);
        for (i, w) in weights.iter().enumerate() {
            if u < *w {
                return i;
            }
            u -= w;
        }
        weights.len() - 1
    }

    fn logistic(&mut self) -> f64 {
        let u: f64 = self.uniform(1e-12, 1.0 - 1e-12);
        (u / (1.0 - u)).ln()
    }

    /// Attribute values other than nationality, and the unbiased label score.
    fn profile(&mut self) -> (BTreeMap<String, f64>, f64) {
        let z = self.normal();
        let mut v: BTreeMap<String, f64> = BTreeMap::new();
        let mut set = |name: &str, value: f64| {
            v.insert(name.to_string(), value);
        };

        set("gender", if self.chance(0.55) { 1.0 } else { 0.0 });
        let age = (42.0 + 12.0 * self.normal()).clamp(19.0, 80.0).round();
        set("age", age);
        let marital = self.pick(&[0.35, 0.45, 0.15, 0.05]);
        set("marital_status", marital as f64);
        let dependents = self.pick(&[0.4, 0.25, 0.2, 0.1, 0.05]) as f64;
        let residence = self.pick(&[0.45 + 0.1 * z.clamp(-1.0, 1.0), 0.4, 0.15]);
        set("residence_status", residence as f64);
        let employment = if age >= 66.0 {
            3
        } else {
            let unemployed = (0.07 - 0.04 * z).clamp(0.01, 0.2);
            self.pick(&[0.78 - unemployed, 0.15, unemployed, 0.0])
        };
        set("employment_status", employment as f64);
        let job_years = ((age - 18.0).min(8.0 + 6.0 * self.normal().abs())).max(0.0).round();

        let earners = 1.0 + f64::from(self.chance(0.45)) + f64::from(self.chance(0.08));
        set("number_of_earners", earners);
        let contributor = if earners == 1.0 {
            0
        } else {
            1 + usize::from(self.chance(0.3))
        };
        set("income_contributor", contributor as f64);
        let base_income = LogNormal::new((2600.0f64).ln() + 0.25 * z, 0.35)
            .unwrap()
            .sample(self.rng);
        let income = (base_income * (1.0 + 0.4 * (earners - 1.0)) / 10.0).round() * 10.0;
        set("monthly_income", income);
        let expenses = (income * self.uniform(0.3, 0.6) / 10.0).round() * 10.0;
        let max_payment = (income * self.uniform(0.12, 0.4) / 10.0).round() * 10.0;
        set("maximum_monthly_payment", max_payment);

        let amount = (LogNormal::new((14000.0f64).ln(), 0.55).unwrap().sample(self.rng) / 100.0).round() * 100.0;
        set("loan_amount", amount);
        let duration = [12.0, 24.0, 36.0, 48.0, 60.0, 72.0, 84.0][self.pick(&[1.0; 7])];
        set("loan_duration", duration);
        let purpose = self.pick(&[0.25, 0.2, 0.2, 0.1, 0.1, 0.15]);
        set("purpose_of_loan", purpose as f64);
        let loan_type = self.pick(&[0.55, 0.3, 0.15]);
        set("type_of_loan", loan_type as f64);
        let interest = ((7.0 - 1.6 * z + 1.2 * self.normal()).clamp(1.5, 19.9) * 10.0).round() / 10.0;
        set("annual_interest", interest);
        let monthly_rate = interest / 1200.0;
        let payment = amount * monthly_rate / (1.0 - (1.0 + monthly_rate).powf(-duration));
        let payment = (payment * 100.0).round() / 100.0;
        set("monthly_payments", payment);
        set("insurance", if self.chance(0.5) { 1.0 } else { 0.0 });
        set(
            "has_joint_mortgage",
            if self.chance(0.15 + 0.15 * (earners - 1.0)) {
                1.0
            } else {
                0.0
            },
        );
        let existing = ((1.2 - 0.6 * z + 0.8 * self.normal()).round()).clamp(0.0, 5.0);
        set("existing_loans_count", existing);
        let credit_score = (650.0 + 85.0 * z + 45.0 * self.normal()).clamp(300.0, 999.0).round();
        set("credit_score", credit_score);
        let risk_score = -z + 0.6 * self.normal();
        let risk = match risk_score {
            s if s < -0.6 => 0,
            s if s < 0.3 => 1,
            s if s < 1.1 => 2,
            _ => 3,
        };
        set("credit_risk_level", risk as f64);
        let bank_years = (5.0 + 2.5 * z + 4.0 * self.normal())
            .clamp(0.0, (age - 18.0).max(0.0))
            .round();
        set("years_of_business_with_bank", bank_years);
        set("money_laundering_check", if self.chance(0.03) { 1.0 } else { 0.0 });

        // Columns with light gaps are imputed during cleaning; the last four
        // are too sparse and get pruned.
        if !self.chance(0.04) {
            set("years_at_current_job", job_years);
        }
        if !self.chance(0.03) {
            set("household_expenses", expenses);
        }
        if !self.chance(0.02) {
            set("number_of_dependents", dependents);
        }
        if !self.chance(0.22) {
            let region = self.pick(&[1.0; 5]);
            set("postcode_region", region as f64);
        }
        if self.chance(0.3) {
            let amount = Normal::<f64>::new(2500.0, 1500.0)
                .unwrap()
                .sample(self.rng)
                .max(0.0)
                .round();
            set("previous_default_amount", amount);
        }
        if self.chance(0.55) {
            let secondary = (income * self.uniform(0.05, 0.5)).round();
            set("secondary_income", secondary);
        }
        if self.chance(0.2) {
            let guarantor = (base_income * self.uniform(0.5, 2.0)).round();
            set("guarantor_income", guarantor);
        }

        let affordability = ((max_payment - payment) / income).clamp(-0.5, 0.5);
        let score =
            1.25 * z + 3.0 * affordability + 0.25 * v["insurance"] - 0.8 * f64::from(employment == 2) - 0.15 * existing
                + LABEL_NOISE * self.logistic();
        (v, score)
    }
}
