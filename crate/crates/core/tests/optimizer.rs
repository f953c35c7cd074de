mod common;

use loanlens_core::dataset::{AttributeSpec, Schema};
use loanlens_core::model::{decide, sigmoid, train, train_with_trace, FeatureEncoder, LogisticObjective, F_FUZZ};
use loanlens_core::{Application, Dataset, Decision, TrainConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Plain-formula loss, written independently of the library objective.
fn oracle_loss(rows: &[Vec<f64>], y: &[f64], params: &[f64], l2: f64) -> f64 {
    let d = params.len() - 1;
    let mut total = 0.0;
    for (x, &t) in rows.iter().zip(y) {
        let mut u = params[d];
        for k in 0..d {
            u += params[k] * x[k];
        }
        let p = 1.0 / (1.0 + (-u).exp());
        total -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
    }
    total + 0.5 * l2 * params[..d].iter().map(|w| w * w).sum::<f64>()
}

fn oracle_gradient(rows: &[Vec<f64>], y: &[f64], params: &[f64], l2: f64) -> Vec<f64> {
    let d = params.len() - 1;
    let mut g = vec![0.0; d + 1];
    for (x, &t) in rows.iter().zip(y) {
        let u = params[d] + (0..d).map(|k| params[k] * x[k]).sum::<f64>();
        let r = 1.0 / (1.0 + (-u).exp()) - t;
        for k in 0..d {
            g[k] += r * x[k];
        }
        g[d] += r;
    }
    for k in 0..d {
        g[k] += l2 * params[k];
    }
    g
}

fn encoded_training_rows(seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let p = common::default_pipeline(seed);
    let enc = FeatureEncoder::fit(&p.train).unwrap();
    let rows = p.train.applications.iter().map(|a| enc.encode(a).unwrap()).collect();
    let y = p
        .train
        .applications
        .iter()
        .map(|a| if a.label == Some(Decision::Accepted) { 1.0 } else { 0.0 })
        .collect();
    (rows, y)
}

#[test]
fn gradient_matches_central_differences() {
    let (rows, y) = encoded_training_rows(4);
    let obj = LogisticObjective::new(&rows, &y, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..5 {
        let params: Vec<f64> = (0..obj.dimension()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (value, grad) = obj.value_and_gradient(&params);
        assert!((value - oracle_loss(&rows, &y, &params, 1.0)).abs() <= 1e-9 * value.abs());
        let h = 1e-5;
        for k in 0..params.len() {
            let mut hi = params.clone();
            let mut lo = params.clone();
            hi[k] += h;
            lo[k] -= h;
            let fd = (oracle_loss(&rows, &y, &hi, 1.0) - oracle_loss(&rows, &y, &lo, 1.0)) / (2.0 * h);
            let rel = (grad[k] - fd).abs() / fd.abs().max(1.0);
            assert!(rel <= 1e-5, "component {k}: analytic {} vs fd {fd}", grad[k]);
        }
    }
}

#[test]
fn trained_weights_are_stationary_under_the_oracle() {
    let p = common::default_pipeline(4);
    let (rows, y) = encoded_training_rows(4);
    let mut params = p.model.weights.clone();
    params.push(p.model.intercept);
    let g = oracle_gradient(&rows, &y, &params, 1.0);
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(norm <= 1e-5, "gradient norm at optimum {norm}");
}

#[test]
fn objective_trace_never_rises() {
    for seed in 1..=3 {
        let p = common::default_pipeline(seed);
        let (_, trace) = train_with_trace(&p.train, &TrainConfig::default()).unwrap();
        assert!(trace.converged);
        assert!(trace.gradient_norm <= 1e-6);
        for w in trace.values.windows(2) {
            assert!(w[1] <= w[0] + F_FUZZ * w[0].abs().max(1.0), "{} -> {}", w[0], w[1]);
        }
    }
}

fn toy_dataset() -> Dataset {
    let schema = Schema::new(
        "id",
        "decision",
        vec![AttributeSpec::continuous("x", ""), AttributeSpec::continuous("z", "")],
    )
    .unwrap();
    let apps = (0..20)
        .map(|i| {
            let x = i as f64;
            let label = if i >= 10 {
                Decision::Accepted
            } else {
                Decision::Rejected
            };
            Application::new(format!("T{i:02}"))
                .with("x", x)
                .with("z", (i * 7 % 5) as f64)
                .labelled(label)
        })
        .collect();
    Dataset::new(schema, apps).unwrap()
}

#[test]
fn separable_toy_is_learned() {
    let d = toy_dataset();
    let m = train(&d, &TrainConfig::default()).unwrap();
    let correct = d
        .applications
        .iter()
        .filter(|a| m.predict(a).unwrap().decision == a.label.unwrap())
        .count();
    assert!(correct as f64 / 20.0 >= 0.95, "{correct}/20");
    assert!(m.weight("x").unwrap() > 0.0);
}

#[test]
fn training_is_deterministic_and_row_order_insensitive() {
    let p = common::default_pipeline(6);
    let again = train(&p.train, &TrainConfig::default()).unwrap();
    assert_eq!(p.model, again);

    let mut shuffled = p.train.clone();
    shuffled.applications.reverse();
    let m2 = train(&shuffled, &TrainConfig::default()).unwrap();
    for a in &p.test.applications {
        let (c1, c2) = (
            p.model.predict(a).unwrap().confidence,
            m2.predict(a).unwrap().confidence,
        );
        assert!((c1 - c2).abs() < 1e-6, "{}: {c1} vs {c2}", a.id);
    }
}

#[test]
fn confidence_is_sigmoid_of_utility() {
    let p = common::default_pipeline(8);
    for a in p.test.applications.iter().take(50) {
        let crit = p.model.criticality(a).unwrap();
        let u = p.model.intercept + crit.entries.iter().map(|e| e.weight * e.value).sum::<f64>();
        let pred = p.model.predict(a).unwrap();
        assert!((pred.confidence - 1.0 / (1.0 + (-u).exp())).abs() < 1e-12);
        assert_eq!(
            pred.decision,
            if pred.confidence > 0.5 {
                Decision::Accepted
            } else {
                Decision::Rejected
            }
        );
    }
}

proptest! {
    #[test]
    fn sigmoid_is_monotone(a in -50.0f64..50.0, b in -50.0f64..50.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(sigmoid(lo) <= sigmoid(hi));
    }

    #[test]
    fn sigmoid_is_strictly_inside_unit_interval(u in -30.0f64..30.0) {
        let s = sigmoid(u);
        prop_assert!(s > 0.0 && s < 1.0);
        prop_assert!((sigmoid(-u) - (1.0 - s)).abs() < 1e-15);
    }

    #[test]
    fn decision_threshold_is_strict(c in 0.0f64..1.0) {
        prop_assert_eq!(decide(c) == Decision::Accepted, c > 0.5);
    }
}
