mod common;

use loanlens_core::dataset::AttributeSpec;
use loanlens_core::feedback::{
    aggregate, fairness_delta, per_participant_models, read_events, slider_limit, write_events, EventKind, EventRecord,
    FeedbackLog,
};
use loanlens_core::model::FeatureEncoder;
use loanlens_core::simulate::{simulate_cohort, CohortStrategy, Direction, TargetSelector};
use loanlens_core::{
    Application, Decision, FairnessJudgment, FeedbackError, JudgmentVerdict, ScoringModel, WeightSuggestion,
};
use proptest::prelude::*;
use serde_json::json;

fn suggestion(session: &str, app: &str, weights: &[(&str, f64)], t: u64) -> WeightSuggestion {
    WeightSuggestion {
        session_id: session.into(),
        application_id: app.into(),
        weights: weights.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        timestamp: t,
    }
}

fn two_attribute_model() -> ScoringModel {
    let enc = FeatureEncoder::identity(vec![
        AttributeSpec::continuous("a", ""),
        AttributeSpec::continuous("b", ""),
    ]);
    ScoringModel::from_parts(enc, vec![0.5, -1.0], 0.1).unwrap()
}

fn apps() -> Vec<Application> {
    (0..4)
        .map(|i| {
            Application::new(format!("A{i}"))
                .with("a", 0.25 * i as f64)
                .with("b", 0.2 + 0.1 * i as f64)
        })
        .collect()
}

#[test]
fn mean_of_symmetric_suggestions_keeps_the_decision() {
    let m = two_attribute_model();
    let apps = apps();
    let s = vec![
        suggestion("u1", "A2", &[("a", 0.3)], 1),
        suggestion("u2", "A2", &[("a", 0.7)], 2),
    ];
    let adj = aggregate(&s, &m, &apps).unwrap();
    let d = &adj.decisions[2];
    assert!((d.weights[0] - 0.5).abs() < 1e-12);
    assert_eq!(d.decision, d.original.decision);
    assert_eq!(d.suggestion_count, 2);
    assert_eq!(adj.overridden_ids(), ["A2"]);
    for (i, d) in adj.decisions.iter().enumerate().filter(|(i, _)| *i != 2) {
        assert_eq!(
            d.confidence.to_bits(),
            m.predict(&apps[i]).unwrap().confidence.to_bits()
        );
    }
}

#[test]
fn adjusted_confidence_uses_mean_weights_and_original_intercept() {
    let m = two_attribute_model();
    let apps = apps();
    let s = vec![
        suggestion("u1", "A3", &[("a", 1.0), ("b", 0.0)], 1),
        suggestion("u2", "A3", &[("b", 0.5)], 2),
        // superseded by the next one from the same user
        suggestion("u3", "A3", &[("a", -1.0)], 3),
        suggestion("u3", "A3", &[("a", 0.0)], 4),
    ];
    let adj = aggregate(&s, &m, &apps).unwrap();
    let d = &adj.decisions[3];
    let (wa, wb) = (0.5, 0.25);
    assert_eq!(d.weights, vec![wa, wb]);
    let u = 0.1 + wa * 0.75 + wb * 0.5;
    assert!((d.confidence - 1.0 / (1.0 + (-u).exp())).abs() < 1e-12);
    assert_eq!(d.suggestion_count, 3);
}

#[test]
fn slider_limit_is_inclusive() {
    let m = two_attribute_model();
    let limit = slider_limit(&m);
    assert_eq!(limit, 2.0);
    let mut log = FeedbackLog::new(["A0"]);
    log.open_session(EventRecord::session("u", "Japan", None, 0));
    assert!(log
        .record_suggestion(suggestion("u", "A0", &[("a", limit)], 1), &m)
        .is_ok());
    assert!(log
        .record_suggestion(suggestion("u", "A0", &[("a", -limit)], 2), &m)
        .is_ok());
    let err = log.record_suggestion(suggestion("u", "A0", &[("a", limit + 1e-9)], 3), &m);
    assert!(matches!(err, Err(FeedbackError::OutOfBounds { .. })));
    assert!(matches!(
        log.record_suggestion(suggestion("u", "A0", &[("zzz", 0.0)], 4), &m),
        Err(FeedbackError::UnknownAttribute(_))
    ));
    assert_eq!(log.records().len(), 3);
    assert_eq!(log.suggestion("u", "A0").unwrap().weights["a"], -limit);
}

#[test]
fn replayed_log_reproduces_state_and_bytes() {
    let m = two_attribute_model();
    let ids: Vec<String> = apps().iter().map(|a| a.id.clone()).collect();
    let mut log = FeedbackLog::new(ids.clone());
    log.open_session(EventRecord::session("u1", "UK", Some(4), 0));
    log.open_session(EventRecord::session("u2", "Brazil", None, 1));
    for (t, i) in (2..).zip(0..28) {
        let session = if i % 3 == 0 { "u2" } else { "u1" };
        let app = &ids[i % 4];
        match i % 4 {
            0 => {
                log.record_judgment(FairnessJudgment {
                    session_id: session.into(),
                    application_id: app.clone(),
                    verdict: if i % 8 == 0 {
                        JudgmentVerdict::Unfair
                    } else {
                        JudgmentVerdict::Fair
                    },
                    needs_human: i % 5 == 0,
                    timestamp: t,
                })
                .unwrap();
            }
            1 => {
                log.record_suggestion(suggestion(session, app, &[("a", 0.01 * i as f64)], t), &m)
                    .unwrap();
            }
            2 => {
                log.record_interaction(EventRecord::new(
                    EventKind::Sort,
                    session,
                    None,
                    json!({"by": "confidence"}),
                    t,
                ))
                .unwrap();
            }
            _ => {
                log.record_interaction(EventRecord::new(
                    EventKind::SelectApplication,
                    session,
                    Some(app),
                    json!({}),
                    t,
                ))
                .unwrap();
            }
        }
    }
    assert_eq!(log.records().len(), 30);

    let mut bytes = Vec::new();
    write_events(log.records(), &mut bytes).unwrap();
    let parsed = read_events(bytes.as_slice()).unwrap();
    let again = FeedbackLog::replay(ids.clone(), &parsed, &m).unwrap();
    assert_eq!(again, log);
    let mut bytes2 = Vec::new();
    write_events(again.records(), &mut bytes2).unwrap();
    assert_eq!(bytes, bytes2);
}

#[test]
fn replay_reports_the_offending_record() {
    let m = two_attribute_model();
    let records = vec![
        EventRecord::session("u", "UK", None, 0),
        EventRecord::suggestion(&suggestion("u", "A0", &[("a", 0.1)], 1)),
        EventRecord::suggestion(&suggestion("ghost", "A0", &[("a", 0.1)], 2)),
    ];
    match FeedbackLog::replay(["A0"], &records, &m) {
        Err(FeedbackError::Log { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
}

proptest! {
    #[test]
    fn aggregation_ignores_arrival_order(values in prop::collection::vec(-2.0f64..2.0, 1..12), seed in any::<u64>()) {
        let m = two_attribute_model();
        let apps = apps();
        let s: Vec<WeightSuggestion> = values
            .iter()
            .enumerate()
            .map(|(i, v)| suggestion(&format!("u{i}"), &format!("A{}", i % 4), &[("a", *v), ("b", -v / 2.0)], i as u64))
            .collect();
        let mut shuffled = s.clone();
        let mut state = seed;
        for i in (1..shuffled.len()).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (state >> 33) as usize % (i + 1));
        }
        prop_assert_eq!(aggregate(&s, &m, &apps).unwrap(), aggregate(&shuffled, &m, &apps).unwrap());
    }
}

fn corrective_di(p: &common::Pipeline, size: usize) -> (f64, f64) {
    let s = simulate_cohort(
        &CohortStrategy::corrective("nationality", size, 7),
        &p.model,
        &p.data.applications,
        &p.group,
    )
    .unwrap();
    let adj = aggregate(&s, &p.model, &p.data.applications).unwrap();
    let delta = fairness_delta(&adj, &p.data.applications, &p.group).unwrap();
    (delta.before.disparate_impact, delta.after.disparate_impact)
}

#[test]
fn corrective_cohort_raises_disparate_impact_monotonically() {
    let p = common::default_pipeline(1);
    let sizes = [0, 1, 2, 5, 10, 20, 40];
    let curve: Vec<f64> = sizes.iter().map(|&k| corrective_di(&p, k).1).collect();
    let before = corrective_di(&p, 0).0;
    assert_eq!(curve[0], before);
    assert!(before < 0.8);
    for w in curve.windows(2) {
        assert!(w[1] >= w[0], "{curve:?}");
    }
    assert!(*curve.last().unwrap() >= 0.8, "{curve:?}");
    assert!(curve[1] > before);
}

#[test]
fn adversarial_cohort_lowers_disparate_impact() {
    let p = common::default_pipeline(1);
    let s = simulate_cohort(
        &CohortStrategy::adversarial("nationality", 20, 7),
        &p.model,
        &p.data.applications,
        &p.group,
    )
    .unwrap();
    assert!(s
        .iter()
        .all(|x| x.weights["nationality"].abs() <= slider_limit(&p.model)));
    let adj = aggregate(&s, &p.model, &p.data.applications).unwrap();
    let delta = fairness_delta(&adj, &p.data.applications, &p.group).unwrap();
    assert!(
        delta.after.disparate_impact < delta.before.disparate_impact,
        "{delta:?}"
    );
    assert!(delta.overridden > 0);
}

#[test]
fn cohorts_are_nested_across_sizes() {
    let p = common::default_pipeline(2);
    let small = simulate_cohort(
        &CohortStrategy::corrective("nationality", 3, 5),
        &p.model,
        &p.data.applications,
        &p.group,
    )
    .unwrap();
    let large = simulate_cohort(
        &CohortStrategy::corrective("nationality", 8, 5),
        &p.model,
        &p.data.applications,
        &p.group,
    )
    .unwrap();
    assert_eq!(&large[..small.len()], &small[..]);
    for s in &small {
        let a = p.data.application(&s.application_id).unwrap();
        assert_eq!(a.value("nationality"), Some(1.0));
        assert_eq!(p.model.predict(a).unwrap().decision, Decision::Rejected);
    }
}

#[test]
fn per_participant_models_separate_improvers_from_worseners() {
    let p = common::default_pipeline(3);
    let w = p.model.weight("nationality").unwrap();
    assert!(
        w < 0.0,
        "planted bias should give a negative nationality weight, got {w}"
    );
    let id = &p.data.applications[0].id;
    let s = vec![
        suggestion("improver", id, &[("nationality", 0.0)], 1),
        suggestion(
            "worsener",
            id,
            &[("nationality", (2.0 * w).max(-slider_limit(&p.model)))],
            2,
        ),
    ];
    let original = {
        let d: Vec<Decision> = p
            .model
            .predict_all(&p.data.applications)
            .unwrap()
            .iter()
            .map(|x| x.decision)
            .collect();
        loanlens_core::fairness::audit_decisions(&p.data.applications, &d, &p.group)
            .unwrap()
            .disparate_impact
    };
    let reports = per_participant_models(&s, &p.model, &p.data.applications, &p.group).unwrap();
    let improver = reports["improver"].disparate_impact;
    let worsener = reports["worsener"].disparate_impact;
    assert!(
        (improver - 1.0).abs() < (original - 1.0).abs(),
        "{improver} vs {original}"
    );
    assert!(worsener < original);
}

#[test]
fn strategy_validation_and_defaults() {
    let mut s = CohortStrategy::corrective("nationality", 5, 1);
    assert_eq!(s.target(), TargetSelector::RejectedProtected);
    s.direction = Direction::Amplify;
    assert_eq!(s.target(), TargetSelector::AcceptedProtected);
    s.fraction = 0.0;
    assert!(s.validate().is_err());
    let p = common::pipeline(200, 1, 0.63);
    let bad = CohortStrategy::corrective("shoe_size", 2, 1);
    assert!(simulate_cohort(&bad, &p.model, &p.data.applications, &p.group).is_err());
}
