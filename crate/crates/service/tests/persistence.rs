mod common;

use std::path::Path;
use std::sync::Arc;

use axum::http::StatusCode;
use axum::Router;
use common::{app, call, fixture, json, new_session, open, Fixture};
use loanlens_service::{router, StartupError, LOG_FILE};
use serde_json::json;

/// Every GET a client could issue about the given sessions, concatenated.
async fn snapshot(app: &Router, f: &Fixture, tokens: &[String]) -> Vec<u8> {
    let mut out = Vec::new();
    let touched: Vec<&str> = f.test.applications.iter().take(6).map(|a| a.id.as_str()).collect();
    let mut get = |bytes: (StatusCode, Vec<u8>)| {
        assert_eq!(bytes.0, StatusCode::OK, "{}", String::from_utf8_lossy(&bytes.1));
        out.extend(bytes.1);
        out.push(b'\n');
    };
    get(call(app, "GET", "/reports/fairness", None, None).await);
    get(call(app, "GET", "/applications?limit=300&sort=-confidence", None, None).await);
    for t in tokens {
        get(call(app, "GET", &format!("/sessions/{t}"), None, None).await);
        get(call(app, "GET", "/overview", Some(t), None).await);
        get(call(app, "GET", "/applications?limit=300&sort=judgment", Some(t), None).await);
        for id in &touched {
            get(call(app, "GET", &format!("/applications/{id}"), Some(t), None).await);
        }
    }
    out
}

struct Recording {
    tokens: Vec<String>,
    /// Snapshot and session count after each logged event.
    after: Vec<(usize, Vec<u8>)>,
}

/// Twenty-event scripted study across two participants.
async fn record(f: &Fixture, dir: &Path) -> Recording {
    let app = app(f, Some(dir));
    let ids: Vec<String> = f.test.applications.iter().take(6).map(|a| a.id.clone()).collect();
    let mut tokens = Vec::new();
    let mut after = Vec::new();
    macro_rules! step {
        ($e:expr) => {{
            let (s, v) = $e;
            assert!(s.is_success(), "{v}");
            after.push((tokens.len(), snapshot(&app, f, &tokens).await));
        }};
    }
    tokens.push(new_session(&app, "UK").await);
    after.push((1, snapshot(&app, f, &tokens).await));
    let a = tokens[0].clone();
    step!(
        json(
            &app,
            "POST",
            &format!("/sessions/{a}/events"),
            None,
            Some(json!({"type": "sort", "payload": {"by": "-confidence"}}))
        )
        .await
    );
    step!(
        json(
            &app,
            "POST",
            &format!("/sessions/{a}/events"),
            None,
            Some(json!({"type": "filter", "payload": {"filter": "nationality=foreign"}}))
        )
        .await
    );
    step!(
        json(
            &app,
            "POST",
            &format!("/sessions/{a}/events"),
            None,
            Some(json!({"type": "select_application", "application_id": ids[0]}))
        )
        .await
    );
    step!(
        json(
            &app,
            "POST",
            &format!("/applications/{}/judgment", ids[0]),
            Some(&a),
            Some(json!({"verdict": "unfair", "needs_human": true}))
        )
        .await
    );
    step!(
        json(
            &app,
            "POST",
            &format!("/applications/{}/weights", ids[0]),
            Some(&a),
            Some(json!({"weights": {"nationality": 0.1, "age": -0.05}}))
        )
        .await
    );
    step!(
        json(
            &app,
            "POST",
            &format!("/applications/{}/judgment", ids[1]),
            Some(&a),
            Some(json!({"verdict": "fair"}))
        )
        .await
    );
    step!(
        json(
            &app,
            "POST",
            &format!("/sessions/{a}/events"),
            None,
            Some(json!({"type": "compare", "application_id": ids[1], "payload": {"other": ids[2]}}))
        )
        .await
    );
    step!(
        json(
            &app,
            "POST",
            &format!("/applications/{}/judgment", ids[2]),
            Some(&a),
            Some(json!({"verdict": "unfair"}))
        )
        .await
    );
    step!(
        json(
            &app,
            "POST",
            &format!("/applications/{}/judgment", ids[0]),
            Some(&a),
            Some(json!({"verdict": "fair"}))
        )
        .await
    );

    tokens.push(new_session(&app, "Japan").await);
    after.push((2, snapshot(&app, f, &tokens).await));
    let b = tokens[1].clone();
    step!(
        json(
            &app,
            "POST",
            &format!("/applications/{}/judgment", ids[3]),
            Some(&b),
            Some(json!({"verdict": "unfair"}))
        )
        .await
    );
    step!(
        json(
            &app,
            "POST",
            &format!("/applications/{}/weights", ids[3]),
            Some(&b),
            Some(json!({"weights": {"credit_score": 0.2}}))
        )
        .await
    );
    step!(
        json(
            &app,
            "POST",
            &format!("/applications/{}/weights", ids[0]),
            Some(&b),
            Some(json!({"weights": {"nationality": 0.3}}))
        )
        .await
    );
    step!(
        json(
            &app,
            "POST",
            &format!("/applications/{}/weights", ids[3]),
            Some(&b),
            Some(json!({"weights": {"credit_score": 0.25}}))
        )
        .await
    );
    step!(
        json(
            &app,
            "POST",
            &format!("/applications/{}/judgment", ids[4]),
            Some(&b),
            Some(json!({"verdict": "fair", "needs_human": true}))
        )
        .await
    );
    step!(
        json(
            &app,
            "POST",
            &format!("/sessions/{b}/events"),
            None,
            Some(json!({"type": "sort", "payload": {"by": "id"}}))
        )
        .await
    );
    step!(
        json(
            &app,
            "POST",
            &format!("/applications/{}/judgment", ids[5]),
            Some(&b),
            Some(json!({"verdict": "unfair"}))
        )
        .await
    );
    step!(
        json(
            &app,
            "POST",
            &format!("/sessions/{a}/post_rating"),
            None,
            Some(json!({"rating": 5}))
        )
        .await
    );
    step!(
        json(
            &app,
            "POST",
            &format!("/sessions/{b}/taskload"),
            None,
            Some(json!({"scores": [10, 20, 30, 40, 50, 60]}))
        )
        .await
    );
    Recording { tokens, after }
}

fn log_lines(dir: &Path) -> Vec<String> {
    std::fs::read_to_string(dir.join(LOG_FILE))
        .unwrap()
        .lines()
        .map(str::to_string)
        .collect()
}

#[tokio::test]
async fn restart_reproduces_every_get_byte_for_byte() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let rec = record(&f, dir.path()).await;
    assert_eq!(rec.after.len(), 20);
    assert_eq!(log_lines(dir.path()).len(), 20);
    let before_bytes = std::fs::read(dir.path().join(LOG_FILE)).unwrap();

    let restarted = app(&f, Some(dir.path()));
    let got = snapshot(&restarted, &f, &rec.tokens).await;
    assert_eq!(got, rec.after.last().unwrap().1);
    // replaying again is idempotent and never rewrites the log
    let again = app(&f, Some(dir.path()));
    assert_eq!(snapshot(&again, &f, &rec.tokens).await, got);
    assert_eq!(std::fs::read(dir.path().join(LOG_FILE)).unwrap(), before_bytes);
}

#[tokio::test]
async fn truncated_log_recovers_the_prefix_state() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let rec = record(&f, dir.path()).await;
    let lines = log_lines(dir.path());
    for n in [1, 7, 12, 19] {
        let cut = tempfile::tempdir().unwrap();
        let mut text = lines[..n].join("\n");
        text.push('\n');
        std::fs::write(cut.path().join(LOG_FILE), text).unwrap();
        let app = app(&f, Some(cut.path()));
        let (sessions, expected) = &rec.after[n - 1];
        assert_eq!(
            &snapshot(&app, &f, &rec.tokens[..*sessions]).await,
            expected,
            "prefix of {n} events"
        );
    }
}

#[tokio::test]
async fn writes_after_restart_append_to_the_same_log() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let rec = record(&f, dir.path()).await;
    let app = app(&f, Some(dir.path()));
    let id = &f.test.applications[10].id;
    let (s, _) = json(
        &app,
        "POST",
        &format!("/applications/{id}/judgment"),
        Some(&rec.tokens[0]),
        Some(json!({"verdict": "unfair"})),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    let lines = log_lines(dir.path());
    assert_eq!(lines.len(), 21);
    // timestamps stay monotone within the session even though the clock restarted
    let parsed: Vec<serde_json::Value> = lines.iter().map(|l| serde_json::from_str(l).unwrap()).collect();
    let own: Vec<u64> = parsed
        .iter()
        .filter(|r| r["session_id"] == rec.tokens[0].as_str())
        .map(|r| r["timestamp"].as_u64().unwrap())
        .collect();
    assert!(own.windows(2).all(|w| w[0] <= w[1]), "{own:?}");
}

#[tokio::test]
async fn empty_directory_starts_fresh() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let service = open(&f, Some(dir.path())).unwrap();
    assert!(service.records().is_empty());
    let app = router(Arc::new(service));
    let (_, v) = json(&app, "GET", "/reports/fairness", None, None).await;
    assert_eq!(v["sessions"], 0);
}

#[test]
fn corrupt_line_is_reported_with_its_number() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let good = r#"{"type":"session","session_id":"s1","application_id":null,"payload":{"country":"UK"},"timestamp":1}"#;
    std::fs::write(dir.path().join(LOG_FILE), format!("{good}\n\n{{oops\n")).unwrap();
    match open(&f, Some(dir.path())) {
        Err(StartupError::Log { line, .. }) => assert_eq!(line, 3),
        Err(other) => panic!("unexpected error {other}"),
        Ok(_) => panic!("corrupt log accepted"),
    }

    // well-formed JSON that violates invariants is also rejected by line
    let bad =
        r#"{"type":"judgment","session_id":"s1","application_id":"NOPE","payload":{"verdict":"fair"},"timestamp":2}"#;
    std::fs::write(dir.path().join(LOG_FILE), format!("{good}\n{bad}\n")).unwrap();
    match open(&f, Some(dir.path())) {
        Err(StartupError::Log { line, .. }) => assert_eq!(line, 2),
        Err(other) => panic!("unexpected error {other}"),
        Ok(_) => panic!("invalid event accepted"),
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_sessions_read_their_own_writes() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let app = app(&f, Some(dir.path()));
    let ids: Arc<Vec<String>> = Arc::new(f.test.applications.iter().map(|a| a.id.clone()).collect());
    let mut handles = Vec::new();
    for k in 0..10 {
        let app = app.clone();
        let ids = ids.clone();
        handles.push(tokio::spawn(async move {
            let token = new_session(&app, if k % 2 == 0 { "UK" } else { "Mexico" }).await;
            for j in 0..10 {
                let id = &ids[k * 10 + j];
                let verdict = if j % 3 == 0 { "unfair" } else { "fair" };
                let (s, v) = json(
                    &app,
                    "POST",
                    &format!("/applications/{id}/judgment"),
                    Some(&token),
                    Some(json!({"verdict": verdict})),
                )
                .await;
                assert_eq!(s, StatusCode::OK, "{v}");
                let (_, o) = json(&app, "GET", "/overview", Some(&token), None).await;
                let unfair = (0..=j).filter(|i| i % 3 == 0).count() as u64;
                assert_eq!(o["judged_unfair"].as_u64(), Some(unfair));
                assert_eq!(o["judged_fair"].as_u64(), Some(j as u64 + 1 - unfair));
                let (_, d) = json(&app, "GET", &format!("/applications/{id}"), Some(&token), None).await;
                assert_eq!(d["judgment"]["verdict"], verdict);
            }
            token
        }));
    }
    let mut tokens = Vec::new();
    for h in handles {
        tokens.push(h.await.unwrap());
    }
    assert_eq!(log_lines(dir.path()).len(), 110);
    // the interleaved log replays to the same per-session views
    let restarted = common::app(&f, Some(dir.path()));
    for t in &tokens {
        let a = call(&app, "GET", &format!("/sessions/{t}"), None, None).await;
        let b = call(&restarted, "GET", &format!("/sessions/{t}"), None, None).await;
        assert_eq!(a, b);
    }
}
