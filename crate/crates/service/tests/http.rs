mod common;

use std::sync::{Arc, Condvar, Mutex};

use axum::http::{Method, StatusCode};
use common::*;
use mastery_core::ledger::{decode, replay};
use mastery_core::Timestamp;
use mastery_service::{start, Clock, StartError};
use serde_json::json;

async fn open_session(router: &axum::Router) {
    let r = post(router, "/admin/sessions/open", ADMIN, json!({ "examiners": ["ana", "ben"] })).await;
    assert_eq!(r.status, StatusCode::OK, "{:?}", r.body);
}

#[tokio::test]
async fn boots_empty() {
    let fx = Fixture::new();
    let svc = fx.start();
    let r = call(&svc.router, Method::GET, "/health", None, None).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.body["students"], 0);
    assert_eq!(r.body["last_seq"], 0);
}

#[tokio::test]
async fn demonstration_round_trip() {
    let fx = Fixture::new();
    let svc = fx.start();
    let app = &svc.router;
    open_session(app).await;

    let r1 = post(app, "/requests", S1, json!({ "achievements": ["ownership", "errors"] })).await;
    assert_eq!(r1.status, StatusCode::OK, "{:?}", r1.body);
    assert_eq!(r1.body["queue_position"], 0);
    fx.advance_minutes(5);
    let r2 = post(app, "/requests", S2, json!({ "achievements": ["traits"] })).await;
    assert_eq!(r2.body["queue_position"], 1);
    assert_eq!(r2.body["pending_total"], 2);
    let (id1, id2) = (r1.body["id"].as_u64().unwrap(), r2.body["id"].as_u64().unwrap());

    let feed = get(app, "/feed", ANA).await;
    assert_eq!(feed.body.as_array().unwrap().len(), 2);
    assert_eq!(feed.body[0]["achievements"], json!(["ownership", "errors"]));
    assert_eq!(feed.body[0]["waited_ms"], 5 * Timestamp::MINUTE);

    fx.advance_minutes(10);
    let claimed = post(app, &format!("/requests/{id1}/claim"), ANA, json!({})).await;
    assert_eq!(claimed.status, StatusCode::OK);
    assert_eq!(claimed.body["claimed_by"], "ana");
    let again = post(app, &format!("/requests/{id1}/claim"), ANA, json!({})).await;
    assert_eq!(again.body, claimed.body);
    let lost = post(app, &format!("/requests/{id1}/claim"), BEN, json!({})).await;
    assert_eq!((lost.status, lost.code()), (StatusCode::CONFLICT, "ALREADY_CLAIMED"));

    let seen = get(app, &format!("/requests/{id1}"), S1).await;
    assert_eq!(seen.body["state"], "claimed");
    assert_eq!(seen.body["queue_position"], json!(null));
    assert_eq!(seen.body["notifications"], json!(["picked up by ana"]));
    assert_eq!(get(app, &format!("/requests/{id2}"), S2).await.body["queue_position"], 0);

    let sheet = json!({ "verdicts": { "s1": { "ownership": "pass", "errors": "pushback" } } });
    let stolen = post(app, &format!("/requests/{id1}/results"), BEN, sheet.clone()).await;
    assert_eq!(stolen.code(), "ALREADY_CLAIMED");
    fx.advance_minutes(10);
    let graded = post(app, &format!("/requests/{id1}/results"), ANA, sheet).await;
    assert_eq!(graded.status, StatusCode::OK, "{:?}", graded.body);
    assert_eq!(graded.body["request"]["state"], "completed");

    let progress = get(app, "/students/s1/progress", S1).await;
    assert_eq!(progress.body["passed"], json!(["ownership"]));
    assert_eq!(progress.body["attempts_used"], 1);
    assert_eq!(progress.body["grade"], json!(null));
    assert_eq!(progress.body["burndown"]["points"].as_array().unwrap().len(), 2);

    let locked = post(app, "/requests", S1, json!({ "achievements": ["errors"] })).await;
    assert_eq!((locked.status, locked.code()), (StatusCode::CONFLICT, "PUSH_BACK_LOCKED"));

    let waiting = get(app, "/stats/waiting", ADMIN).await;
    assert_eq!(waiting.body["total"]["count"], 1);
    assert_eq!(waiting.body["total"]["mean_ms"], 25.0 * Timestamp::MINUTE as f64);
}

#[tokio::test]
async fn error_codes_and_statuses() {
    let fx = Fixture::new();
    let svc = fx.start();
    let app = &svc.router;

    let closed = post(app, "/requests", S1, json!({ "achievements": ["ownership"] })).await;
    assert_eq!((closed.status, closed.code()), (StatusCode::CONFLICT, "SESSION_CLOSED"));
    open_session(app).await;
    let five = json!({ "achievements": ["ownership", "traits", "errors", "iterators", "lifetimes"] });
    assert_eq!(post(app, "/requests", S1, five).await.code(), "TOO_MANY_ACHIEVEMENTS");
    assert_eq!(post(app, "/requests", S1, json!({ "achievements": ["exam"] })).await.code(), "NOT_LAB_DEMONSTRABLE");
    assert_eq!(post(app, "/requests", S1, json!({ "achievements": ["nope"] })).await.code(), "UNKNOWN_ACHIEVEMENT");
    assert_eq!(post(app, "/requests", S1, json!({ "achievements": [] })).await.code(), "NO_ACHIEVEMENTS");
    let pair = json!({ "achievements": ["ownership"], "partner": "s1" });
    assert_eq!(post(app, "/requests", S1, pair).await.code(), "PAIR_SIZE_INVALID");

    assert_eq!(post(app, "/requests", S1, json!({ "achievements": ["ownership"] })).await.status, StatusCode::OK);
    let dup = post(app, "/requests", S1, json!({ "achievements": ["traits"] })).await;
    assert_eq!(dup.code(), "ALREADY_PENDING");

    let missing = get(app, "/requests/999", ADMIN).await;
    assert_eq!((missing.status, missing.code()), (StatusCode::NOT_FOUND, "UNKNOWN_REQUEST"));
    let bad = call(app, Method::POST, "/requests", Some(S2), Some(json!({ "achievement": 1 }))).await;
    assert_eq!((bad.status, bad.code()), (StatusCode::BAD_REQUEST, "BAD_REQUEST"));
    assert_eq!(get(app, "/requests/abc", ADMIN).await.status, StatusCode::BAD_REQUEST);
    assert_eq!(get(app, "/nowhere", ADMIN).await.status, StatusCode::NOT_FOUND);

    let claim = post(app, "/requests/1/claim", ANA, json!({})).await;
    assert_eq!(claim.status, StatusCode::OK);
    let partial = post(app, "/requests/1/results", ANA, json!({ "verdicts": {} })).await;
    assert_eq!((partial.status, partial.code()), (StatusCode::UNPROCESSABLE_ENTITY, "INVALID_SHEET"));
    let extra = json!({ "verdicts": { "s1": { "ownership": "pass", "traits": "pass" } } });
    assert_eq!(post(app, "/requests/1/results", ANA, extra).await.code(), "INVALID_SHEET");
    let cancel = call(app, Method::DELETE, "/requests/1", Some(S1), None).await;
    assert_eq!(cancel.code(), "NOT_PENDING");
}

#[tokio::test]
async fn every_endpoint_is_role_gated() {
    let fx = Fixture::new();
    let svc = fx.start();
    let app = &svc.router;
    let routes: &[(Method, &str, &[&str])] = &[
        (Method::GET, "/catalog", &[]),
        (Method::POST, "/requests", &[ANA, ADMIN]),
        (Method::GET, "/requests/1", &[]),
        (Method::DELETE, "/requests/1", &[ANA, ADMIN]),
        (Method::GET, "/feed", &[S1]),
        (Method::POST, "/requests/1/claim", &[S1, ADMIN]),
        (Method::POST, "/requests/1/reject-pitch", &[S1, ADMIN]),
        (Method::POST, "/requests/1/results", &[S1, ADMIN]),
        (Method::GET, "/students/s1/progress", &[S2]),
        (Method::GET, "/stats/waiting", &[S1]),
        (Method::GET, "/stats/achievements", &[S1]),
        (Method::GET, "/stats/cohort", &[S1]),
        (Method::GET, "/stats/burnup", &[S1]),
        (Method::POST, "/admin/corrections", &[S1, ANA]),
        (Method::POST, "/admin/catalog", &[S1, ANA]),
        (Method::POST, "/admin/schedule", &[S1, ANA]),
        (Method::POST, "/admin/sessions/open", &[S1, ANA]),
        (Method::POST, "/admin/sessions/close", &[S1, ANA]),
    ];
    for (method, uri, denied) in routes {
        let anon = call(app, method.clone(), uri, None, Some(json!({}))).await;
        assert_eq!((anon.status, anon.code()), (StatusCode::UNAUTHORIZED, "UNAUTHENTICATED"), "{uri}");
        let forged = call(app, method.clone(), uri, Some("forged"), Some(json!({}))).await;
        assert_eq!(forged.body, anon.body, "{uri}");
        for token in *denied {
            let r = call(app, method.clone(), uri, Some(token), Some(json!({}))).await;
            assert_eq!((r.status, r.code()), (StatusCode::FORBIDDEN, "FORBIDDEN"), "{method} {uri} as {token}");
        }
    }
}

#[tokio::test]
async fn admin_operations() {
    let fx = Fixture::new();
    let svc = fx.start();
    let app = &svc.router;

    let note_missing = json!({ "student": "s1", "achievement": "ownership", "direction": "pass", "note": " " });
    assert_eq!(post(app, "/admin/corrections", ADMIN, note_missing).await.code(), "LEDGER_REJECTED");
    let fix = json!({ "student": "s1", "achievement": "ownership", "direction": "pass", "note": "handwritten sheet" });
    assert_eq!(post(app, "/admin/corrections", ADMIN, fix).await.status, StatusCode::OK);
    let revoke = json!({ "student": "s2", "achievement": "ownership", "direction": "revoke", "note": "x" });
    assert_eq!(post(app, "/admin/corrections", ADMIN, revoke).await.status, StatusCode::CONFLICT);

    let mut catalog = get(app, "/catalog", S1).await.body;
    catalog["achievement"].as_array_mut().unwrap().retain(|a| a["id"] != "macros");
    let r = post(app, "/admin/catalog", ADMIN, catalog.clone()).await;
    assert_eq!(r.status, StatusCode::OK, "{:?}", r.body);
    let saved = mastery_core::CourseCatalog::load(fx.path("catalog.toml")).unwrap();
    assert!(!saved.contains(&"macros".into()));
    catalog["achievement"][0]["level"] = json!("7");
    let invalid = post(app, "/admin/catalog", ADMIN, catalog).await;
    assert_eq!((invalid.status, invalid.code()), (StatusCode::UNPROCESSABLE_ENTITY, "INVALID_CATALOG"));

    let schedule = json!({ "course_start": 10, "course_end": 5, "phase": [] });
    assert_eq!(post(app, "/admin/schedule", ADMIN, schedule).await.code(), "INVALID_SCHEDULE");

    open_session(app).await;
    let twice = post(app, "/admin/sessions/open", ADMIN, json!({ "examiners": ["ana"] })).await;
    assert_eq!(twice.code(), "SESSION_ALREADY_OPEN");
    post(app, "/requests", S1, json!({ "achievements": ["traits"] })).await;
    let closed = post(app, "/admin/sessions/close", ADMIN, json!({})).await;
    assert_eq!(closed.status, StatusCode::OK);
    assert_eq!(closed.body["entries"].as_array().unwrap().len(), 2);
    assert_eq!(get(app, "/requests/1", S1).await.body["state"], "cancelled");
    assert_eq!(post(app, "/admin/sessions/close", ADMIN, json!({})).await.code(), "SESSION_CLOSED");
}

#[tokio::test]
async fn restart_replays_to_the_same_state() {
    let fx = Fixture::new();
    let before = {
        let svc = fx.start();
        let app = &svc.router;
        open_session(app).await;
        post(app, "/requests", S1, json!({ "achievements": ["ownership", "traits"] })).await;
        post(app, "/requests", S2, json!({ "achievements": ["errors"] })).await;
        post(app, "/requests/1/claim", ANA, json!({})).await;
        let sheet = json!({ "verdicts": { "s1": { "ownership": "pass", "traits": "fail" } } });
        post(app, "/requests/1/results", ANA, sheet).await;
        post(app, "/requests/2/claim", BEN, json!({})).await;
        svc.state.writer.snapshot().state.canonical_json()
    };
    let svc = fx.start();
    assert_eq!(svc.state.writer.snapshot().state.canonical_json(), before);
    let from_disk = replay(&decode(&std::fs::read(fx.path("ledger.ndjson")).unwrap()).unwrap()).unwrap();
    assert_eq!(from_disk.canonical_json(), before);
    // The writer picks up numbering where the file left off.
    let r = post(&svc.router, "/requests/2/results", BEN, json!({ "verdicts": { "s2": { "errors": "pass" } } })).await;
    assert_eq!(r.status, StatusCode::OK, "{:?}", r.body);
}

#[tokio::test]
async fn truncated_ledger_refuses_to_boot() {
    let fx = Fixture::new();
    {
        let svc = fx.start();
        open_session(&svc.router).await;
        post(&svc.router, "/requests", S1, json!({ "achievements": ["ownership"] })).await;
    }
    let path = fx.path("ledger.ndjson");
    let text = std::fs::read_to_string(&path).unwrap();
    let first = text.find('\n').unwrap() + 1;
    std::fs::write(&path, &text[..text.len() - 5]).unwrap();
    match start(&fx.config(), fx.clock()) {
        Err(StartError::Ledger { source, .. }) => {
            assert_eq!(source.seq(), Some(2));
            assert!(source.to_string().contains(&format!("offset {first}")), "{source}");
        }
        other => panic!("expected ledger error, got {:?}", other.err()),
    }
}

#[tokio::test]
async fn full_write_queue_answers_retry_later() {
    let fx = Fixture::new();
    // A clock that parks the writer until released.
    let gate = Arc::new((Mutex::new(false), Condvar::new()));
    let g = gate.clone();
    let clock: Clock = Arc::new(move || {
        let (lock, cv) = &*g;
        let mut blocked = lock.lock().unwrap();
        while *blocked {
            blocked = cv.wait(blocked).unwrap();
        }
        Timestamp(T0)
    });
    let mut cfg = fx.config();
    cfg.write_queue = 1;
    let svc = start(&cfg, clock).unwrap();
    let app = svc.router.clone();
    open_session(&app).await;

    *gate.0.lock().unwrap() = true;
    let first = tokio::spawn({
        let app = app.clone();
        async move { post(&app, "/requests", S1, json!({ "achievements": ["ownership"] })).await }
    });
    // Wait until the writer has taken the first job and is parked.
    while svc.state.writer.snapshot().state.last_seq == 1 && !first.is_finished() {
        tokio::time::sleep(std::time::Duration::from_millis(5)).await;
        let queued = tokio::spawn({
            let app = app.clone();
            async move { post(&app, "/requests", S2, json!({ "achievements": ["traits"] })).await }
        });
        tokio::time::sleep(std::time::Duration::from_millis(20)).await;
        let third = post(&app, "/requests", S1, json!({ "achievements": ["traits"] })).await;
        if third.status == StatusCode::SERVICE_UNAVAILABLE {
            assert_eq!(third.code(), "RETRY_LATER");
            // Reads stay available while the writer is stuck.
            assert_eq!(call(&app, Method::GET, "/health", None, None).await.status, StatusCode::OK);
            let (lock, cv) = &*gate;
            *lock.lock().unwrap() = false;
            cv.notify_all();
            assert_eq!(first.await.unwrap().status, StatusCode::OK);
            assert_eq!(queued.await.unwrap().status, StatusCode::OK);
            return;
        }
    }
    panic!("write queue never filled");
}

#[tokio::test]
async fn concurrent_claims_have_one_winner() {
    let fx = Fixture::new();
    let svc = fx.start();
    let app = svc.router.clone();
    open_session(&app).await;
    post(&app, "/requests", S1, json!({ "achievements": ["ownership"] })).await;
    let tasks: Vec<_> = [ANA, BEN, ANA, BEN, ANA, BEN]
        .into_iter()
        .map(|t| {
            let app = app.clone();
            tokio::spawn(async move { (t, post(&app, "/requests/1/claim", t, json!({})).await) })
        })
        .collect();
    let mut winners = std::collections::BTreeSet::new();
    for t in tasks {
        let (token, r) = t.await.unwrap();
        match r.status {
            StatusCode::OK => {
                winners.insert(token);
            }
            StatusCode::CONFLICT => assert_eq!(r.code(), "ALREADY_CLAIMED"),
            s => panic!("unexpected {s}"),
        }
    }
    assert_eq!(winners.len(), 1);
    let ledger = decode(&std::fs::read(fx.path("ledger.ndjson")).unwrap()).unwrap();
    let claims = ledger.iter().filter(|e| matches!(e.event, mastery_core::ledger::Event::Claimed { .. })).count();
    assert_eq!(claims, 1);
}
