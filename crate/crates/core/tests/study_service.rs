mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

use tvsg::anonymizer::MaskedInstanceSet;
use tvsg::study::{router, StudyOptions, StudyService};

use common::{leaked_names, random_named_corpus, valid_answer};

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn app(dir: &std::path::Path, instances: Vec<MaskedInstanceSet>, reveal: bool) -> (Router, Arc<StudyService>) {
    let service = Arc::new(StudyService::open(dir, instances, StudyOptions { reveal_correctness: reveal }).unwrap());
    (router(service.clone(), None), service)
}

async fn open_session(app: &Router, annotator: &str, seed: u64) -> String {
    let (st, body) = call(app, "GET", &format!("/api/session?annotator={annotator}&seed={seed}"), None).await;
    assert_eq!(st, StatusCode::OK);
    body["session_id"].as_str().unwrap().to_owned()
}

fn instance_of<'a>(instances: &'a [MaskedInstanceSet], payload: &Value) -> &'a MaskedInstanceSet {
    instances
        .iter()
        .find(|i| i.episode_id == payload["episode_id"] && i.scene_index == payload["scene_index"].as_u64().unwrap() && i.show == payload["show"])
        .unwrap()
}

#[tokio::test]
async fn full_session_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (instances, _) = random_named_corpus(1, 4);
    let total: usize = instances.iter().map(|i| i.gold.len()).sum();
    let (app, service) = app(dir.path(), instances.clone(), true);
    let id = open_session(&app, "ann1", 3).await;

    let mut answered = 0;
    loop {
        let (st, payload) = call(&app, "GET", &format!("/api/session/{id}/next"), None).await;
        if st == StatusCode::GONE {
            break;
        }
        assert_eq!(st, StatusCode::OK);
        assert_eq!(payload["position"], answered);
        assert_eq!(payload["total"], total);
        let inst = instance_of(&instances, &payload);
        assert!(leaked_names(&payload, inst).is_empty());
        let (st, res) = call(&app, "POST", &format!("/api/session/{id}/answer"), Some(valid_answer(&payload, answered))).await;
        assert_eq!(st, StatusCode::OK, "{res}");
        answered += 1;
        assert_eq!(res["remaining"], total - answered);
        assert!(res["correct"].is_boolean());
        let (_, summary) = call(&app, "GET", "/api/summary", None).await;
        assert_eq!(summary["records"], answered);
    }
    assert_eq!(answered, total);
    assert_eq!(service.read_log().unwrap().len(), total);
    let log = service.read_log().unwrap();
    assert!(log.iter().all(|r| r.annotator_id == "ann1" && r.timestamp > 0));
}

#[tokio::test]
async fn error_statuses() {
    let dir = tempfile::tempdir().unwrap();
    let (instances, _) = random_named_corpus(2, 3);
    let (app, _) = app(dir.path(), instances, true);

    let (st, _) = call(&app, "GET", "/api/session/nope/next", None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    let (st, _) = call(&app, "GET", "/api/summary", None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);

    let id = open_session(&app, "a", 0).await;
    let (_, payload) = call(&app, "GET", &format!("/api/session/{id}/next"), None).await;

    let mut wrong_item = valid_answer(&payload, 0);
    wrong_item["scene_index"] = Value::from(payload["scene_index"].as_u64().unwrap() + 1000);
    let (st, body) = call(&app, "POST", &format!("/api/session/{id}/answer"), Some(wrong_item)).await;
    assert_eq!(st, StatusCode::CONFLICT, "{body}");

    let mut bad_guess = valid_answer(&payload, 0);
    bad_guess["guess"] = Value::from("nobody");
    let (st, body) = call(&app, "POST", &format!("/api/session/{id}/answer"), Some(bad_guess)).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(body["errors"].as_array().is_some_and(|e| !e.is_empty()));

    let mut no_evidence = valid_answer(&payload, 0);
    no_evidence["evidence"] = serde_json::json!([]);
    let (st, _) = call(&app, "POST", &format!("/api/session/{id}/answer"), Some(no_evidence)).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);

    let mut fact_without_subtype = valid_answer(&payload, 0);
    fact_without_subtype["evidence"] = serde_json::json!([{"coarse": "fact"}]);
    let (st, _) = call(&app, "POST", &format!("/api/session/{id}/answer"), Some(fact_without_subtype)).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);

    let mut other_annotator = valid_answer(&payload, 0);
    other_annotator["annotator_id"] = Value::from("b");
    let (st, _) = call(&app, "POST", &format!("/api/session/{id}/answer"), Some(other_annotator)).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);

    // rejected answers leave the cursor where it was
    let (_, again) = call(&app, "GET", &format!("/api/session/{id}/next"), None).await;
    assert_eq!(again, payload);
}

#[tokio::test]
async fn sessions_survive_restart() {
    let dir = tempfile::tempdir().unwrap();
    let (instances, _) = random_named_corpus(3, 6);
    let id;
    let expected;
    {
        let (app, _) = app(dir.path(), instances.clone(), true);
        id = open_session(&app, "a", 9).await;
        for k in 0..2 {
            let (_, p) = call(&app, "GET", &format!("/api/session/{id}/next"), None).await;
            let (st, _) = call(&app, "POST", &format!("/api/session/{id}/answer"), Some(valid_answer(&p, k))).await;
            assert_eq!(st, StatusCode::OK);
        }
        expected = call(&app, "GET", &format!("/api/session/{id}/next"), None).await.1;
    }
    let (app, service) = app(dir.path(), instances, true);
    let (st, p) = call(&app, "GET", &format!("/api/session/{id}/next"), None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(p, expected);
    assert_eq!(p["position"], 2);
    assert_eq!(service.read_log().unwrap().len(), 2);
    assert!(!dir.path().join("sessions").read_dir().unwrap().any(|e| e.unwrap().path().extension().is_some_and(|x| x == "tmp")));
}

#[test]
fn queue_order_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let (instances, _) = random_named_corpus(4, 12);
    let service = StudyService::open(dir.path(), instances.clone(), StudyOptions::default()).unwrap();
    let a = service.queue_for("ann", None, 5);
    assert_eq!(a, service.queue_for("ann", None, 5));
    assert_ne!(a, service.queue_for("ann", None, 6));
    assert_ne!(a, service.queue_for("other", None, 5));
    let again = StudyService::open(tempfile::tempdir().unwrap().path(), instances.clone(), StudyOptions::default()).unwrap();
    assert_eq!(a, again.queue_for("ann", None, 5));
    let unique: std::collections::BTreeSet<_> = a.iter().map(|q| (q.scene.clone(), q.speaker_id)).collect();
    assert_eq!(unique.len(), a.len());
    assert_eq!(a.len(), instances.iter().map(|i| i.gold.len()).sum::<usize>());
    assert!(service.queue_for("ann", Some("no-such-show"), 5).is_empty());
}

#[tokio::test]
async fn hidden_correctness_and_two_annotator_agreement() {
    let dir = tempfile::tempdir().unwrap();
    let (instances, _) = random_named_corpus(5, 3);
    let (app, _) = app(dir.path(), instances, false);
    for ann in ["x", "y"] {
        let id = open_session(&app, ann, 1).await;
        loop {
            let (st, p) = call(&app, "GET", &format!("/api/session/{id}/next"), None).await;
            if st != StatusCode::OK {
                break;
            }
            let (_, res) = call(&app, "POST", &format!("/api/session/{id}/answer"), Some(valid_answer(&p, 0))).await;
            assert!(res["correct"].is_null());
        }
    }
    let (st, s) = call(&app, "GET", "/api/summary?annotators=x,y", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(s["correctness_revealed"], false);
    assert!(s["agreement"]["x|y"]["items"].as_u64().unwrap() > 0);
}

#[tokio::test]
async fn payloads_never_name_the_masked_speaker() {
    let mut seen = 0;
    for seed in 0..20u64 {
        let dir = tempfile::tempdir().unwrap();
        let (instances, _) = random_named_corpus(100 + seed, 5);
        let (app, _) = app(dir.path(), instances.clone(), true);
        let id = open_session(&app, "fuzz", seed).await;
        for k in 0.. {
            let (st, p) = call(&app, "GET", &format!("/api/session/{id}/next"), None).await;
            if st != StatusCode::OK {
                break;
            }
            let leaked = leaked_names(&p, instance_of(&instances, &p));
            assert!(leaked.is_empty(), "payload leaks {leaked:?}");
            call(&app, "POST", &format!("/api/session/{id}/answer"), Some(valid_answer(&p, k))).await;
            seen += 1;
        }
    }
    assert!(seen > 50);
}

#[tokio::test]
async fn static_files_stay_inside_their_directory() {
    let dir = tempfile::tempdir().unwrap();
    let web = tempfile::tempdir().unwrap();
    std::fs::write(web.path().join("index.html"), "<p>study</p>").unwrap();
    std::fs::write(dir.path().join("secret.txt"), "no").unwrap();
    let (instances, _) = random_named_corpus(6, 2);
    let service = Arc::new(StudyService::open(dir.path(), instances, StudyOptions::default()).unwrap());
    let app = router(service, Some(web.path().to_path_buf()));
    let resp = app.clone().oneshot(Request::get("/").body(Body::empty()).unwrap()).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let resp = app.clone().oneshot(Request::get("/../secret.txt").body(Body::empty()).unwrap()).await.unwrap();
    assert_eq!(resp.status(), StatusCode::NOT_FOUND);
    let resp = app.oneshot(Request::get("/missing.js").body(Body::empty()).unwrap()).await.unwrap();
    assert_eq!(resp.status(), StatusCode::NOT_FOUND);
}
