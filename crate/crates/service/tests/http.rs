use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use hleval_service::{router, AppState, SessionStore};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn app(dir: &std::path::Path) -> Router {
    router(AppState {
        store: Arc::new(SessionStore::open(dir).unwrap()),
        default_clip_base_url: "/clips/".into(),
    })
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json");
    let req = match body {
        Some(b) => req.body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value: Value = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(value["schema_version"], 1, "{uri}: {value}");
    (status, value)
}

fn samples() -> Value {
    json!([
        {"sample_id": "d1#0", "dialogue_id": "d1", "start_s": 0, "end_s": 60},
        {"sample_id": "d1#1", "dialogue_id": "d1", "start_s": 60, "end_s": 120}
    ])
}

#[tokio::test]
async fn judgment_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (status, created) = call(
        &app,
        "POST",
        "/sessions",
        Some(json!({"samples": samples(), "annotators": 2, "k": 2, "load_min": 0, "seed": 3})),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED);
    let id = created["session_id"].as_str().unwrap().to_string();
    assert_eq!(created["annotators"], 2);

    let next_uri = format!("/sessions/{id}/annotators/a001/next");
    let (status, next) = call(&app, "GET", &next_uri, None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(next["status"], "sample");
    assert_eq!(next["position"], 1);
    assert_eq!(next["total"], 2);
    let first = next["sample_id"].as_str().unwrap().to_string();
    assert_eq!(next["clip_url"], format!("/clips/{}", first.replace('#', "%23")));
    let second = if first == "d1#0" { "d1#1" } else { "d1#0" };

    let judge_uri = format!("/sessions/{id}/annotators/a001/judgments");
    let (status, err) = call(
        &app,
        "POST",
        &judge_uri,
        Some(json!({"sample_id": second, "verdict": "human"})),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["error"]["code"], "out_of_order");

    let (status, ack) = call(
        &app,
        "POST",
        &judge_uri,
        Some(json!({"sample_id": first, "verdict": "human"})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ack["judged"], 1);
    let (status, _) = call(
        &app,
        "POST",
        &judge_uri,
        Some(json!({"sample_id": first, "verdict": "system"})),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);

    let (status, _) = call(
        &app,
        "POST",
        &judge_uri,
        Some(json!({"sample_id": second, "verdict": "maybe"})),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&app, "GET", &format!("/sessions/{id}/annotators/nobody/next"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, "GET", "/sessions/s0404/progress", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (status, _) = call(&app, "GET", &format!("/sessions/{id}/export"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, partial) = call(&app, "GET", &format!("/sessions/{id}/export?partial=true"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(partial["complete"], false);
    assert_eq!(partial["n_judgments"], 1);

    let (status, flagged) = call(
        &app,
        "POST",
        &format!("/sessions/{id}/annotators/a002/flags"),
        Some(json!({"sample_id": "x"})),
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND, "{flagged}");

    let (_, progress) = call(&app, "GET", &format!("/sessions/{id}/progress"), None).await;
    assert_eq!(progress["state"], "OPEN");
    assert_eq!(progress["assigned"], 4);
    assert_eq!(progress["judged"], 1);
}

#[tokio::test]
async fn creation_is_validated() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (status, body) = call(
        &app,
        "POST",
        "/sessions",
        Some(json!({"samples": samples(), "annotators": 3, "k": 5, "seed": 1})),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"]["code"], "infeasible");
    let (status, _) = call(&app, "POST", "/sessions", Some(json!({"annotators": 3, "seed": 1}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(
        &app,
        "POST",
        "/sessions",
        Some(json!({"samples": samples(), "annotators": 3})),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST, "seed is required");
}
