use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use decitree_service::api::{router, AppState};
use decitree_service::cli::build_tree;
use serde_json::{json, Value};
use tower::ServiceExt;

const BASIC: &str = include_str!("../../../configs/basic_tree.yaml");

fn app() -> Router {
    router(AppState::with_settings(build_tree(BASIC, None).unwrap(), Duration::from_secs(3600), Duration::from_secs(30)))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let v = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, v)
}

fn square() -> Value {
    json!({"problem_class": "maxcut", "nodes": 4, "edges": [[0,1],[1,2],[2,3],[3,0]]})
}

async fn wait_state(app: &Router, id: &str, pred: impl Fn(&str) -> bool) -> Value {
    let deadline = Instant::now() + Duration::from_secs(60);
    loop {
        let (s, v) = call(app, "GET", &format!("/runs/{id}"), None).await;
        assert_eq!(s, StatusCode::OK);
        if pred(v["state"].as_str().unwrap()) {
            return v;
        }
        assert!(Instant::now() < deadline, "timed out in state {}", v["state"]);
        std::thread::sleep(Duration::from_millis(5));
    }
}

#[tokio::test]
async fn automatic_run_finishes_without_queries() {
    let app = app();
    let (s, h) = call(&app, "POST", "/runs", Some(json!({"instance": square(), "path": {"shots": 0}}))).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    let id = h["run_id"].as_str().unwrap().to_string();
    assert_eq!(h["links"]["queries"], format!("/runs/{id}/queries"));
    let done = wait_state(&app, &id, |s| s == "finished" || s == "aborted").await;
    assert_eq!(done["state"], "finished");
    assert_eq!(done["result"]["status"]["state"], "completed");
    assert_eq!(done["result"]["visited_path"][5], "qaoa_run");
}

#[tokio::test]
async fn manual_run_is_steered_through_queries() {
    let app = app();
    let body = json!({"instance": square(), "mode": "manual", "path": "shots: 0\nbudget: 30\n"});
    let (_, h) = call(&app, "POST", "/runs", Some(body)).await;
    let id = h["run_id"].as_str().unwrap().to_string();

    wait_state(&app, &id, |s| s == "awaiting_query").await;
    let (s, q) = call(&app, "GET", &format!("/runs/{id}/queries"), None).await;
    assert_eq!(s, StatusCode::OK);
    let first = &q["queries"][0];
    assert_eq!(first["query"]["id"], "algorithm");
    let qid = first["qid"].as_str().unwrap().to_string();

    let (s, e) = call(&app, "POST", &format!("/queries/{qid}/answer"), Some(json!({"value": "quantum annealing"}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(e["code"], "validation_failed");
    let (s, _) = call(&app, "POST", &format!("/queries/{qid}/answer"), Some(json!({"value": "vqe"}))).await;
    assert_eq!(s, StatusCode::NO_CONTENT);
    let (s, e) = call(&app, "POST", &format!("/queries/{qid}/answer"), Some(json!({"value": "vqe"}))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(e["code"], "already_answered");

    // keep answering with defaults until the run ends
    let mut asked = vec!["algorithm".to_string()];
    loop {
        let v = wait_state(&app, &id, |s| s != "running").await;
        if v["state"] == "finished" || v["state"] == "aborted" {
            assert_eq!(v["state"], "finished", "{v}");
            assert_eq!(v["result"]["visited_path"][3], "vqe_setup");
            break;
        }
        let (_, q) = call(&app, "GET", &format!("/runs/{id}/queries"), None).await;
        let Some(p) = q["queries"].as_array().and_then(|a| a.first()).cloned() else { continue };
        let value = p["query"]["recommendation"]["value"].clone();
        let value = if value.is_null() { p["query"]["default"].clone() } else { value };
        asked.push(p["query"]["id"].as_str().unwrap().into());
        let (s, _) = call(&app, "POST", &format!("/queries/{}/answer", p["qid"].as_str().unwrap()), Some(json!({"value": value}))).await;
        assert_eq!(s, StatusCode::NO_CONTENT);
    }
    assert_eq!(asked[..3], ["algorithm", "depth", "optimizer"]);
}

#[tokio::test]
async fn errors_carry_codes() {
    let app = app();
    let (s, e) = call(&app, "GET", "/runs/nope", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(e["code"], "unknown_run");
    let (s, _) = call(&app, "GET", "/runs/nope/queries", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, e) = call(&app, "POST", "/queries/nope.x/answer", Some(json!({"value": 1}))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(e["code"], "unknown_query");
    let (s, e) = call(&app, "POST", "/runs", Some(json!({"instance": {"problem_class": "tsp"}}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(e["code"], "invalid_instance");
    let (s, e) = call(&app, "POST", "/runs", Some(json!({"instance": square(), "path": {"colour": 1}}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(e["code"], "invalid_path");
    let (s, e) = call(&app, "POST", "/assessments", Some(json!({"instance": square()}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(e["code"], "no_database");
}

#[tokio::test]
async fn backends_and_tree() {
    let app = app();
    let (s, b) = call(&app, "GET", "/backends", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(b["backends"][0]["id"], "local_simulator");
    let (s, t) = call(&app, "GET", "/tree", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(t["root"], "load_problem");
    assert_eq!(t["nodes"].as_array().unwrap().len(), 11);
    assert!(t["edges"].as_array().unwrap().iter().any(|e| e["from"] == "algorithm_selection" && e["to"] == "classical_solver"));
}

#[tokio::test]
async fn runs_expire_after_retention() {
    let state = AppState::with_settings(build_tree(BASIC, None).unwrap(), Duration::from_millis(200), Duration::from_secs(5));
    let app = router(state);
    let (_, h) = call(&app, "POST", "/runs", Some(json!({"instance": square(), "path": {"algorithm": "classical"}}))).await;
    let id = h["run_id"].as_str().unwrap().to_string();
    wait_state(&app, &id, |s| s == "finished").await;
    std::thread::sleep(Duration::from_millis(300));
    let (s, _) = call(&app, "GET", &format!("/runs/{id}"), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn a_waiting_run_does_not_block_others() {
    let app = app();
    let (_, h) = call(&app, "POST", "/runs", Some(json!({"instance": square(), "mode": "manual"}))).await;
    let waiting = h["run_id"].as_str().unwrap().to_string();
    wait_state(&app, &waiting, |s| s == "awaiting_query").await;
    let (_, h) = call(&app, "POST", "/runs", Some(json!({"instance": square(), "path": {"algorithm": "classical"}}))).await;
    let other = h["run_id"].as_str().unwrap().to_string();
    let v = wait_state(&app, &other, |s| s == "finished" || s == "aborted").await;
    assert_eq!(v["state"], "finished");
    let v = wait_state(&app, &waiting, |_| true).await;
    assert_eq!(v["state"], "awaiting_query");
}

#[tokio::test]
async fn assessments_use_the_service_database() {
    let db: Arc<decitree_core::scalability::ScalingDatabase> = Arc::new(fixture_db());
    let tree = build_tree(include_str!("../../../configs/recommend_tree.yaml"), Some(db)).unwrap();
    let app = router(AppState::new(tree));
    let (s, a) = call(&app, "POST", "/assessments", Some(json!({"instance": square()}))).await;
    assert_eq!(s, StatusCode::OK, "{a}");
    assert_eq!(a["schema"], "decitree.assessment/v1");
    assert_eq!(a["problem"]["matched_class"], "maxcut");
    let rows = vec![vec![1.0, -2.0], vec![0.0, 1.0]];
    let (s, a) = call(&app, "POST", "/assessments", Some(json!({"qubo": rows}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{a}");
    assert_eq!(a["code"], "assessment_failed");
}

fn fixture_db() -> decitree_core::scalability::ScalingDatabase {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/mini_db.json")).unwrap();
    decitree_core::scalability::ScalingDatabase::from_json(&text).unwrap()
}
