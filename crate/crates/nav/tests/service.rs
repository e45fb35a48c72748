use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use hmsg::builder::{build_graph, BuildOptions};
use hmsg::model::GraphSummary;
use hmsg::planner::Plan;
use hmsg::providers::offline::{AnchorTable, Corruption};
use hmsg::providers::ProviderSuite;
use hmsg::slow::{FsrOptions, NavGoal};
use hmsg::synth::{generate_scene, SynthParams, SynthScene};
use hmsg_nav::service::{router, AppState};
use http_body_util::BodyExt;
use tower::ServiceExt;

fn app(seed: u64) -> (Router, SynthScene) {
    let scene = generate_scene(seed, &SynthParams::default()).unwrap();
    let providers = ProviderSuite::offline(Arc::new(scene.truth.clone()), AnchorTable::standard(), Corruption::none());
    let graph = build_graph(&scene.layout, &providers, &BuildOptions { offline: true, ..Default::default() }).unwrap().graph;
    (router(AppState::new(graph, providers, FsrOptions::default())), scene)
}

async fn call(app: &Router, method: &str, uri: &str, body: &str) -> (StatusCode, Vec<u8>) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_owned()))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

fn json(bytes: &[u8]) -> serde_json::Value {
    serde_json::from_slice(bytes).unwrap()
}

#[tokio::test]
async fn health_and_summary() {
    let (app, _) = app(1);
    let (s, body) = call(&app, "GET", "/health", "").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(json(&body)["status"], "ok");
    assert_eq!(json(&body)["nodes"], 49);
    let (s, body) = call(&app, "GET", "/graph/summary", "").await;
    assert_eq!(s, StatusCode::OK);
    let summary: GraphSummary = serde_json::from_slice(&body).unwrap();
    assert_eq!((summary.rooms, summary.views, summary.objects), (4, 24, 20));
    assert_eq!(call(&app, "GET", "/nowhere", "").await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn query_returns_goal_with_round_tripping_trace() {
    let (app, scene) = app(2);
    let rec = &scene.dataset[1];
    let body = serde_json::json!({ "text": rec.text }).to_string();
    let (s, bytes) = call(&app, "POST", "/query", &body).await;
    assert_eq!(s, StatusCode::OK, "{}", String::from_utf8_lossy(&bytes));
    let goal: NavGoal = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(goal.object_id, rec.gt_object_id);
    let again: NavGoal = serde_json::from_str(&serde_json::to_string(&goal).unwrap()).unwrap();
    assert_eq!(again, goal);
    // stateless: same request, same bytes
    assert_eq!(call(&app, "POST", "/query", &body).await.1, bytes);
}

#[tokio::test]
async fn bad_requests_are_rejected() {
    let (app, _) = app(3);
    for body in [r#"{"text": ""}"#, r#"{"text": "   "}"#, "not json", r#"{"words": "chair"}"#, r#"{"text": 5}"#, ""] {
        let (s, bytes) = call(&app, "POST", "/query", body).await;
        assert_eq!(s, StatusCode::BAD_REQUEST, "{body}");
        assert!(json(&bytes)["error"].is_string());
    }
    for body in [r#"{"from": [0, 0], "to_view": "v000"}"#, r#"{"to_view": "v000"}"#, "[]"] {
        assert_eq!(call(&app, "POST", "/plan", body).await.0, StatusCode::BAD_REQUEST, "{body}");
    }
}

#[tokio::test]
async fn plans_and_missing_views() {
    let (app, _) = app(4);
    let (s, bytes) = call(&app, "POST", "/plan", r#"{"from": [0.0, -1.0, 1.2], "to_view": "v013"}"#).await;
    assert_eq!(s, StatusCode::OK);
    let plan: Plan = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(plan.to_view.as_str(), "v013");
    assert_eq!(plan.waypoints.len(), plan.views.len());
    let (s, bytes) = call(&app, "POST", "/plan", r#"{"from": [0, 0, 0], "to_view": "v999"}"#).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(json(&bytes)["kind"], "unknown-view");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_queries_do_not_interfere() {
    let (app, scene) = app(5);
    let rf: Vec<_> = scene.dataset.iter().filter(|r| r.category == hmsg::eval::InstructionCategory::Rf).take(2).collect();
    let tasks: Vec<_> = (0..16)
        .map(|i| {
            let app = app.clone();
            let rec = rf[i % 2].clone();
            tokio::spawn(async move {
                let body = serde_json::json!({ "text": rec.text }).to_string();
                let (s, bytes) = call(&app, "POST", "/query", &body).await;
                assert_eq!(s, StatusCode::OK);
                let goal: NavGoal = serde_json::from_slice(&bytes).unwrap();
                (rec, goal)
            })
        })
        .collect();
    for t in tasks {
        let (rec, goal) = t.await.unwrap();
        assert_eq!(goal.object_id, rec.gt_object_id, "{}", rec.text);
        assert_eq!(goal.instruction, rec.text);
    }
}

struct Down;

impl hmsg::providers::TextEmbedder for Down {
    fn embed_text(&self, _: &str) -> Result<hmsg::model::Embedding, hmsg::providers::ProviderError> {
        Err(hmsg::providers::ProviderError::Timeout { attempts: 3 })
    }
}

#[tokio::test]
async fn provider_failures_are_bad_gateway() {
    let scene = generate_scene(6, &SynthParams::default()).unwrap();
    let providers = ProviderSuite::offline(Arc::new(scene.truth.clone()), AnchorTable::standard(), Corruption::none());
    let graph = build_graph(&scene.layout, &providers, &BuildOptions { offline: true, ..Default::default() }).unwrap().graph;
    let broken = ProviderSuite { text_embedder: Arc::new(Down), ..providers };
    let app = router(AppState::new(graph, broken, FsrOptions::default()));
    let (s, bytes) = call(&app, "POST", "/query", r#"{"text": "find the chair"}"#).await;
    assert_eq!(s, StatusCode::BAD_GATEWAY);
    let body = json(&bytes);
    assert_eq!(body["kind"], "provider");
    assert_eq!(body["trace"][0]["step"], "parse-instruction");
}
