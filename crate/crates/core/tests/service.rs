use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use candle_core::DType;
use graphcover_core::config::Config;
use graphcover_core::generate::{CoverPipeline, GenerationResponse};
use graphcover_core::graph::CategoryVocabulary;
use graphcover_core::model::Model;
use graphcover_core::service::{router, ServiceState};
use graphcover_core::title::TitleBackend;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn pipeline() -> CoverPipeline {
    let cfg = Config::overfit10();
    let vocab = CategoryVocabulary::new(["sun", "tree", "house"]).unwrap();
    let model = Model::new(&cfg.model, vocab, 3, DType::F32).unwrap();
    CoverPipeline::new(model, TitleBackend::Fallback)
}

fn graph() -> Value {
    json!({
        "objects": [
            { "id": "sun", "category": "sun", "grid_cell": 3, "size": 4, "appearance": { "mode": "seed", "seed": 9 } },
            { "id": "tree", "category": "tree", "grid_cell": 21, "size": 6, "appearance": { "mode": "random" } },
            { "id": "bar", "category": "solid", "grid_cell": 12, "size": 5, "appearance": { "mode": "random" } },
            { "id": "t", "category": "title", "grid_cell": 7, "size": 3, "appearance": { "mode": "random" }, "text": "Lorem Ipsum" }
        ],
        "relations": [
            { "subject": "sun", "predicate": "above", "object": "tree" },
            { "subject": "t", "predicate": "above", "object": "bar" }
        ]
    })
}

async fn call(state: &Arc<ServiceState>, req: Request<Body>) -> (StatusCode, Value) {
    let resp = router(state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap())
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

fn post(body: &Value) -> Request<Body> {
    Request::post("/generate")
        .header("content-type", "application/json")
        .body(Body::from(serde_json::to_vec(body).unwrap()))
        .unwrap()
}

#[tokio::test]
async fn loading_state_answers_503() {
    let state = ServiceState::loading();
    assert_eq!(call(&state, get("/healthz")).await.0, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(call(&state, get("/categories")).await.0, StatusCode::SERVICE_UNAVAILABLE);
    let (status, _) = call(&state, post(&json!({ "graph": graph() }))).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    state.set_pipeline(pipeline());
    assert_eq!(call(&state, get("/healthz")).await.0, StatusCode::OK);
}

#[tokio::test]
async fn categories_include_reserved_entries() {
    let state = ServiceState::ready(pipeline());
    let (status, body) = call(&state, get("/categories")).await;
    assert_eq!(status, StatusCode::OK);
    let cats: Vec<&str> = body["categories"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert!(cats.contains(&"solid") && cats.contains(&"title") && cats.contains(&"sun"));
}

#[tokio::test]
async fn malformed_documents_get_path_qualified_400() {
    let state = ServiceState::ready(pipeline());
    let mut g = graph();
    g["objects"][1]["grid_cell"] = json!(40);
    let cases = [
        (json!({ "graph": g }), "/graph/objects/1/grid_cell"),
        (json!({ "graph": graph(), "variations": 0 }), "/variations"),
        (json!({ "graph": graph(), "colour": 1 }), "/colour"),
        (json!({ "graph": graph(), "noise_seeds": { "nope": 1 } }), "/noise_seeds/nope"),
    ];
    for (body, path) in cases {
        let (status, resp) = call(&state, post(&body)).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
        assert_eq!(resp["violations"][0]["path"], path, "{resp}");
    }

    let mut g = graph();
    g["objects"][0]["category"] = json!("dragon");
    let (status, resp) = call(&state, post(&json!({ "graph": g }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(resp["violations"][0]["path"], "/graph/objects/0/category");

    let req = Request::post("/generate").body(Body::from("{ not json")).unwrap();
    assert_eq!(call(&state, req).await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn concurrent_identical_requests_agree() {
    let state = ServiceState::ready(pipeline());
    let body = json!({ "graph": graph(), "seed": 5, "noise_seeds": { "tree": 11 }, "title": "Night Garden", "variations": 2 });
    let (a, b) = tokio::join!(call(&state, post(&body)), call(&state, post(&body)));
    assert_eq!(a.0, StatusCode::OK);
    assert_eq!(b.0, StatusCode::OK);
    let ra: GenerationResponse = serde_json::from_value(a.1).unwrap();
    let rb: GenerationResponse = serde_json::from_value(b.1).unwrap();
    assert_eq!(ra.images.len(), 2);
    assert_eq!(ra.timing.per_image_ms.len(), 2);
    for (x, y) in ra.images.iter().zip(&rb.images) {
        assert_eq!(x.sha256, y.sha256);
        assert_eq!(x.data, y.data);
        assert_eq!(x.boxes.len(), 4);
        assert_eq!(x.boxes[3].category, "title");
    }
    assert_ne!(ra.images[0].sha256, ra.images[1].sha256);
}
