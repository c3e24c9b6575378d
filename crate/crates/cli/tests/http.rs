use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use strokegan::checkpoint::Checkpoint;
use strokegan::config::SkeganConfig;
use strokegan::model::{Model, TrainedModel};
use strokegan::skegan::{GeneratorConfig, SkeganModel};
use strokegan_cli::serve::{load_state, router, AppState};
use tower::ServiceExt;

fn tiny_model() -> TrainedModel {
    let cfg = SkeganConfig {
        generator: GeneratorConfig { hidden: 8, mixtures: 2, recurrent_dropout: 0.0 },
        disc_hidden: 4,
        ..SkeganConfig::toy()
    };
    TrainedModel { model: Model::Skegan(SkeganModel::new(cfg, 3).unwrap()), n_max: 10, offset_scale: 5.0, category: "box".into() }
}

struct Fixture {
    _dir: tempfile::TempDir,
    ckpt: PathBuf,
    static_dir: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("box.ckpt");
    Checkpoint::from_model(&tiny_model()).unwrap().save(&ckpt).unwrap();
    let static_dir = dir.path().join("www");
    std::fs::create_dir(&static_dir).unwrap();
    std::fs::write(static_dir.join("index.html"), "<html>demo</html>").unwrap();
    Fixture { _dir: dir, ckpt, static_dir }
}

fn app(f: &Fixture, seed: Option<u64>) -> (Router, Arc<AppState>) {
    let state = load_state(&[("box".to_string(), f.ckpt.clone())], seed).unwrap();
    (router(Arc::clone(&state), Some(f.static_dir.clone())), state)
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>, Option<String>) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header(header::CONTENT_TYPE, "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let ct = resp.headers().get(header::CONTENT_TYPE).map(|v| v.to_str().unwrap().to_string());
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes, ct)
}

async fn call_json(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (s, b, _) = call(app, method, uri, body).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

fn completion(strokes: Value, tau: f64) -> Value {
    json!({ "model": "box", "tau": tau, "strokes": strokes })
}

#[tokio::test]
async fn complete_returns_prefix_and_score() {
    let f = fixture();
    let (app, _) = app(&f, Some(11));
    let req = completion(json!([[5.0, 0.0, 0], [0.0, 5.0, 1], [-5.0, 0.0, 0], [0.0, -5.0, 0], [5.0, 5.0, 1]]), 0.25);
    let (s, v) = call_json(&app, Method::POST, "/v1/complete", Some(req.clone())).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let strokes = v["strokes"].as_array().unwrap();
    assert_eq!(strokes[0], json!([5.0, 0.0, 0]));
    assert_eq!(strokes[1], json!([0.0, 5.0, 1]));
    assert_eq!(strokes[4], json!([5.0, 5.0, 1]));
    assert!(strokes.len() >= 5 && strokes.len() <= 10);
    assert_eq!(v["prefix_len"], 5);
    assert!(v["ske_score"]["value"].is_number());
    assert!(v["generation_id"].is_string());

    let (_, again) = call_json(&app, Method::POST, "/v1/complete", Some(req)).await;
    assert_eq!(v, again);
    let (_, other) = call_json(&app, Method::POST, "/v1/complete", Some(completion(json!([[5.0, 0.0, 0], [0.0, 5.0, 1]]), 0.5))).await;
    assert_ne!(v["generation_id"], other["generation_id"]);
}

#[tokio::test]
async fn entropy_mode_varies_ids() {
    let f = fixture();
    let (app, _) = app(&f, None);
    let req = completion(json!([[1.0, 0.0, 0]]), 0.25);
    let (_, a) = call_json(&app, Method::POST, "/v1/complete", Some(req.clone())).await;
    let (_, b) = call_json(&app, Method::POST, "/v1/complete", Some(req)).await;
    assert_ne!(a["generation_id"], b["generation_id"]);
}

#[tokio::test]
async fn invalid_completions_are_rejected() {
    let f = fixture();
    let (app, _) = app(&f, Some(1));
    let one = json!([[1.0, 0.0, 0]]);
    let cases = [
        (completion(json!([]), 0.25), StatusCode::BAD_REQUEST),
        (completion(one.clone(), 0.0), StatusCode::BAD_REQUEST),
        (completion(one.clone(), 1.5), StatusCode::BAD_REQUEST),
        (completion(one.clone(), -0.2), StatusCode::BAD_REQUEST),
        (completion(json!([[1.0, 0.0]]), 0.25), StatusCode::BAD_REQUEST),
        (completion(Value::Array(vec![json!([1.0, 0.0, 0]); 11]), 0.25), StatusCode::BAD_REQUEST),
        (json!({ "tau": 0.3, "strokes": one }), StatusCode::BAD_REQUEST),
        (json!({ "model": "cat", "strokes": one }), StatusCode::NOT_FOUND),
    ];
    for (body, want) in cases {
        let (s, v) = call_json(&app, Method::POST, "/v1/complete", Some(body.clone())).await;
        assert_eq!(s, want, "{body} -> {v}");
        assert!(v["error"].is_string());
    }
    let (s, _, _) = call(&app, Method::POST, "/v1/complete", None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, v) = call_json(&app, Method::POST, "/v1/complete", Some(json!({ "model": "box", "strokes": one }))).await;
    assert_eq!(s, StatusCode::OK, "default tau: {v}");
    assert_eq!(v["tau"], 0.25);
}

#[tokio::test]
async fn sample_json_and_svg() {
    let f = fixture();
    let (app, _) = app(&f, Some(2));
    let (s, v) = call_json(&app, Method::GET, "/v1/sample?model=box&tau=0.4&count=3", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["sketches"].as_array().unwrap().len(), 3);
    assert_eq!(v["ske_scores"].as_array().unwrap().len(), 3);
    let (_, again) = call_json(&app, Method::GET, "/v1/sample?model=box&tau=0.4&count=3", None).await;
    assert_eq!(v, again);

    let (s, body, ct) = call(&app, Method::GET, "/v1/sample?model=box&count=2&format=svg", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(ct.as_deref(), Some("image/svg+xml"));
    assert!(String::from_utf8(body).unwrap().contains("<svg"));

    for bad in ["count=0", "count=65", "tau=2", "format=png"] {
        let (s, _) = call_json(&app, Method::GET, &format!("/v1/sample?model=box&{bad}"), None).await;
        assert_eq!(s, StatusCode::BAD_REQUEST, "{bad}");
    }
    let (s, _) = call_json(&app, Method::GET, "/v1/sample?model=nope", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn models_health_and_static() {
    let f = fixture();
    let (app, _) = app(&f, Some(2));
    let (s, v) = call_json(&app, Method::GET, "/v1/models", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v, json!([{ "name": "box", "status": "ready", "kind": "skegan", "n_max": 10, "category": "box" }]));
    let (s, v) = call_json(&app, Method::GET, "/v1/health", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["status"], "ok");
    assert_eq!(v["ready"], 1);
    assert_eq!(v["deterministic"], true);
    assert!(v["version"].is_string());
    let (s, body, _) = call(&app, Method::GET, "/index.html", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body, b"<html>demo</html>");
}

#[tokio::test]
async fn loading_models_answer_503_and_reload_swaps() {
    let f = fixture();
    let (app, state) = app(&f, Some(2));
    let previous = state.registry.mark_loading("box");
    let (s, _) = call_json(&app, Method::POST, "/v1/complete", Some(completion(json!([[1.0, 0.0, 0]]), 0.3))).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
    let (s, _) = call_json(&app, Method::GET, "/v1/sample?model=box", None).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
    let (_, v) = call_json(&app, Method::GET, "/v1/models", None).await;
    assert_eq!(v[0]["status"], "loading");
    assert!(previous.is_some());

    let (s, v) = call_json(&app, Method::POST, "/v1/models/box/reload", None).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["status"], "ready");
    let (s, _) = call_json(&app, Method::GET, "/v1/sample?model=box", None).await;
    assert_eq!(s, StatusCode::OK);

    let (s, _) = call_json(&app, Method::POST, "/v1/models/cat/reload", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    std::fs::write(&f.ckpt, b"garbage").unwrap();
    let (s, v) = call_json(&app, Method::POST, "/v1/models/box/reload", None).await;
    assert_eq!(s, StatusCode::INTERNAL_SERVER_ERROR);
    assert!(v["error"].as_str().unwrap().contains("loading"));
    let (s, _) = call_json(&app, Method::GET, "/v1/sample?model=box", None).await;
    assert_eq!(s, StatusCode::OK, "failed reload keeps the old model");
}
