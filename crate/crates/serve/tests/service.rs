use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use serde_json::{json, Value};
use sketch2cad_core::dataset::{generate_sketch, rasterize, GenConfig};
use sketch2cad_nets::{ConstraintModelConfig, ConstraintNet, Pipeline, PrimitiveModelConfig, PrimitiveNet};
use sketch2cad_serve::{router, AppState, Health, ParseResponse, MAX_BODY_BYTES};
use tower::ServiceExt;

fn pipeline() -> Pipeline {
    let p = PrimitiveModelConfig {
        d_model: 32,
        encoder_layers: 1,
        decoder_layers: 1,
        heads: 4,
        ff_dim: 64,
        ..Default::default()
    };
    let c = ConstraintModelConfig {
        d_model: 32,
        encoder_layers: 1,
        decoder_layers: 1,
        heads: 4,
        ff_dim: 64,
        ..Default::default()
    };
    Pipeline::new(PrimitiveNet::new(&p).unwrap(), ConstraintNet::new(&c).unwrap())
}

fn app() -> Router {
    router(AppState::ready(pipeline()))
}

fn image_b64(seed: u64) -> String {
    let s = generate_sketch(&GenConfig { seed, ..Default::default() }).unwrap();
    rasterize(&s.primitives, None, &mut rand::rng()).to_png_base64()
}

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Value) {
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = axum::body::to_bytes(res.into_body(), usize::MAX).await.unwrap();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn post(uri: &str, body: impl Into<Body>) -> Request<Body> {
    Request::post(uri).header("content-type", "application/json").body(body.into()).unwrap()
}

#[tokio::test]
async fn health_reports_checkpoint_ids() {
    let p = pipeline();
    let (pid, cid) = (p.prim_id().unwrap().to_string(), p.cons_id().to_string());
    let app = router(AppState::ready(p));
    let (status, v) = call(&app, Request::get("/health").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    let h: Health = serde_json::from_value(v).unwrap();
    assert_eq!(h.status, "ok");
    assert_eq!(h.prim_ckpt_id.as_deref(), Some(pid.as_str()));
    assert_eq!(h.cons_ckpt_id.as_deref(), Some(cid.as_str()));
}

#[tokio::test]
async fn not_ready_until_installed() {
    let state = AppState::loading();
    let app = router(state.clone());
    let (status, _) = call(&app, Request::get("/health").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    let body = json!({ "image_png_b64": image_b64(1) }).to_string();
    assert_eq!(call(&app, post("/parse", body.clone())).await.0, StatusCode::SERVICE_UNAVAILABLE);
    state.install(pipeline());
    assert_eq!(call(&app, Request::get("/health").body(Body::empty()).unwrap()).await.0, StatusCode::OK);
    assert_eq!(call(&app, post("/parse", body)).await.0, StatusCode::OK);
}

#[tokio::test]
async fn parse_image_and_snap_flag() {
    let app = app();
    let body = json!({ "image_png_b64": image_b64(2) }).to_string();
    let (status, v) = call(&app, post("/parse", body.clone())).await;
    assert_eq!(status, StatusCode::OK);
    let r: ParseResponse = serde_json::from_value(v.clone()).unwrap();
    assert!(v.get("snapped_primitives").is_none());
    assert!(r.timing_ms >= 0.0);
    for c in &r.constraints {
        assert!(c.refs.iter().all(|&i| i < r.primitives.len()));
    }
    let (status, v) = call(&app, post("/parse?snap=true", body)).await;
    assert_eq!(status, StatusCode::OK);
    let snapped: ParseResponse = serde_json::from_value(v).unwrap();
    assert_eq!(snapped.primitives, r.primitives);
    assert_eq!(snapped.snapped_primitives.map(|s| s.len()), Some(r.primitives.len()));
}

#[tokio::test]
async fn parse_strokes() {
    let app = app();
    let body = json!({ "strokes": [[[0.1, 0.1], [0.9, 0.1]], [[0.5, 0.2], [0.5, 0.8], [0.6, 0.9]]] }).to_string();
    let (status, _) = call(&app, post("/parse", body)).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn bad_requests_are_400() {
    let app = app();
    let small = {
        let mut buf = std::io::Cursor::new(Vec::new());
        image::GrayImage::new(64, 64).write_to(&mut buf, image::ImageFormat::Png).unwrap();
        use base64::Engine;
        base64::engine::general_purpose::STANDARD.encode(buf.into_inner())
    };
    let cases = [
        "not json".to_string(),
        "{}".to_string(),
        json!({ "strokes": [] }).to_string(),
        json!({ "strokes": [[]] }).to_string(),
        json!({ "image_png_b64": "!!!" }).to_string(),
        json!({ "image_png_b64": small }).to_string(),
        json!({ "image_png_b64": image_b64(3), "strokes": [[[0.1, 0.1]]] }).to_string(),
        json!({ "image": "x" }).to_string(),
    ];
    for body in cases {
        let (status, v) = call(&app, post("/parse", body.clone())).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body:.80}");
        assert!(v["error"].is_string());
    }
    let (status, _) = call(&app, post("/parse?snap=maybe", json!({ "image_png_b64": image_b64(3) }).to_string())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn oversize_payload_is_413() {
    let app = app();
    let pad = "a".repeat(MAX_BODY_BYTES + 1);
    let body = format!(r#"{{"image_png_b64": "{pad}"}}"#);
    assert_eq!(call(&app, post("/parse", body)).await.0, StatusCode::PAYLOAD_TOO_LARGE);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn parallel_identical_requests_agree() {
    let app = app();
    let body = json!({ "image_png_b64": image_b64(4) }).to_string();
    let tasks: Vec<_> = (0..32)
        .map(|_| {
            let (app, body) = (app.clone(), body.clone());
            tokio::spawn(async move { call(&app, post("/parse?snap=true", body)).await })
        })
        .collect();
    let mut out = Vec::new();
    for t in tasks {
        let (status, mut v) = t.await.unwrap();
        assert_eq!(status, StatusCode::OK);
        v.as_object_mut().unwrap().remove("timing_ms");
        out.push(v);
    }
    assert!(out.iter().all(|v| v == &out[0]));
}
