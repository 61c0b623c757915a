//! HTTP front end for the two-stage parser.
//!
//! `POST /parse` takes `{"image_png_b64": ...}` or `{"strokes": [[[x, y], ...], ...]}`
//! (unit-square stroke polylines, rasterized server-side) and an optional
//! `?snap=true`. `GET /health` reports readiness and checkpoint ids.

use std::sync::{Arc, OnceLock};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use sketch2cad_core::dataset::{rasterize_strokes, RasterImage};
use sketch2cad_core::{Constraint, Primitive};
use sketch2cad_nets::Pipeline;
use thiserror::Error;

/// Request bodies above this size are rejected with 413.
pub const MAX_BODY_BYTES: usize = 1 << 20;

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("{0}")]
    BadRequest(String),
    #[error("model not loaded")]
    NotReady,
    #[error("inference failed: {0}")]
    Internal(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match self {
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::NotReady => StatusCode::SERVICE_UNAVAILABLE,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(serde_json::json!({ "error": self.to_string() }))).into_response()
    }
}

/// Shared, read-only after the pipeline is installed.
#[derive(Clone, Default)]
pub struct AppState {
    pipeline: Arc<OnceLock<Pipeline>>,
}

impl AppState {
    /// Not ready until [`AppState::install`] is called.
    pub fn loading() -> Self {
        Self::default()
    }

    pub fn ready(p: Pipeline) -> Self {
        let s = Self::default();
        s.install(p);
        s
    }

    /// First install wins; later calls are ignored (reload requires a restart).
    pub fn install(&self, p: Pipeline) {
        let _ = self.pipeline.set(p);
    }

    fn get(&self) -> Result<&Pipeline, ApiError> {
        self.pipeline.get().ok_or(ApiError::NotReady)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParseRequest {
    pub image_png_b64: Option<String>,
    pub strokes: Option<Vec<Vec<[f64; 2]>>>,
}

#[derive(Debug, Default, Deserialize)]
pub struct ParseQuery {
    #[serde(default)]
    pub snap: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseResponse {
    pub primitives: Vec<Primitive>,
    pub constraints: Vec<Constraint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapped_primitives: Option<Vec<Primitive>>,
    pub timing_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub prim_ckpt_id: Option<String>,
    pub cons_ckpt_id: Option<String>,
}

impl ParseRequest {
    pub fn image(&self) -> Result<RasterImage, ApiError> {
        let bad = |e: sketch2cad_core::Error| ApiError::BadRequest(e.to_string());
        match (&self.image_png_b64, &self.strokes) {
            (Some(b64), None) => RasterImage::from_png_base64(b64).map_err(bad),
            (None, Some(strokes)) => rasterize_strokes(strokes).map_err(bad),
            _ => Err(ApiError::BadRequest("exactly one of image_png_b64 or strokes is required".into())),
        }
    }
}

async fn health(State(state): State<AppState>) -> Response {
    match state.get() {
        Ok(p) => Json(Health {
            status: "ok".into(),
            prim_ckpt_id: p.prim_id().map(str::to_string),
            cons_ckpt_id: Some(p.cons_id().to_string()),
        })
        .into_response(),
        Err(_) => (
            StatusCode::SERVICE_UNAVAILABLE,
            Json(Health {
                status: "loading".into(),
                prim_ckpt_id: None,
                cons_ckpt_id: None,
            }),
        )
            .into_response(),
    }
}

async fn parse(
    State(state): State<AppState>,
    query: Result<Query<ParseQuery>, axum::extract::rejection::QueryRejection>,
    body: Bytes,
) -> Result<Json<ParseResponse>, ApiError> {
    let start = Instant::now();
    let Query(q) = query.map_err(|e| ApiError::BadRequest(e.body_text()))?;
    state.get()?;
    let req: ParseRequest = serde_json::from_slice(&body).map_err(|e| ApiError::BadRequest(format!("malformed body: {e}")))?;
    let img = req.image()?;
    let parsed = tokio::task::spawn_blocking(move || {
        let p = state.get()?;
        p.parse_image(&img, q.snap).map_err(|e| ApiError::Internal(e.to_string()))
    })
    .await
    .map_err(|e| ApiError::Internal(e.to_string()))??;
    Ok(Json(ParseResponse {
        primitives: parsed.primitives,
        constraints: parsed.constraints,
        snapped_primitives: parsed.snapped_primitives,
        timing_ms: start.elapsed().as_secs_f64() * 1e3,
    }))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/parse", post(parse))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .layer(tower_http::cors::CorsLayer::permissive())
        .with_state(state)
}
