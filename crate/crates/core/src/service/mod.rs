//! JSON-over-HTTP API under `/api/v1`.
//!
//! Blocking pipeline work runs on the blocking pool. Every POST honours an
//! `Idempotency-Key` header: a retry with the same key, path and body gets
//! the stored response without re-running the request.

pub mod views;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::body::{to_bytes, Body, Bytes};
use axum::extract::{Path, Request, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use log::info;
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Error;
use crate::feedback::FeedbackRecord;
use crate::imageio::rgb_from_tensor;
use crate::pipeline::{Pipeline, RetrainRequest};
use views::*;

pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";
const MAX_BODY: usize = 1 << 20;

struct Stored {
    body_hash: [u8; 32],
    status: StatusCode,
    content_type: Option<HeaderValue>,
    body: Bytes,
}

#[derive(Clone)]
pub struct AppState {
    pipeline: Arc<Pipeline>,
    replies: Arc<Mutex<HashMap<(String, String), Arc<Stored>>>>,
}

impl AppState {
    pub fn new(pipeline: Arc<Pipeline>) -> Self {
        Self {
            pipeline,
            replies: Arc::default(),
        }
    }
}

/// An error rendered as `{"error": {"code", "message", "field"?}}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>, field: Option<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                error: ErrorDetail {
                    code: code.into(),
                    message: message.into(),
                    field,
                },
            },
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, code, field) = match &e {
            Error::NotFound(_) => (StatusCode::NOT_FOUND, "not_found", None),
            Error::Conflict(_) => (StatusCode::CONFLICT, "conflict", None),
            Error::InsufficientData(_) => (StatusCode::CONFLICT, "insufficient_data", None),
            Error::Invalid { field, .. } => (StatusCode::UNPROCESSABLE_ENTITY, "invalid", Some(field.clone())),
            Error::NotTrained(_) => (StatusCode::SERVICE_UNAVAILABLE, "not_trained", None),
            Error::Unavailable(_) => (StatusCode::SERVICE_UNAVAILABLE, "unavailable", None),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal", None),
        };
        ApiError::new(status, code, e.to_string(), field)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_body", e.to_string(), None))
}

async fn blocking<T, F>(state: &AppState, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&Arc<Pipeline>) -> crate::Result<T> + Send + 'static,
{
    let p = state.pipeline.clone();
    tokio::task::spawn_blocking(move || f(&p))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string(), None))?
        .map_err(ApiError::from)
}

fn json<T: Serialize>(status: StatusCode, value: T) -> Response {
    (status, Json(value)).into_response()
}

fn require_admin(state: &AppState) -> ApiResult<()> {
    if state.pipeline.config().admin {
        Ok(())
    } else {
        Err(ApiError::new(StatusCode::FORBIDDEN, "forbidden", "admin endpoints are disabled", None))
    }
}

async fn health() -> Response {
    json(StatusCode::OK, serde_json::json!({ "status": "ok" }))
}

async fn infer(State(state): State<AppState>, body: Bytes) -> ApiResult<Response> {
    let req: InferRequest = parse(&body)?;
    let out = blocking(&state, move |p| {
        let user = match (req.user_id, req.handle) {
            (Some(id), _) => p.find_user(&id, None)?,
            (None, Some(handle)) => p.find_user(&handle, Some(req.platform.unwrap_or_default()))?,
            (None, None) => return Err(Error::invalid("user_id", "give user_id or handle and platform")),
        };
        p.infer(&user.id)
    })
    .await?;
    Ok(json(StatusCode::OK, InferResponse::new(out.0, out.1)))
}

fn round_view(p: &Pipeline, round_id: &str) -> crate::Result<RoundView> {
    let round = p.round(round_id)?;
    let rated: Vec<String> = p
        .store()
        .snapshot()
        .feedback_for(round_id)
        .into_iter()
        .map(|f| f.card_id)
        .collect();
    Ok(RoundView::new(&round, &rated))
}

async fn generate(State(state): State<AppState>, body: Bytes) -> ApiResult<Response> {
    let req: GenerateRequest = parse(&body)?;
    let view = blocking(&state, move |p| {
        let round = p.generate(&req.user_id, &req.industry, req.num_variants)?;
        Ok(RoundView::new(&round, &[]))
    })
    .await?;
    Ok(json(StatusCode::CREATED, view))
}

async fn get_round(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let view = blocking(&state, move |p| round_view(p, &id)).await?;
    Ok(json(StatusCode::OK, view))
}

async fn card_image(State(state): State<AppState>, Path((round_id, card_id)): Path<(String, String)>) -> ApiResult<Response> {
    let png = blocking(&state, move |p| {
        let round = p.round(&round_id)?;
        let card = round
            .card(&card_id)
            .ok_or_else(|| Error::NotFound(format!("card {card_id} in round {round_id}")))?;
        let img = rgb_from_tensor(&p.store().load_image(&card.image)?)?;
        let mut out = std::io::Cursor::new(Vec::new());
        img.write_to(&mut out, image::ImageFormat::Png)?;
        Ok(out.into_inner())
    })
    .await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

async fn repost() -> ApiResult<Response> {
    Err(ApiError::new(
        StatusCode::NOT_IMPLEMENTED,
        "not_implemented",
        "reposting to social timelines is not available",
        None,
    ))
}

async fn feedback(State(state): State<AppState>, body: Bytes) -> ApiResult<Response> {
    let req: FeedbackRequest = parse(&body)?;
    let ack = blocking(&state, move |p| {
        let timestamp = req.timestamp.unwrap_or_else(|| p.store().snapshot().clock);
        p.submit_feedback(FeedbackRecord {
            round_id: req.round_id.clone(),
            card_id: req.card_id.clone(),
            attractiveness: req.attractiveness,
            preference: req.preference,
            compliance: req.compliance,
            would_click: req.would_click,
            timestamp,
        })?;
        Ok(FeedbackAck {
            round_id: req.round_id,
            card_id: req.card_id,
            accepted: true,
        })
    })
    .await?;
    Ok(json(StatusCode::OK, ack))
}

async fn close_round(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let summary = blocking(&state, move |p| {
        let (s, m) = p.close_round(&id)?;
        Ok(CloseSummary::new(&s, m))
    })
    .await?;
    Ok(json(StatusCode::OK, summary))
}

async fn retrain(State(state): State<AppState>, body: Bytes) -> ApiResult<Response> {
    require_admin(&state)?;
    let req: RetrainRequest = parse(&body)?;
    let job = blocking(&state, move |p| p.start_retrain(vec![req])).await?;
    Ok(json(StatusCode::ACCEPTED, job))
}

async fn job(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    require_admin(&state)?;
    Ok(json(StatusCode::OK, state.pipeline.job(&id)?))
}

async fn tick(State(state): State<AppState>, body: Bytes) -> ApiResult<Response> {
    require_admin(&state)?;
    let req: TickRequest = parse(&body)?;
    let report = blocking(&state, move |p| p.tick(req.hours)).await?;
    Ok(json(StatusCode::OK, report))
}

fn body_hash(body: &[u8]) -> [u8; 32] {
    Sha256::digest(body).into()
}

/// Replays stored responses for repeated POSTs carrying the same key.
async fn idempotency(State(state): State<AppState>, req: Request, next: Next) -> Response {
    let key = match req.headers().get(IDEMPOTENCY_HEADER).and_then(|v| v.to_str().ok()) {
        Some(k) if req.method() == Method::POST && !k.is_empty() => k.to_string(),
        _ => return next.run(req).await,
    };
    let slot = (req.uri().path().to_string(), key);
    let (parts, body) = req.into_parts();
    let bytes = match to_bytes(body, MAX_BODY).await {
        Ok(b) => b,
        Err(e) => return ApiError::new(StatusCode::PAYLOAD_TOO_LARGE, "invalid_body", e.to_string(), None).into_response(),
    };
    let hash = body_hash(&bytes);
    let cached = state.replies.lock().unwrap_or_else(|p| p.into_inner()).get(&slot).cloned();
    if let Some(stored) = cached {
        if stored.body_hash != hash {
            return ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "idempotency_key_reused",
                "the idempotency key was used with a different body",
                None,
            )
            .into_response();
        }
        let mut resp = Response::new(Body::from(stored.body.clone()));
        *resp.status_mut() = stored.status;
        if let Some(ct) = &stored.content_type {
            resp.headers_mut().insert(header::CONTENT_TYPE, ct.clone());
        }
        return resp;
    }
    let resp = next.run(Request::from_parts(parts, Body::from(bytes))).await;
    if resp.status().is_server_error() {
        return resp;
    }
    let (parts, body) = resp.into_parts();
    let bytes = match to_bytes(body, usize::MAX).await {
        Ok(b) => b,
        Err(e) => return ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string(), None).into_response(),
    };
    state.replies.lock().unwrap_or_else(|p| p.into_inner()).insert(
        slot,
        Arc::new(Stored {
            body_hash: hash,
            status: parts.status,
            content_type: parts.headers.get(header::CONTENT_TYPE).cloned(),
            body: bytes.clone(),
        }),
    );
    Response::from_parts(parts, Body::from(bytes))
}

async fn fallback() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint", None)
}

pub fn router(pipeline: Arc<Pipeline>) -> Router {
    let state = AppState::new(pipeline);
    let api = Router::new()
        .route("/health", get(health))
        .route("/profiles/infer", post(infer))
        .route("/generate", post(generate))
        .route("/rounds/{id}", get(get_round))
        .route("/rounds/{id}/close", post(close_round))
        .route("/rounds/{id}/cards/{card}/image", get(card_image))
        .route("/rounds/{id}/cards/{card}/repost", post(repost))
        .route("/feedback", post(feedback))
        .route("/admin/retrain", post(retrain))
        .route("/admin/jobs/{id}", get(job))
        .route("/admin/tick", post(tick));
    Router::new()
        .nest(API_PREFIX, api)
        .fallback(fallback)
        .layer(middleware::from_fn_with_state(state.clone(), idempotency))
        .with_state(state)
}

pub async fn serve(pipeline: Arc<Pipeline>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(pipeline)).await
}
