//! `/v1/*`: serves any [`Backend`] over the model protocol. With a mock
//! backend this is a stand-in sidecar for integration tests and demos.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Serialize;

use croqs_core::backend::protocol::{
    CAPABILITIES_PATH, CAPTION_PATH, COMPLETE_PATH, EMBED_IMAGE_PATH, EMBED_TEXT_PATH,
    REQUEST_ID_HEADER,
};
use croqs_core::backend::{Backend, BackendError};

use crate::error::ApiError;

type Shared = Arc<dyn Backend>;

pub fn router(backend: Shared) -> Router {
    Router::new()
        .route(CAPABILITIES_PATH, get(capabilities))
        .route(EMBED_TEXT_PATH, post(embed_text))
        .route(EMBED_IMAGE_PATH, post(embed_image))
        .route(CAPTION_PATH, post(caption))
        .route(COMPLETE_PATH, post(complete))
        .with_state(backend)
}

fn backend_error(e: BackendError) -> ApiError {
    match e {
        BackendError::Rejected { status, message } => ApiError::new(
            StatusCode::from_u16(status).unwrap_or(StatusCode::BAD_REQUEST),
            "rejected",
            message,
        ),
        BackendError::Protocol(m) => ApiError::new(StatusCode::BAD_REQUEST, "protocol", m),
        e if e.is_unavailable() => ApiError::new(
            StatusCode::SERVICE_UNAVAILABLE,
            "unavailable",
            e.to_string(),
        ),
        e => ApiError::internal(e.to_string()),
    }
}

async fn call<Req, Resp>(
    backend: Shared,
    headers: HeaderMap,
    body: Bytes,
    f: fn(&dyn Backend, &Req) -> Result<Resp, BackendError>,
) -> Response
where
    Req: DeserializeOwned + Send + 'static,
    Resp: Serialize + Send + 'static,
{
    let id = headers
        .get(REQUEST_ID_HEADER)
        .and_then(|v| v.to_str().ok())
        .unwrap_or("-")
        .to_string();
    let req: Req = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return ApiError::bad_request(format!("invalid request: {e}")).into_response(),
    };
    let result = tokio::task::spawn_blocking(move || f(backend.as_ref(), &req)).await;
    let mut resp = match result {
        Ok(Ok(r)) => Json(r).into_response(),
        Ok(Err(e)) => backend_error(e).into_response(),
        Err(e) => ApiError::internal(e.to_string()).into_response(),
    };
    if let Ok(v) = id.parse() {
        resp.headers_mut().insert(REQUEST_ID_HEADER, v);
    }
    resp
}

async fn capabilities(State(b): State<Shared>) -> Response {
    match tokio::task::spawn_blocking(move || b.capabilities()).await {
        Ok(Ok(c)) => Json(c).into_response(),
        Ok(Err(e)) => backend_error(e).into_response(),
        Err(e) => ApiError::internal(e.to_string()).into_response(),
    }
}

async fn embed_text(State(b): State<Shared>, h: HeaderMap, body: Bytes) -> Response {
    call(b, h, body, |b, r| b.embed_text(r)).await
}

async fn embed_image(State(b): State<Shared>, h: HeaderMap, body: Bytes) -> Response {
    call(b, h, body, |b, r| b.embed_image(r)).await
}

async fn caption(State(b): State<Shared>, h: HeaderMap, body: Bytes) -> Response {
    call(b, h, body, |b, r| b.caption(r)).await
}

async fn complete(State(b): State<Shared>, h: HeaderMap, body: Bytes) -> Response {
    call(b, h, body, |b, r| b.complete(r)).await
}
