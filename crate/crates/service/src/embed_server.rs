//! Serves any [`EmbeddingProvider`] over the embedding wire protocol.
//!
//! Backed by a [`StubProvider`](promptscope_core::provider::StubProvider)
//! this gives a deterministic local encoder for tests and demos.

use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;

use promptscope_core::embedding::EmbeddingVector;
use promptscope_core::provider::wire::{
    ImageRequest, ImageResponse, InfoResponse, TextRequest, TextResponse, IMAGE_PATH, INFO_PATH, TEXT_PATH,
};
use promptscope_core::provider::{EmbeddingProvider, ProviderError};

type Shared = Arc<dyn EmbeddingProvider>;

pub fn embed_router(provider: Shared) -> Router {
    Router::new()
        .route(INFO_PATH, get(info))
        .route(TEXT_PATH, post(text))
        .route(IMAGE_PATH, post(image))
        .layer(axum::extract::DefaultBodyLimit::max(64 * 1024 * 1024))
        .with_state(provider)
}

fn widen(v: &EmbeddingVector) -> Vec<f64> {
    v.values().iter().map(|&x| f64::from(x)).collect()
}

fn failure(e: ProviderError) -> Response {
    let status = match e {
        ProviderError::EmptyBatch
        | ProviderError::EmptyText(_)
        | ProviderError::EmptyPayload
        | ProviderError::UnsupportedMediaType(_) => StatusCode::BAD_REQUEST,
        _ => StatusCode::BAD_GATEWAY,
    };
    (status, e.to_string()).into_response()
}

async fn info(State(p): State<Shared>) -> Json<InfoResponse> {
    Json(InfoResponse {
        model: p.descriptor().model_id.clone(),
        dim: p.dim(),
    })
}

async fn text(State(p): State<Shared>, Json(req): Json<TextRequest>) -> Response {
    let result = tokio::task::spawn_blocking(move || {
        let vectors = p.embed_text(&req.texts)?;
        Ok(TextResponse {
            model: p.descriptor().model_id.clone(),
            dim: p.dim(),
            embeddings: vectors.iter().map(widen).collect(),
        })
    })
    .await;
    match result {
        Ok(Ok(body)) => Json(body).into_response(),
        Ok(Err(e)) => failure(e),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

async fn image(State(p): State<Shared>, Json(req): Json<ImageRequest>) -> Response {
    let Ok(bytes) = base64::engine::general_purpose::STANDARD.decode(&req.data_base64) else {
        return (StatusCode::BAD_REQUEST, "data_base64 is not valid base64").into_response();
    };
    let result = tokio::task::spawn_blocking(move || {
        let v = p.embed_image(&bytes, &req.media_type)?;
        Ok(ImageResponse {
            model: p.descriptor().model_id.clone(),
            dim: p.dim(),
            embedding: widen(&v),
        })
    })
    .await;
    match result {
        Ok(Ok(body)) => Json(body).into_response(),
        Ok(Err(e)) => failure(e),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}
