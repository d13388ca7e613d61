//! HTTP front end.
//!
//! Every request runs against a snapshot taken when it starts, so a
//! concurrent ingest never changes the results of an in-flight query.
//! Ingest holds the write lock only while appending and persisting.

use std::future::Future;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::de::DeserializeOwned;
use serde::Serialize;

use promptscope_core::provider::import::{parse_jsonl, ImportOptions};
use promptscope_core::store::{Store, StoreError, StoreSnapshot};

use crate::api::{self, ApiError, ErrorBody, Service, API_VERSION};

const BODY_LIMIT: usize = 64 * 1024 * 1024;

pub struct AppState {
    pub service: Service,
    store: RwLock<Store>,
    /// Where accepted ingests are persisted.
    persist: Option<PathBuf>,
}

impl AppState {
    pub fn new(service: Service, store: Store, persist: Option<PathBuf>) -> Self {
        Self {
            service,
            store: RwLock::new(store),
            persist,
        }
    }

    pub fn snapshot(&self) -> StoreSnapshot {
        self.store.read().unwrap_or_else(|e| e.into_inner()).snapshot()
    }
}

#[derive(Serialize)]
struct Health {
    version: u32,
    status: &'static str,
}

#[derive(Serialize)]
struct IngestResponse {
    version: u32,
    accepted: usize,
    count: usize,
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/v1/store/info", get(store_info))
        .route("/v1/records", post(ingest))
        .route("/v1/records/{id}", get(record))
        .route("/v1/search", post(search))
        .route("/v1/search/by-image", post(search_by_image))
        .route("/v1/classify", post(classify))
        .route("/v1/evaluate", post(evaluate))
        .route("/v1/expand", post(expand))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(state)
}

pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Arc<AppState>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}

fn json_response(status: StatusCode, body: String) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

fn reply<T: Serialize>(result: Result<T, ApiError>) -> Response {
    match result {
        Ok(value) => json_response(StatusCode::OK, api::to_json(&value)),
        Err(e) => {
            let status = StatusCode::from_u16(e.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
            if status.is_server_error() {
                tracing::warn!(error = %e, "request failed");
            }
            json_response(status, api::to_json(&ErrorBody::from(&e)))
        }
    }
}

fn parse_body<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::BadRequest(format!("invalid request body: {e}")))
}

/// Runs embedding and scoring off the async workers.
async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(format!("worker failed: {e}")))?
}

async fn health() -> Response {
    reply(Ok(Health {
        version: API_VERSION,
        status: "ok",
    }))
}

async fn store_info(State(state): State<Arc<AppState>>) -> Response {
    let snap = state.snapshot();
    reply(Ok(api::store_info(&snap, state.service.store_path.as_deref())))
}

async fn record(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    reply(api::record(&state.snapshot(), &id))
}

async fn search(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    reply(
        blocking(move || {
            let req = parse_body(&body)?;
            state.service.search(&state.snapshot(), &req)
        })
        .await,
    )
}

async fn classify(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    reply(
        blocking(move || {
            let req = parse_body(&body)?;
            state.service.classify(&state.snapshot(), &req)
        })
        .await,
    )
}

async fn evaluate(body: Bytes) -> Response {
    reply(parse_body(&body).and_then(|req| api::evaluate(&req)))
}

async fn expand(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    reply(parse_body(&body).and_then(|req| state.service.expand(&req)))
}

/// Multipart fields: `image` (file part with a content type), optional `k`
/// and any number of `negative_text`.
async fn search_by_image(State(state): State<Arc<AppState>>, multipart: Multipart) -> Response {
    let form = match read_image_form(multipart).await {
        Ok(form) => form,
        Err(e) => return reply::<()>(Err(e)),
    };
    reply(
        blocking(move || {
            let (bytes, media_type) = form
                .image
                .ok_or_else(|| ApiError::BadRequest("missing multipart field \"image\"".into()))?;
            state
                .service
                .search_by_image(&state.snapshot(), &bytes, &media_type, form.k, &form.negatives)
        })
        .await,
    )
}

#[derive(Default)]
struct ImageForm {
    image: Option<(Bytes, String)>,
    k: Option<usize>,
    negatives: Vec<String>,
}

async fn read_image_form(mut multipart: Multipart) -> Result<ImageForm, ApiError> {
    let bad = |e: axum::extract::multipart::MultipartError| ApiError::BadRequest(e.to_string());
    let mut form = ImageForm::default();
    while let Some(field) = multipart.next_field().await.map_err(bad)? {
        match field.name().unwrap_or_default() {
            "image" => {
                let media_type = field
                    .content_type()
                    .unwrap_or("application/octet-stream")
                    .to_owned();
                form.image = Some((field.bytes().await.map_err(bad)?, media_type));
            }
            "k" => {
                let text = field.text().await.map_err(bad)?;
                let k = text
                    .trim()
                    .parse()
                    .map_err(|_| ApiError::BadRequest(format!("invalid k {text:?}")))?;
                form.k = Some(k);
            }
            "negative_text" => form.negatives.push(field.text().await.map_err(bad)?),
            other => return Err(ApiError::BadRequest(format!("unexpected multipart field {other:?}"))),
        }
    }
    Ok(form)
}

/// Appends a JSON-lines batch. The batch is accepted whole or not at all.
async fn ingest(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    reply(
        blocking(move || {
            let text = std::str::from_utf8(&body)
                .map_err(|_| ApiError::BadRequest("body is not UTF-8".into()))?;
            let mut store = state.store.write().unwrap_or_else(|e| e.into_inner());
            let options = ImportOptions {
                strict: true,
                dim: Some(store.dim()),
                ids_path: None,
            };
            let report = parse_jsonl(text, &options).map_err(|e| ApiError::BadRequest(e.to_string()))?;
            let mut next = store.clone();
            let accepted = next.ingest(report.records).map_err(|e| match e {
                StoreError::Io(_) => ApiError::Internal(e.to_string()),
                other => ApiError::BadRequest(other.to_string()),
            })?;
            if let Some(path) = &state.persist {
                next.save(path).map_err(|e| ApiError::Internal(e.to_string()))?;
            }
            *store = next;
            Ok(IngestResponse {
                version: API_VERSION,
                accepted,
                count: store.len(),
            })
        })
        .await,
    )
}
