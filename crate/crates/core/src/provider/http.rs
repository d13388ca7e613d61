use std::thread;
use std::time::Duration;

use base64::Engine as _;
use reqwest::blocking::{Client, Response};
use serde::de::DeserializeOwned;
use serde::Serialize;

use super::wire::{
    ImageRequest, ImageResponse, InfoResponse, TextRequest, TextResponse, IMAGE_PATH, INFO_PATH,
    TEXT_PATH,
};
use super::{
    check_image, check_texts, validate_vector, EmbeddingProvider, ProviderDescriptor,
    ProviderError,
};
use crate::embedding::EmbeddingVector;

const MAX_RETRIES: u32 = 2;
const BACKOFF_BASE: Duration = Duration::from_millis(100);

/// Blocking client for the embedding service protocol.
///
/// Transport failures are retried up to twice with exponential backoff;
/// HTTP error statuses are returned immediately.
#[derive(Debug, Clone)]
pub struct HttpProvider {
    descriptor: ProviderDescriptor,
    client: Client,
}

impl HttpProvider {
    /// Connects to `endpoint` and discovers model id and dimension from
    /// `GET /v1/info`.
    pub fn connect(endpoint: &str, timeout: Duration) -> Result<Self, ProviderError> {
        let endpoint = endpoint.trim_end_matches('/').to_owned();
        let client = build_client(timeout)?;
        let info: InfoResponse = send_json(|| client.get(format!("{endpoint}{INFO_PATH}")))?;
        let descriptor = ProviderDescriptor::new(endpoint, info.model, info.dim, timeout)?;
        Ok(Self { descriptor, client })
    }

    /// Uses a known descriptor without contacting the service.
    pub fn with_descriptor(mut descriptor: ProviderDescriptor) -> Result<Self, ProviderError> {
        descriptor.endpoint = descriptor.endpoint.trim_end_matches('/').to_owned();
        let client = build_client(descriptor.timeout)?;
        Ok(Self { descriptor, client })
    }

    fn post<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: &B) -> Result<R, ProviderError> {
        let url = format!("{}{path}", self.descriptor.endpoint);
        send_json(|| self.client.post(&url).json(body))
    }

    fn check_dim(&self, dim: usize) -> Result<(), ProviderError> {
        if dim != self.descriptor.dim {
            return Err(ProviderError::DimensionMismatch {
                expected: self.descriptor.dim,
                actual: dim,
            });
        }
        Ok(())
    }
}

fn build_client(timeout: Duration) -> Result<Client, ProviderError> {
    if timeout.is_zero() {
        return Err(ProviderError::InvalidDescriptor("timeout must be positive".into()));
    }
    Client::builder()
        .timeout(timeout)
        .build()
        .map_err(|e| ProviderError::Transport(e.to_string()))
}

fn send_json<R: DeserializeOwned>(
    request: impl Fn() -> reqwest::blocking::RequestBuilder,
) -> Result<R, ProviderError> {
    let mut attempt = 0;
    let response: Response = loop {
        match request().send() {
            Ok(r) => break r,
            Err(e) if attempt < MAX_RETRIES => {
                tracing::warn!(attempt, error = %e, "embedding request failed, retrying");
                thread::sleep(BACKOFF_BASE * 2u32.pow(attempt));
                attempt += 1;
            }
            Err(e) => return Err(ProviderError::Transport(e.to_string())),
        }
    };
    let status = response.status();
    let body = response
        .bytes()
        .map_err(|e| ProviderError::Transport(e.to_string()))?;
    if !status.is_success() {
        return Err(ProviderError::ServiceError {
            status: status.as_u16(),
            body: String::from_utf8_lossy(&body).into_owned(),
        });
    }
    serde_json::from_slice(&body).map_err(|e| ProviderError::Protocol(e.to_string()))
}

impl EmbeddingProvider for HttpProvider {
    fn descriptor(&self) -> &ProviderDescriptor {
        &self.descriptor
    }

    fn embed_text(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        check_texts(texts)?;
        let resp: TextResponse = self.post(
            TEXT_PATH,
            &TextRequest {
                texts: texts.to_vec(),
            },
        )?;
        self.check_dim(resp.dim)?;
        if resp.embeddings.len() != texts.len() {
            return Err(ProviderError::Protocol(format!(
                "requested {} embeddings, received {}",
                texts.len(),
                resp.embeddings.len()
            )));
        }
        resp.embeddings
            .iter()
            .enumerate()
            .map(|(i, v)| validate_vector(v, self.descriptor.dim, i))
            .collect()
    }

    fn embed_image(&self, bytes: &[u8], media_type: &str) -> Result<EmbeddingVector, ProviderError> {
        check_image(bytes, media_type)?;
        let resp: ImageResponse = self.post(
            IMAGE_PATH,
            &ImageRequest {
                media_type: media_type.to_owned(),
                data_base64: base64::engine::general_purpose::STANDARD.encode(bytes),
            },
        )?;
        self.check_dim(resp.dim)?;
        validate_vector(&resp.embedding, self.descriptor.dim, 0)
    }
}
