//! Acquisition of embeddings from an external encoder.
//!
//! The encoder itself runs out of process behind a small JSON protocol (see
//! [`wire`]). [`HttpProvider`] speaks that protocol; [`StubProvider`] is a
//! deterministic in-process stand-in used for tests and offline runs. Bulk
//! loading of precomputed vectors lives in [`import`].

mod http;
pub mod import;
mod stub;
pub mod wire;

use std::time::Duration;

use thiserror::Error;

use crate::embedding::{EmbeddingError, EmbeddingVector};

pub use http::HttpProvider;
pub use stub::StubProvider;

/// Environment variable overriding the embedding service endpoint.
pub const ENDPOINT_ENV: &str = "PROMPTSCOPE_EMBED_ENDPOINT";

pub const DEFAULT_TIMEOUT: Duration = Duration::from_millis(30_000);

/// Media types accepted by [`EmbeddingProvider::embed_image`].
pub const IMAGE_MEDIA_TYPES: &[&str] = &[
    "image/jpeg",
    "image/png",
    "image/webp",
    "image/gif",
    "image/bmp",
    "image/tiff",
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("text at position {0} is empty")]
    EmptyText(usize),
    #[error("empty image payload")]
    EmptyPayload,
    #[error("unsupported media type {0:?}")]
    UnsupportedMediaType(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("embedding service returned {status}: {body}")]
    ServiceError { status: u16, body: String },
    #[error("embedding service returned dimension {actual}, expected {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid vector at position {index}: {reason}")]
    InvalidVector { index: usize, reason: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("invalid provider descriptor: {0}")]
    InvalidDescriptor(String),
}

/// Identity and shape of an embedding source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProviderDescriptor {
    pub endpoint: String,
    pub model_id: String,
    pub dim: usize,
    pub timeout: Duration,
}

impl ProviderDescriptor {
    pub fn new(
        endpoint: impl Into<String>,
        model_id: impl Into<String>,
        dim: usize,
        timeout: Duration,
    ) -> Result<Self, ProviderError> {
        let d = Self {
            endpoint: endpoint.into(),
            model_id: model_id.into(),
            dim,
            timeout,
        };
        if d.dim == 0 {
            return Err(ProviderError::InvalidDescriptor("dim must be at least 1".into()));
        }
        if d.endpoint.is_empty() {
            return Err(ProviderError::InvalidDescriptor("empty endpoint".into()));
        }
        if d.timeout.is_zero() {
            return Err(ProviderError::InvalidDescriptor("timeout must be positive".into()));
        }
        Ok(d)
    }

    /// Human-readable identity, e.g. for report provenance.
    pub fn identity(&self) -> String {
        format!("{}@{} (dim {})", self.model_id, self.endpoint, self.dim)
    }
}

/// A source of text and image embeddings living in one vector space.
pub trait EmbeddingProvider: Send + Sync {
    fn descriptor(&self) -> &ProviderDescriptor;

    /// One vector per text, in input order.
    fn embed_text(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError>;

    fn embed_image(&self, bytes: &[u8], media_type: &str) -> Result<EmbeddingVector, ProviderError>;

    fn dim(&self) -> usize {
        self.descriptor().dim
    }
}

pub(crate) fn check_texts(texts: &[String]) -> Result<(), ProviderError> {
    if texts.is_empty() {
        return Err(ProviderError::EmptyBatch);
    }
    match texts.iter().position(|t| t.trim().is_empty()) {
        Some(i) => Err(ProviderError::EmptyText(i)),
        None => Ok(()),
    }
}

pub(crate) fn check_image(bytes: &[u8], media_type: &str) -> Result<(), ProviderError> {
    if bytes.is_empty() {
        return Err(ProviderError::EmptyPayload);
    }
    if !IMAGE_MEDIA_TYPES.contains(&media_type) {
        return Err(ProviderError::UnsupportedMediaType(media_type.to_owned()));
    }
    Ok(())
}

/// Converts raw service output into a validated vector of `dim` components.
pub(crate) fn validate_vector(
    values: &[f64],
    dim: usize,
    index: usize,
) -> Result<EmbeddingVector, ProviderError> {
    if values.len() != dim {
        return Err(ProviderError::DimensionMismatch {
            expected: dim,
            actual: values.len(),
        });
    }
    EmbeddingVector::from_f64(values).map_err(|e| ProviderError::InvalidVector {
        index,
        reason: match e {
            EmbeddingError::ZeroVector => "zero vector".into(),
            EmbeddingError::NonFinite(i) => format!("non-finite component {i}"),
            other => other.to_string(),
        },
    })
}
