use std::collections::HashMap;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use super::{check_image, check_texts, EmbeddingProvider, ProviderDescriptor, ProviderError};
use crate::embedding::EmbeddingVector;

pub const STUB_MODEL: &str = "stub-sha256-chacha8";

/// Deterministic offline provider.
///
/// Inputs with a registered fixture map to that vector. Anything else is
/// hashed with SHA-256, the digest seeds a ChaCha8 generator, and the
/// generator draws a standard-normal vector that is scaled to unit length.
#[derive(Debug, Clone)]
pub struct StubProvider {
    descriptor: ProviderDescriptor,
    text_fixtures: HashMap<String, EmbeddingVector>,
    image_fixtures: HashMap<Vec<u8>, EmbeddingVector>,
}

impl StubProvider {
    pub fn new(dim: usize) -> Result<Self, ProviderError> {
        Ok(Self {
            descriptor: ProviderDescriptor::new("stub://local", STUB_MODEL, dim, Duration::from_secs(1))?,
            text_fixtures: HashMap::new(),
            image_fixtures: HashMap::new(),
        })
    }

    pub fn with_text(mut self, text: impl Into<String>, vector: EmbeddingVector) -> Result<Self, ProviderError> {
        self.check_fixture(&vector)?;
        self.text_fixtures.insert(text.into(), vector);
        Ok(self)
    }

    pub fn with_image(mut self, bytes: impl Into<Vec<u8>>, vector: EmbeddingVector) -> Result<Self, ProviderError> {
        self.check_fixture(&vector)?;
        self.image_fixtures.insert(bytes.into(), vector);
        Ok(self)
    }

    fn check_fixture(&self, v: &EmbeddingVector) -> Result<(), ProviderError> {
        if v.dim() != self.descriptor.dim {
            return Err(ProviderError::DimensionMismatch {
                expected: self.descriptor.dim,
                actual: v.dim(),
            });
        }
        Ok(())
    }

    /// The hash-derived vector for `domain`-tagged `bytes`.
    fn hashed(&self, domain: &[u8], bytes: &[u8]) -> EmbeddingVector {
        let mut h = Sha256::new();
        h.update(domain);
        h.update(bytes);
        let seed: [u8; 32] = h.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(seed);
        loop {
            let raw: Vec<f64> = (0..self.descriptor.dim)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                let unit: Vec<f64> = raw.iter().map(|x| x / norm).collect();
                if let Ok(v) = EmbeddingVector::from_f64(&unit) {
                    return v;
                }
            }
        }
    }
}

impl EmbeddingProvider for StubProvider {
    fn descriptor(&self) -> &ProviderDescriptor {
        &self.descriptor
    }

    fn embed_text(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        check_texts(texts)?;
        Ok(texts
            .iter()
            .map(|t| match self.text_fixtures.get(t) {
                Some(v) => v.clone(),
                None => self.hashed(b"text\0", t.as_bytes()),
            })
            .collect())
    }

    fn embed_image(&self, bytes: &[u8], media_type: &str) -> Result<EmbeddingVector, ProviderError> {
        check_image(bytes, media_type)?;
        Ok(match self.image_fixtures.get(bytes) {
            Some(v) => v.clone(),
            None => self.hashed(b"image\0", bytes),
        })
    }
}
