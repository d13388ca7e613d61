//! Dimension-checked vector arithmetic.
//!
//! Vectors are stored as `f32` but every reduction (dot products, norms,
//! means) is accumulated in `f64`. The L2 norm is computed once at
//! construction and cached, so a similarity evaluation against a stored
//! vector costs a single dot product.

use std::fmt;
use std::ops::Sub;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default embedding width of common CLIP text/image heads.
pub const DEFAULT_DIM: usize = 512;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EmbeddingError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("zero vector: cosine similarity is undefined for zero norm")]
    ZeroVector,
    #[error("empty input")]
    EmptyInput,
    #[error("non-finite component at index {0}")]
    NonFinite(usize),
}

/// A fixed-dimension embedding with its cached L2 norm.
///
/// Construction rejects empty input, non-finite components and the zero
/// vector, so every `EmbeddingVector` is a valid argument to
/// [`cosine_similarity`].
#[derive(Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Box<[f32]>,
    norm: f64,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self, EmbeddingError> {
        if values.is_empty() {
            return Err(EmbeddingError::EmptyInput);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite(i));
        }
        let norm = l2_norm(&values);
        if norm == 0.0 {
            return Err(EmbeddingError::ZeroVector);
        }
        Ok(Self {
            values: values.into_boxed_slice(),
            norm,
        })
    }

    /// Builds a vector from `f64` components, rounding each to `f32`.
    pub fn from_f64(values: &[f64]) -> Result<Self, EmbeddingError> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite(i));
        }
        Self::new(values.iter().map(|&v| v as f32).collect())
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn norm(&self) -> f64 {
        self.norm
    }

    /// Multiplies every component by `factor`; the norm is recomputed.
    pub fn scaled(&self, factor: f32) -> Result<Self, EmbeddingError> {
        Self::new(self.values.iter().map(|v| v * factor).collect())
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values.into_vec()
    }
}

impl fmt::Debug for EmbeddingVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EmbeddingVector")
            .field("dim", &self.dim())
            .field("norm", &self.norm)
            .field("values", &self.values)
            .finish()
    }
}

impl TryFrom<Vec<f32>> for EmbeddingVector {
    type Error = EmbeddingError;

    fn try_from(values: Vec<f32>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl Serialize for EmbeddingVector {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.values.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for EmbeddingVector {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let values = Vec::<f32>::deserialize(deserializer)?;
        Self::new(values).map_err(serde::de::Error::custom)
    }
}

/// A similarity value. Pure cosine scores lie in `[-1, 1]`; scores combined
/// from a positive and a negative side lie in `[-2, 2]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimilarityScore(pub f64);

impl SimilarityScore {
    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

impl From<SimilarityScore> for f64 {
    fn from(score: SimilarityScore) -> f64 {
        score.0
    }
}

impl Sub for SimilarityScore {
    type Output = SimilarityScore;

    fn sub(self, rhs: Self) -> Self::Output {
        SimilarityScore(self.0 - rhs.0)
    }
}

impl fmt::Display for SimilarityScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

#[inline]
fn l2_norm(values: &[f32]) -> f64 {
    let mut sum = 0.0f64;
    for &v in values {
        let v = f64::from(v);
        sum += v * v;
    }
    sum.sqrt()
}

/// Dot product accumulated in `f64` in ascending index order.
#[inline]
pub fn dot(x: &[f32], y: &[f32]) -> f64 {
    let mut sum = 0.0f64;
    for (&a, &b) in x.iter().zip(y) {
        sum += f64::from(a) * f64::from(b);
    }
    sum
}

/// Cosine similarity `Σ xᵢyᵢ / (‖x‖·‖y‖)`.
///
/// The result is symmetric in its arguments bit for bit: each product
/// `xᵢ·yᵢ` is exact in `f64` and the accumulation order is fixed.
pub fn cosine_similarity(
    x: &EmbeddingVector,
    y: &EmbeddingVector,
) -> Result<SimilarityScore, EmbeddingError> {
    if x.dim() != y.dim() {
        return Err(EmbeddingError::DimensionMismatch(x.dim(), y.dim()));
    }
    Ok(cosine_unchecked(x, y))
}

/// [`cosine_similarity`] without the dimension check. Callers must have
/// verified that both vectors share a dimension.
#[inline]
pub(crate) fn cosine_unchecked(x: &EmbeddingVector, y: &EmbeddingVector) -> SimilarityScore {
    debug_assert_eq!(x.dim(), y.dim());
    SimilarityScore(dot(&x.values, &y.values) / (x.norm * y.norm))
}

/// Final score of a record under one positive and one negative prompt.
#[inline]
pub fn combine_scores(positive: SimilarityScore, negative: SimilarityScore) -> SimilarityScore {
    positive - negative
}

/// Componentwise arithmetic mean of `vectors`.
pub fn mean_embedding(vectors: &[EmbeddingVector]) -> Result<EmbeddingVector, EmbeddingError> {
    let first = vectors.first().ok_or(EmbeddingError::EmptyInput)?;
    let dim = first.dim();
    let mut acc = vec![0.0f64; dim];
    for v in vectors {
        if v.dim() != dim {
            return Err(EmbeddingError::DimensionMismatch(dim, v.dim()));
        }
        for (a, &x) in acc.iter_mut().zip(v.values()) {
            *a += f64::from(x);
        }
    }
    let n = vectors.len() as f64;
    EmbeddingVector::new(acc.into_iter().map(|a| (a / n) as f32).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(values: &[f32]) -> EmbeddingVector {
        EmbeddingVector::new(values.to_vec()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        let cos = |a: &[f32], b: &[f32]| cosine_similarity(&v(a), &v(b)).unwrap().value();
        assert_eq!(cos(&[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]), 1.0);
        assert_eq!(cos(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        assert!((cos(&[1.0, 1.0], &[1.0, 0.0]) - 0.7071067811865475).abs() < 1e-15);
        assert_eq!(cos(&[1.0, 2.0, 3.0], &[-1.0, -2.0, -3.0]), -1.0);
    }

    #[test]
    fn cosine_rejects_mismatched_dims() {
        assert_eq!(
            cosine_similarity(&v(&[1.0, 0.0]), &v(&[1.0, 0.0, 0.0])),
            Err(EmbeddingError::DimensionMismatch(2, 3))
        );
    }

    #[test]
    fn construction_validates() {
        assert_eq!(EmbeddingVector::new(vec![]), Err(EmbeddingError::EmptyInput));
        assert_eq!(
            EmbeddingVector::new(vec![0.0, 0.0]),
            Err(EmbeddingError::ZeroVector)
        );
        assert_eq!(
            EmbeddingVector::new(vec![1.0, f32::NAN]),
            Err(EmbeddingError::NonFinite(1))
        );
        assert_eq!(
            EmbeddingVector::new(vec![f32::INFINITY]),
            Err(EmbeddingError::NonFinite(0))
        );
        let x = v(&[3.0, 4.0]);
        assert_eq!(x.norm(), 5.0);
        assert_eq!(x.dim(), 2);
    }

    #[test]
    fn combine_examples() {
        let s = |x| SimilarityScore(x);
        assert!((combine_scores(s(0.5), s(0.2)).value() - 0.3).abs() < 1e-15);
        assert_eq!(combine_scores(s(0.37), s(0.37)).value(), 0.0);
        assert_eq!(combine_scores(s(0.9), s(-0.9)).value(), 1.8);
    }

    #[test]
    fn mean_examples() {
        let m = mean_embedding(&[v(&[1.0, 0.0]), v(&[0.0, 1.0])]).unwrap();
        assert_eq!(m.values(), &[0.5, 0.5]);
        let single = v(&[0.25, -3.5, 7.0]);
        assert_eq!(mean_embedding(std::slice::from_ref(&single)).unwrap(), single);
        assert_eq!(
            mean_embedding(&[v(&[1.0, 0.0]), v(&[-1.0, 0.0])]),
            Err(EmbeddingError::ZeroVector)
        );
        assert_eq!(mean_embedding(&[]), Err(EmbeddingError::EmptyInput));
        assert_eq!(
            mean_embedding(&[v(&[1.0, 0.0]), v(&[1.0])]),
            Err(EmbeddingError::DimensionMismatch(2, 1))
        );
    }

    fn nonzero_pair() -> impl Strategy<Value = (Vec<f32>, Vec<f32>)> {
        (1usize..48).prop_flat_map(|d| {
            (
                prop::collection::vec(-100.0f32..100.0, d),
                prop::collection::vec(-100.0f32..100.0, d),
            )
        })
        .prop_filter("nonzero", |(a, b)| {
            a.iter().any(|&x| x != 0.0) && b.iter().any(|&x| x != 0.0)
        })
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded((a, b) in nonzero_pair()) {
            let (x, y) = (v(&a), v(&b));
            let xy = cosine_similarity(&x, &y).unwrap().value();
            let yx = cosine_similarity(&y, &x).unwrap().value();
            prop_assert_eq!(xy.to_bits(), yx.to_bits());
            prop_assert!(xy.abs() <= 1.0 + 1e-9);
            let xx = cosine_similarity(&x, &x).unwrap().value();
            prop_assert!((xx - 1.0).abs() <= 1e-9);
        }

        #[test]
        fn scale_invariant((a, b) in nonzero_pair(), exp in -10i32..10, factor in 1e-3f32..1e3) {
            let (x, y) = (v(&a), v(&b));
            let base = cosine_similarity(&x, &y).unwrap().value();
            // Power-of-two scaling is exact in f32, so the score must not move.
            let exact = x.scaled(2f32.powi(exp)).unwrap();
            let after = cosine_similarity(&exact, &y).unwrap().value();
            prop_assert!((base - after).abs() <= 1e-9);
            // Other factors round each f32 component once.
            let rounded = x.scaled(factor).unwrap();
            let after = cosine_similarity(&rounded, &y).unwrap().value();
            prop_assert!((base - after).abs() <= 1e-6);
        }

        #[test]
        fn combine_antisymmetric(a in -1.0f64..=1.0, b in -1.0f64..=1.0) {
            let ab = combine_scores(SimilarityScore(a), SimilarityScore(b)).value();
            let ba = combine_scores(SimilarityScore(b), SimilarityScore(a)).value();
            prop_assert_eq!(ab, -ba);
            prop_assert!((-2.0..=2.0).contains(&ab));
        }
    }
}
