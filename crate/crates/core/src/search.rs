//! Exhaustive cosine scoring and ranked retrieval over a snapshot.
//!
//! Every record is scored independently, so the score of a record does not
//! depend on how the scan is partitioned. Top-k selection keeps a bounded
//! worst-out heap per fixed-size chunk and merges the chunk winners under a
//! total order (score descending, insertion index ascending). The chunk size
//! does not depend on the thread count, and the merge order is total, so the
//! output is identical for any degree of parallelism.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::num::NonZeroUsize;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{
    combine_scores, cosine_unchecked, mean_embedding, EmbeddingError, EmbeddingVector,
    SimilarityScore,
};
use crate::store::{ImageRecord, StoreSnapshot};

const CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SearchError {
    #[error("query has neither positive nor negative prompts")]
    EmptyQuery,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("prompt dimension {actual} does not match snapshot dimension {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

/// How several prompts on one side of a query are reduced to one score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Cosine against the mean of the prompt embeddings.
    #[default]
    MeanEmbedding,
    /// Highest cosine over the individual prompts.
    MaxScore,
}

impl Aggregation {
    pub fn as_str(self) -> &'static str {
        match self {
            Aggregation::MeanEmbedding => "mean_embedding",
            Aggregation::MaxScore => "max_score",
        }
    }
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Aggregation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" | "mean_embedding" => Ok(Aggregation::MeanEmbedding),
            "max" | "max_score" => Ok(Aggregation::MaxScore),
            other => Err(format!(
                "unknown aggregation {other:?} (expected mean_embedding or max_score)"
            )),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PromptQuery {
    pub positives: Vec<EmbeddingVector>,
    pub negatives: Vec<EmbeddingVector>,
    pub k: usize,
    pub aggregation: Aggregation,
}

impl PromptQuery {
    pub fn new(
        positives: Vec<EmbeddingVector>,
        negatives: Vec<EmbeddingVector>,
        k: usize,
        aggregation: Aggregation,
    ) -> Result<Self, SearchError> {
        let q = Self {
            positives,
            negatives,
            k,
            aggregation,
        };
        q.validate()?;
        Ok(q)
    }

    pub fn positive(prompt: EmbeddingVector, k: usize) -> Self {
        Self {
            positives: vec![prompt],
            negatives: Vec::new(),
            k,
            aggregation: Aggregation::default(),
        }
    }

    pub fn negative(prompt: EmbeddingVector, k: usize) -> Self {
        Self {
            positives: Vec::new(),
            negatives: vec![prompt],
            k,
            aggregation: Aggregation::default(),
        }
    }

    fn validate(&self) -> Result<(), SearchError> {
        if self.positives.is_empty() && self.negatives.is_empty() {
            return Err(SearchError::EmptyQuery);
        }
        if self.k == 0 {
            return Err(SearchError::InvalidK);
        }
        Ok(())
    }
}

/// The per-side scores a combined score was computed from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScoreBreakdown {
    pub positive: SimilarityScore,
    pub negative: SimilarityScore,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredResult {
    pub id: String,
    /// Insertion index of the record in the snapshot.
    pub index: usize,
    pub score: SimilarityScore,
    /// 1-based.
    pub rank: usize,
    pub breakdown: Option<ScoreBreakdown>,
}

/// Scores aligned with a snapshot's insertion order.
#[derive(Debug, Clone)]
pub struct ScoreMap<'a> {
    snapshot: &'a StoreSnapshot,
    scores: Vec<SimilarityScore>,
}

impl<'a> ScoreMap<'a> {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<SimilarityScore> {
        self.snapshot.position(id).map(|i| self.scores[i])
    }

    pub fn as_slice(&self) -> &[SimilarityScore] {
        &self.scores
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'a str, SimilarityScore)> + '_ {
        self.snapshot
            .records()
            .iter()
            .zip(&self.scores)
            .map(|(r, &s)| (r.id.as_str(), s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Parallelism {
    Sequential,
    Threads(NonZeroUsize),
    /// Rayon's global pool.
    #[default]
    Available,
}

enum Side {
    Empty,
    Single(EmbeddingVector),
    Max(Vec<EmbeddingVector>),
}

impl Side {
    fn prepare(prompts: &[EmbeddingVector], aggregation: Aggregation) -> Result<Side, SearchError> {
        Ok(match (prompts, aggregation) {
            ([], _) => Side::Empty,
            ([single], _) => Side::Single(single.clone()),
            (many, Aggregation::MeanEmbedding) => Side::Single(mean_embedding(many)?),
            (many, Aggregation::MaxScore) => Side::Max(many.to_vec()),
        })
    }

    #[inline]
    fn score(&self, v: &EmbeddingVector) -> SimilarityScore {
        match self {
            Side::Empty => SimilarityScore(0.0),
            Side::Single(p) => cosine_unchecked(v, p),
            Side::Max(ps) => ps
                .iter()
                .map(|p| cosine_unchecked(v, p))
                .fold(SimilarityScore(f64::NEG_INFINITY), |a, b| if b.0 > a.0 { b } else { a }),
        }
    }
}

struct Prepared {
    positive: Side,
    negative: Side,
}

impl Prepared {
    #[inline]
    fn score(&self, v: &EmbeddingVector) -> SimilarityScore {
        combine_scores(self.positive.score(v), self.negative.score(v))
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    score: f64,
    index: usize,
}

/// `Less` means `a` ranks ahead of `b`.
#[inline]
fn rank_order(a: &Candidate, b: &Candidate) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then(a.index.cmp(&b.index))
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        rank_order(self, other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// The max-heap top is the worst-ranked candidate kept so far.
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        rank_order(self, other)
    }
}

fn chunk_top_k(
    records: &[ImageRecord],
    base: usize,
    k: usize,
    prepared: &Prepared,
) -> Vec<Candidate> {
    let mut heap = BinaryHeap::with_capacity(k.min(records.len()) + 1);
    for (offset, r) in records.iter().enumerate() {
        let c = Candidate {
            score: prepared.score(&r.embedding).0,
            index: base + offset,
        };
        if heap.len() < k {
            heap.push(c);
        } else if let Some(worst) = heap.peek() {
            if rank_order(&c, worst) == Ordering::Less {
                heap.pop();
                heap.push(c);
            }
        }
    }
    heap.into_vec()
}

/// Exhaustive scorer with a configurable degree of parallelism.
#[derive(Clone, Default)]
pub struct SearchEngine {
    parallelism: Parallelism,
    pool: Option<Arc<rayon::ThreadPool>>,
}

impl fmt::Debug for SearchEngine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SearchEngine")
            .field("parallelism", &self.parallelism)
            .finish()
    }
}

impl SearchEngine {
    pub fn new(parallelism: Parallelism) -> Result<Self, SearchError> {
        let pool = match parallelism {
            Parallelism::Threads(n) => Some(Arc::new(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n.get())
                    .build()
                    .map_err(|e| SearchError::ThreadPool(e.to_string()))?,
            )),
            _ => None,
        };
        Ok(Self { parallelism, pool })
    }

    pub fn sequential() -> Self {
        Self {
            parallelism: Parallelism::Sequential,
            pool: None,
        }
    }

    pub fn parallelism(&self) -> Parallelism {
        self.parallelism
    }

    fn run<R: Send>(&self, f: impl FnOnce(bool) -> R + Send) -> R {
        match (&self.parallelism, &self.pool) {
            (Parallelism::Sequential, _) => f(false),
            (_, Some(pool)) => pool.install(|| f(true)),
            (_, None) => f(true),
        }
    }

    fn check_dims(snapshot: &StoreSnapshot, prompts: &[EmbeddingVector]) -> Result<(), SearchError> {
        match prompts.iter().find(|p| p.dim() != snapshot.dim()) {
            Some(p) => Err(SearchError::DimensionMismatch {
                expected: snapshot.dim(),
                actual: p.dim(),
            }),
            None => Ok(()),
        }
    }

    fn prepare(&self, snapshot: &StoreSnapshot, query: &PromptQuery) -> Result<Prepared, SearchError> {
        query.validate()?;
        Self::check_dims(snapshot, &query.positives)?;
        Self::check_dims(snapshot, &query.negatives)?;
        Ok(Prepared {
            positive: Side::prepare(&query.positives, query.aggregation)?,
            negative: Side::prepare(&query.negatives, query.aggregation)?,
        })
    }

    fn score_with<'a>(&self, snapshot: &'a StoreSnapshot, prepared: &Prepared) -> ScoreMap<'a> {
        let records = snapshot.records();
        let scores = self.run(|parallel| {
            if parallel {
                records
                    .par_iter()
                    .with_min_len(CHUNK / 4)
                    .map(|r| prepared.score(&r.embedding))
                    .collect()
            } else {
                records.iter().map(|r| prepared.score(&r.embedding)).collect()
            }
        });
        ScoreMap { snapshot, scores }
    }

    /// Cosine similarity of every record against a single prompt.
    pub fn score_all<'a>(
        &self,
        snapshot: &'a StoreSnapshot,
        prompt: &EmbeddingVector,
    ) -> Result<ScoreMap<'a>, SearchError> {
        Self::check_dims(snapshot, std::slice::from_ref(prompt))?;
        let prepared = Prepared {
            positive: Side::Single(prompt.clone()),
            negative: Side::Empty,
        };
        Ok(self.score_with(snapshot, &prepared))
    }

    /// Combined positive-minus-negative score of every record.
    pub fn aggregate_query<'a>(
        &self,
        snapshot: &'a StoreSnapshot,
        query: &PromptQuery,
    ) -> Result<ScoreMap<'a>, SearchError> {
        let prepared = self.prepare(snapshot, query)?;
        Ok(self.score_with(snapshot, &prepared))
    }

    /// The `query.k` best records, best first.
    pub fn top_k(
        &self,
        snapshot: &StoreSnapshot,
        query: &PromptQuery,
    ) -> Result<Vec<ScoredResult>, SearchError> {
        let prepared = self.prepare(snapshot, query)?;
        let k = query.k;
        let records = snapshot.records();
        let mut merged: Vec<Candidate> = self.run(|parallel| {
            if parallel {
                records
                    .par_chunks(CHUNK)
                    .enumerate()
                    .flat_map_iter(|(i, chunk)| chunk_top_k(chunk, i * CHUNK, k, &prepared))
                    .collect()
            } else {
                records
                    .chunks(CHUNK)
                    .enumerate()
                    .flat_map(|(i, chunk)| chunk_top_k(chunk, i * CHUNK, k, &prepared))
                    .collect()
            }
        });
        merged.sort_unstable_by(rank_order);
        merged.truncate(k);
        Ok(merged
            .into_iter()
            .enumerate()
            .map(|(i, c)| ScoredResult {
                id: records[c.index].id.clone(),
                index: c.index,
                score: SimilarityScore(c.score),
                rank: i + 1,
                breakdown: None,
            })
            .collect())
    }

    /// [`top_k`](Self::top_k) with the positive and negative side scores
    /// attached to every result.
    pub fn top_k_explained(
        &self,
        snapshot: &StoreSnapshot,
        query: &PromptQuery,
    ) -> Result<Vec<ScoredResult>, SearchError> {
        let prepared = self.prepare(snapshot, query)?;
        let mut results = self.top_k(snapshot, query)?;
        for r in &mut results {
            let v = &snapshot.records()[r.index].embedding;
            r.breakdown = Some(ScoreBreakdown {
                positive: prepared.positive.score(v),
                negative: prepared.negative.score(v),
            });
        }
        Ok(results)
    }
}
