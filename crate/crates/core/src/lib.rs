//! Prompt-driven search over large image collections represented as
//! embedding vectors.
//!
//! * [`embedding`]: cosine similarity and score arithmetic.
//! * [`store`]: append-only, checksummed on-disk vector store.
//! * [`search`]: exhaustive parallel scoring with deterministic top-k.
//! * [`lexicon`]: lexical expansion of query terms into prompt plans.
//! * [`eval`]: zero-shot classification, confusion matrices and macro F1.
//! * [`provider`]: embedding service client, offline stub and bulk import.

pub mod embedding;
pub mod eval;
pub mod lexicon;
pub mod provider;
pub mod search;
pub mod store;

pub use embedding::{
    combine_scores, cosine_similarity, mean_embedding, EmbeddingError, EmbeddingVector,
    SimilarityScore,
};
pub use search::{Aggregation, Parallelism, PromptQuery, ScoredResult, SearchEngine, SearchError};
pub use store::{ImageRecord, Store, StoreError, StoreSnapshot};
