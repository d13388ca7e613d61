//! Request handling shared by the HTTP service and the command-line tool.
//!
//! Both front ends build the same request types, call the same handlers and
//! serialize responses with [`to_json`], so identical inputs produce
//! identical bytes on either path.

use std::sync::Arc;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use promptscope_core::embedding::EmbeddingVector;
use promptscope_core::eval::{self, ClassPromptSet, EvalError, EvaluationReport, LabelMap, Provenance};
use promptscope_core::lexicon::{build_prompt_plan, normalize_term, render_term, LinkageSet, LinkageType, Lexicon, PromptPlan};
use promptscope_core::provider::{EmbeddingProvider, ProviderError};
use promptscope_core::search::{Aggregation, PromptQuery, ScoredResult, SearchEngine, SearchError};
use promptscope_core::store::{StoreError, StoreSnapshot};

/// Version stamped into every JSON response.
pub const API_VERSION: u32 = 1;
pub const DEFAULT_K: usize = 20;
pub const MAX_K: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ApiError {
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    NotFound(String),
    #[error("embedding provider: {0}")]
    Provider(String),
    #[error("{0}")]
    Internal(String),
}

impl ApiError {
    pub fn status(&self) -> u16 {
        match self {
            ApiError::BadRequest(_) => 400,
            ApiError::NotFound(_) => 404,
            ApiError::Provider(_) => 502,
            ApiError::Internal(_) => 500,
        }
    }

    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> u8 {
        match self {
            ApiError::BadRequest(_) | ApiError::NotFound(_) => 1,
            ApiError::Provider(_) => 3,
            ApiError::Internal(_) => 4,
        }
    }
}

impl From<ProviderError> for ApiError {
    fn from(e: ProviderError) -> Self {
        match e {
            ProviderError::EmptyBatch
            | ProviderError::EmptyText(_)
            | ProviderError::EmptyPayload
            | ProviderError::UnsupportedMediaType(_) => ApiError::BadRequest(e.to_string()),
            other => ApiError::Provider(other.to_string()),
        }
    }
}

impl From<SearchError> for ApiError {
    fn from(e: SearchError) -> Self {
        match e {
            SearchError::ThreadPool(_) => ApiError::Internal(e.to_string()),
            other => ApiError::BadRequest(other.to_string()),
        }
    }
}

impl From<EvalError> for ApiError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Io(_) => ApiError::Internal(e.to_string()),
            other => ApiError::BadRequest(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorBody {
    pub version: u32,
    pub status: u16,
    pub error: String,
}

impl From<&ApiError> for ErrorBody {
    fn from(e: &ApiError) -> Self {
        Self {
            version: API_VERSION,
            status: e.status(),
            error: e.to_string(),
        }
    }
}

/// Pretty-printed JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("response types serialize");
    s.push('\n');
    s
}

/// Rounds to 9 significant decimal digits so serialized scores are stable.
pub fn round_sig9(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.8e}").parse().unwrap_or(x)
}

/// Fixed-point rendering with 9 significant digits, for tables.
pub fn format_sig9(x: f64) -> String {
    if x == 0.0 {
        return "0.00000000".to_owned();
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (8 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchRequest {
    pub positive_texts: Vec<String>,
    pub negative_texts: Vec<String>,
    /// Ids of stored records used as positive image prompts.
    pub positive_image_refs: Vec<String>,
    pub k: Option<usize>,
    pub aggregation: Option<String>,
    /// Expand positive texts through the lexicon with these linkage types.
    pub expand_with_lexicon: Option<Vec<LinkageType>>,
    /// Attach per-side scores to each result.
    pub debug: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub rank: usize,
    pub id: String,
    pub uri: String,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score_positive: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score_negative: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectivePlan {
    pub positive_prompts: Vec<String>,
    pub negative_prompts: Vec<String>,
    pub positive_image_refs: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResponse {
    pub version: u32,
    pub k: usize,
    pub aggregation: Aggregation,
    pub plan: EffectivePlan,
    pub results: Vec<ResultRow>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassifyRequest {
    /// Class label → prompt text, in class order.
    pub classes: IndexMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyResponse {
    pub version: u32,
    pub labels: Vec<String>,
    pub prompts: IndexMap<String, String>,
    pub predictions: LabelMap,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluateRequest {
    pub predictions: LabelMap,
    pub ground_truth: LabelMap,
    /// Class order. Defaults to first appearance in the ground truth, then
    /// in the predictions.
    pub labels: Option<Vec<String>>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpandRequest {
    pub term: String,
    #[serde(default)]
    pub types: Option<Vec<LinkageType>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpandedSense {
    #[serde(flatten)]
    pub linkages: LinkageSet,
    pub plan: PromptPlan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpandResponse {
    pub version: u32,
    pub term: String,
    pub types: Vec<LinkageType>,
    pub senses: Vec<ExpandedSense>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreInfo {
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    pub dim: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordResponse {
    pub version: u32,
    pub id: String,
    pub uri: String,
    pub tags: std::collections::BTreeMap<String, String>,
    pub embedding: Vec<f32>,
}

/// Everything a request needs besides the snapshot it runs against.
#[derive(Clone, Default)]
pub struct Service {
    pub engine: SearchEngine,
    pub provider: Option<Arc<dyn EmbeddingProvider>>,
    pub lexicon: Option<Arc<Lexicon>>,
    pub store_path: Option<String>,
    pub default_k: Option<usize>,
}

impl std::fmt::Debug for Service {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Service")
            .field("provider", &self.provider.as_ref().map(|p| p.descriptor().identity()))
            .field("lexicon", &self.lexicon.as_ref().map(|l| l.len()))
            .field("store_path", &self.store_path)
            .finish()
    }
}

fn texts_ok(texts: &[String], what: &str) -> Result<(), ApiError> {
    if texts.iter().any(|t| t.trim().is_empty()) {
        return Err(ApiError::BadRequest(format!("{what} contains an empty string")));
    }
    Ok(())
}

impl Service {
    fn provider(&self) -> Result<&dyn EmbeddingProvider, ApiError> {
        self.provider
            .as_deref()
            .ok_or_else(|| ApiError::Provider("no embedding provider configured".into()))
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ApiError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        Ok(self.provider()?.embed_text(texts)?)
    }

    /// Expands positive texts through the lexicon into a prompt plan.
    pub fn plan(&self, req: &SearchRequest) -> Result<PromptPlan, ApiError> {
        texts_ok(&req.positive_texts, "positive_texts")?;
        texts_ok(&req.negative_texts, "negative_texts")?;
        let mut plan = PromptPlan::default();
        match &req.expand_with_lexicon {
            Some(types) => {
                let lexicon = self
                    .lexicon
                    .as_ref()
                    .ok_or_else(|| ApiError::BadRequest("lexicon expansion requested but no lexicon is loaded".into()))?;
                for text in &req.positive_texts {
                    // The first sense in lexicon order stands for the term.
                    let expanded = match lexicon.expand(text, types).into_iter().next() {
                        Some(set) => build_prompt_plan(&set, types),
                        None => PromptPlan {
                            positive_prompts: vec![text.clone()],
                            ..Default::default()
                        },
                    };
                    plan.merge(expanded);
                }
            }
            None => plan.merge(PromptPlan {
                positive_prompts: req.positive_texts.clone(),
                ..Default::default()
            }),
        }
        plan.merge(PromptPlan {
            negative_prompts: req.negative_texts.clone(),
            ..Default::default()
        });
        Ok(plan)
    }

    fn resolve_k(&self, k: Option<usize>) -> Result<usize, ApiError> {
        let k = k.or(self.default_k).unwrap_or(DEFAULT_K);
        if !(1..=MAX_K).contains(&k) {
            return Err(ApiError::BadRequest(format!("k must be in [1, {MAX_K}], got {k}")));
        }
        Ok(k)
    }

    pub fn search(&self, snapshot: &StoreSnapshot, req: &SearchRequest) -> Result<SearchResponse, ApiError> {
        let k = self.resolve_k(req.k)?;
        let aggregation = match &req.aggregation {
            Some(s) => s.parse().map_err(ApiError::BadRequest)?,
            None => Aggregation::default(),
        };
        if req.positive_texts.is_empty() && req.negative_texts.is_empty() && req.positive_image_refs.is_empty() {
            return Err(ApiError::BadRequest(
                "at least one positive or negative prompt is required".into(),
            ));
        }
        let plan = self.plan(req)?;

        let mut positives = Vec::new();
        for id in &req.positive_image_refs {
            let record = snapshot.get_record(id).map_err(|e| match e {
                StoreError::NotFound(id) => ApiError::NotFound(format!("unknown image ref {id:?}")),
                other => ApiError::Internal(other.to_string()),
            })?;
            positives.push(record.embedding.clone());
        }
        positives.extend(self.embed(&plan.positive_prompts)?);
        let negatives = self.embed(&plan.negative_prompts)?;
        let query = PromptQuery::new(positives, negatives, k, aggregation)?;
        let results = if req.debug {
            self.engine.top_k_explained(snapshot, &query)?
        } else {
            self.engine.top_k(snapshot, &query)?
        };
        Ok(SearchResponse {
            version: API_VERSION,
            k,
            aggregation,
            plan: EffectivePlan {
                positive_prompts: plan.positive_prompts,
                negative_prompts: plan.negative_prompts,
                positive_image_refs: req.positive_image_refs.clone(),
                warnings: plan.warnings,
            },
            results: rows(snapshot, &results),
        })
    }

    /// Similar-image search from an uploaded image payload.
    pub fn search_by_image(
        &self,
        snapshot: &StoreSnapshot,
        bytes: &[u8],
        media_type: &str,
        k: Option<usize>,
        negative_texts: &[String],
    ) -> Result<SearchResponse, ApiError> {
        let k = self.resolve_k(k)?;
        texts_ok(negative_texts, "negative_texts")?;
        let image = self.provider()?.embed_image(bytes, media_type)?;
        let negatives = self.embed(negative_texts)?;
        let query = PromptQuery::new(vec![image], negatives, k, Aggregation::default())?;
        let results = self.engine.top_k(snapshot, &query)?;
        Ok(SearchResponse {
            version: API_VERSION,
            k,
            aggregation: query.aggregation,
            plan: EffectivePlan {
                positive_prompts: Vec::new(),
                negative_prompts: negative_texts.to_vec(),
                positive_image_refs: Vec::new(),
                warnings: Vec::new(),
            },
            results: rows(snapshot, &results),
        })
    }

    pub fn classify(&self, snapshot: &StoreSnapshot, req: &ClassifyRequest) -> Result<ClassifyResponse, ApiError> {
        if req.classes.len() < 2 {
            return Err(ApiError::BadRequest("at least 2 classes are required".into()));
        }
        let labels: Vec<String> = req.classes.keys().cloned().collect();
        let texts: Vec<String> = req.classes.values().cloned().collect();
        texts_ok(&texts, "class prompts")?;
        let vectors = self.provider()?.embed_text(&texts)?;
        let prompts = ClassPromptSet::new(labels.iter().cloned().zip(vectors).collect())?;
        let predictions = eval::classify(snapshot, &prompts)?;
        Ok(ClassifyResponse {
            version: API_VERSION,
            labels,
            prompts: req.classes.clone(),
            predictions,
        })
    }

    /// Provenance block for reports derived from a classification run.
    pub fn provenance(&self, prompts: IndexMap<String, String>) -> Provenance {
        Provenance {
            store: self.store_path.clone(),
            prompts,
            provider: self.provider.as_ref().map(|p| p.descriptor().identity()),
        }
    }

    pub fn expand(&self, req: &ExpandRequest) -> Result<ExpandResponse, ApiError> {
        let lexicon = self
            .lexicon
            .as_ref()
            .ok_or_else(|| ApiError::BadRequest("no lexicon is loaded".into()))?;
        if req.term.trim().is_empty() {
            return Err(ApiError::BadRequest("term must not be empty".into()));
        }
        let types = req.types.clone().unwrap_or_else(|| LinkageType::ALL.to_vec());
        let senses = lexicon
            .expand(&req.term, &types)
            .into_iter()
            .map(|set| ExpandedSense {
                plan: build_prompt_plan(&set, &types),
                linkages: set,
            })
            .collect();
        Ok(ExpandResponse {
            version: API_VERSION,
            term: render_term(&normalize_term(&req.term)),
            types,
            senses,
        })
    }
}

fn rows(snapshot: &StoreSnapshot, results: &[ScoredResult]) -> Vec<ResultRow> {
    results
        .iter()
        .map(|r| ResultRow {
            rank: r.rank,
            id: r.id.clone(),
            uri: snapshot.records()[r.index].uri.clone(),
            score: round_sig9(r.score.value()),
            score_positive: r.breakdown.map(|b| round_sig9(b.positive.value())),
            score_negative: r.breakdown.map(|b| round_sig9(b.negative.value())),
        })
        .collect()
}

/// Labels in first-appearance order over ground truth, then predictions.
pub fn default_labels(ground_truth: &LabelMap, predictions: &LabelMap) -> Vec<String> {
    let mut labels: Vec<String> = Vec::new();
    for l in ground_truth.values().chain(predictions.values()) {
        if !labels.contains(l) {
            labels.push(l.clone());
        }
    }
    labels
}

pub fn evaluate(req: &EvaluateRequest) -> Result<EvaluationReport, ApiError> {
    if req.predictions.is_empty() {
        return Err(ApiError::BadRequest("no predictions to evaluate".into()));
    }
    let labels = req
        .labels
        .clone()
        .unwrap_or_else(|| default_labels(&req.ground_truth, &req.predictions));
    Ok(eval::evaluate(
        &req.predictions,
        &req.ground_truth,
        &labels,
        req.provenance.clone(),
    )?)
}

pub fn store_info(snapshot: &StoreSnapshot, path: Option<&str>) -> StoreInfo {
    StoreInfo {
        version: API_VERSION,
        path: path.map(str::to_owned),
        dim: snapshot.dim(),
        count: snapshot.len(),
    }
}

pub fn record(snapshot: &StoreSnapshot, id: &str) -> Result<RecordResponse, ApiError> {
    let r = snapshot
        .get_record(id)
        .map_err(|_| ApiError::NotFound(format!("record {id:?} not found")))?;
    Ok(RecordResponse {
        version: API_VERSION,
        id: r.id.clone(),
        uri: r.uri.clone(),
        tags: r.tags.clone(),
        embedding: r.embedding.values().to_vec(),
    })
}
