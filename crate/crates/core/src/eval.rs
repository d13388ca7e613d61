//! Zero-shot classification by argmax over class prompt similarities, and
//! its evaluation with a confusion matrix and macro F1.
//!
//! Confusion matrices are indexed `[predicted][truth]`. Column
//! normalization divides by the number of images of each ground-truth class.

use std::collections::HashSet;
use std::fs;
use std::io;
use std::path::Path;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{cosine_unchecked, EmbeddingVector};
use crate::store::StoreSnapshot;

pub const REPORT_VERSION: u32 = 1;

/// Record id → class label, in a stable order.
pub type LabelMap = IndexMap<String, String>;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid class prompts: {0}")]
    InvalidClasses(String),
    #[error("prompt dimension {actual} does not match snapshot dimension {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("snapshot is empty")]
    EmptySnapshot,
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("no ground truth for id {0:?}")]
    MissingGroundTruth(String),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Ordered, uniquely labelled class prompts sharing one dimension.
#[derive(Debug, Clone)]
pub struct ClassPromptSet {
    classes: Vec<(String, EmbeddingVector)>,
}

impl ClassPromptSet {
    pub fn new(classes: Vec<(String, EmbeddingVector)>) -> Result<Self, EvalError> {
        if classes.len() < 2 {
            return Err(EvalError::InvalidClasses(format!(
                "need at least 2 classes, got {}",
                classes.len()
            )));
        }
        let dim = classes[0].1.dim();
        let mut seen = HashSet::new();
        for (label, v) in &classes {
            if label.is_empty() {
                return Err(EvalError::InvalidClasses("empty label".into()));
            }
            if !seen.insert(label.as_str()) {
                return Err(EvalError::InvalidClasses(format!("duplicate label {label:?}")));
            }
            if v.dim() != dim {
                return Err(EvalError::InvalidClasses(format!(
                    "class {label:?} has dimension {} but the first class has {dim}",
                    v.dim()
                )));
            }
        }
        Ok(Self { classes })
    }

    pub fn dim(&self) -> usize {
        self.classes[0].1.dim()
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn labels(&self) -> Vec<String> {
        self.classes.iter().map(|(l, _)| l.clone()).collect()
    }

    pub fn classes(&self) -> &[(String, EmbeddingVector)] {
        &self.classes
    }
}

/// Per-image cosine similarity against every class prompt, in snapshot
/// order. Row `i` holds the scores of record `i` in class order.
pub fn similarity_matrix(
    snapshot: &StoreSnapshot,
    prompts: &ClassPromptSet,
) -> Result<Vec<Vec<f64>>, EvalError> {
    if prompts.dim() != snapshot.dim() {
        return Err(EvalError::DimensionMismatch {
            expected: snapshot.dim(),
            actual: prompts.dim(),
        });
    }
    if snapshot.is_empty() {
        return Err(EvalError::EmptySnapshot);
    }
    Ok(snapshot
        .records()
        .par_iter()
        .map(|r| {
            prompts
                .classes
                .iter()
                .map(|(_, p)| cosine_unchecked(&r.embedding, p).0)
                .collect()
        })
        .collect())
}

/// Index of the first maximum.
fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Assigns every image the label of its most similar class prompt. Ties go
/// to the class listed first.
pub fn classify(snapshot: &StoreSnapshot, prompts: &ClassPromptSet) -> Result<LabelMap, EvalError> {
    let matrix = similarity_matrix(snapshot, prompts)?;
    Ok(snapshot
        .records()
        .iter()
        .zip(&matrix)
        .map(|(r, scores)| (r.id.clone(), prompts.classes[argmax(scores)].0.clone()))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    /// `raw[predicted][truth]`.
    pub raw: Vec<Vec<u64>>,
    pub column_normalized: Vec<Vec<f64>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.raw.iter().flatten().sum()
    }

    /// Per-class F1 in label order. Any `0/0` ratio is taken as 0.
    pub fn per_class_f1(&self) -> Vec<f64> {
        let n = self.labels.len();
        (0..n)
            .map(|c| {
                let tp = self.raw[c][c] as f64;
                let predicted: u64 = self.raw[c].iter().sum();
                let actual: u64 = self.raw.iter().map(|row| row[c]).sum();
                let precision = ratio(tp, predicted as f64);
                let recall = ratio(tp, actual as f64);
                ratio(2.0 * precision * recall, precision + recall)
            })
            .collect()
    }
}

#[inline]
fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn label_index(labels: &[String]) -> IndexMap<&str, usize> {
    labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect()
}

/// Tallies predictions against ground truth. Ground-truth entries without a
/// prediction are not counted.
pub fn confusion_matrix(
    predictions: &LabelMap,
    ground_truth: &LabelMap,
    labels: &[String],
) -> Result<ConfusionMatrix, EvalError> {
    let index = label_index(labels);
    let lookup = |label: &str| {
        index
            .get(label)
            .copied()
            .ok_or_else(|| EvalError::UnknownLabel(label.to_owned()))
    };
    let n = labels.len();
    let mut raw = vec![vec![0u64; n]; n];
    for (id, predicted) in predictions {
        let truth = ground_truth
            .get(id)
            .ok_or_else(|| EvalError::MissingGroundTruth(id.clone()))?;
        raw[lookup(predicted)?][lookup(truth)?] += 1;
    }
    let mut column_normalized = vec![vec![0.0f64; n]; n];
    for t in 0..n {
        let col: u64 = raw.iter().map(|row| row[t]).sum();
        if col > 0 {
            for p in 0..n {
                column_normalized[p][t] = raw[p][t] as f64 / col as f64;
            }
        }
    }
    Ok(ConfusionMatrix {
        labels: labels.to_vec(),
        raw,
        column_normalized,
    })
}

/// Unweighted mean of the per-class F1 scores over `labels`.
pub fn macro_f1(
    predictions: &LabelMap,
    ground_truth: &LabelMap,
    labels: &[String],
) -> Result<f64, EvalError> {
    let cm = confusion_matrix(predictions, ground_truth, labels)?;
    Ok(mean(&cm.per_class_f1()))
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Where an evaluation's inputs came from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub store: Option<String>,
    /// Class label → prompt text.
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    pub prompts: IndexMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provider: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub version: u32,
    pub labels: Vec<String>,
    pub evaluated: u64,
    /// `confusion[predicted][truth]`.
    pub confusion: Vec<Vec<u64>>,
    pub confusion_column_normalized: Vec<Vec<f64>>,
    pub per_class_f1: IndexMap<String, f64>,
    pub macro_f1: f64,
    pub provenance: Provenance,
}

pub fn evaluate(
    predictions: &LabelMap,
    ground_truth: &LabelMap,
    labels: &[String],
    provenance: Provenance,
) -> Result<EvaluationReport, EvalError> {
    let cm = confusion_matrix(predictions, ground_truth, labels)?;
    let f1 = cm.per_class_f1();
    Ok(EvaluationReport {
        version: REPORT_VERSION,
        labels: labels.to_vec(),
        evaluated: cm.total(),
        macro_f1: mean(&f1),
        per_class_f1: labels.iter().cloned().zip(f1).collect(),
        confusion: cm.raw,
        confusion_column_normalized: cm.column_normalized,
        provenance,
    })
}

/// Five-number summary plus mean of a score sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub count: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

/// Quantile of sorted data by linear interpolation between closest ranks.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

impl Distribution {
    fn from_samples(mut xs: Vec<f64>) -> Self {
        xs.sort_by(f64::total_cmp);
        Self {
            count: xs.len(),
            min: xs[0],
            q1: quantile_sorted(&xs, 0.25),
            median: quantile_sorted(&xs, 0.5),
            q3: quantile_sorted(&xs, 0.75),
            max: xs[xs.len() - 1],
            mean: mean(&xs),
        }
    }
}

/// Score distributions of the images of one ground-truth class against
/// every class prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileGroup {
    pub truth: String,
    pub images: usize,
    pub by_prompt: IndexMap<String, Distribution>,
}

/// Groups per-prompt similarity distributions by ground-truth class.
/// Images without a ground-truth entry are skipped; classes without images
/// are omitted.
pub fn similarity_profile(
    snapshot: &StoreSnapshot,
    prompts: &ClassPromptSet,
    ground_truth: &LabelMap,
) -> Result<Vec<ProfileGroup>, EvalError> {
    let labels = prompts.labels();
    let index = label_index(&labels);
    let matrix = similarity_matrix(snapshot, prompts)?;
    let n = labels.len();
    // samples[truth][prompt]
    let mut samples = vec![vec![Vec::new(); n]; n];
    for (r, scores) in snapshot.records().iter().zip(&matrix) {
        let Some(truth) = ground_truth.get(&r.id) else {
            continue;
        };
        let t = *index
            .get(truth.as_str())
            .ok_or_else(|| EvalError::UnknownLabel(truth.clone()))?;
        for (c, &s) in scores.iter().enumerate() {
            samples[t][c].push(s);
        }
    }
    Ok(samples
        .into_iter()
        .enumerate()
        .filter(|(_, per_prompt)| !per_prompt[0].is_empty())
        .map(|(t, per_prompt)| ProfileGroup {
            truth: labels[t].clone(),
            images: per_prompt[0].len(),
            by_prompt: labels
                .iter()
                .cloned()
                .zip(per_prompt.into_iter().map(Distribution::from_samples))
                .collect(),
        })
        .collect())
}

/// Parses a two-column TSV of `key <TAB> value`. Blank and `#` lines are
/// skipped; keys must be unique.
pub fn parse_label_tsv(text: &str) -> Result<LabelMap, EvalError> {
    let mut out = LabelMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let raw = raw.trim_end_matches('\r');
        if raw.trim().is_empty() || raw.starts_with('#') {
            continue;
        }
        let mut cols = raw.split('\t');
        let (Some(key), Some(value), None) = (cols.next(), cols.next(), cols.next()) else {
            return Err(EvalError::Parse {
                line,
                message: "expected 2 tab-separated columns".into(),
            });
        };
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            return Err(EvalError::Parse {
                line,
                message: "empty column".into(),
            });
        }
        if out.insert(key.to_owned(), value.to_owned()).is_some() {
            return Err(EvalError::Parse {
                line,
                message: format!("duplicate key {key:?}"),
            });
        }
    }
    Ok(out)
}

pub fn read_label_tsv(path: impl AsRef<Path>) -> Result<LabelMap, EvalError> {
    parse_label_tsv(&fs::read_to_string(path)?)
}

pub fn format_label_tsv(labels: &LabelMap) -> String {
    let mut out = String::new();
    for (id, label) in labels {
        out.push_str(id);
        out.push('\t');
        out.push_str(label);
        out.push('\n');
    }
    out
}
