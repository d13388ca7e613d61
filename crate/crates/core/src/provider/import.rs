//! Bulk import and export of precomputed embeddings.
//!
//! Two interchange formats are supported:
//!
//! * **JSON lines**: one object per line,
//!   `{"id": "...", "uri": "...", "embedding": [..], "tags": {..}}`.
//!   `uri` and `tags` are optional.
//! * **Raw matrix**: a little-endian `u32` dimension followed by
//!   consecutive little-endian `f32` rows, plus a sidecar text file with one
//!   id per line (optionally `id<TAB>uri`) in row order.
//!
//! Errors are reported with 1-based line (row) numbers. In strict mode the
//! first error aborts the import; in lenient mode offending lines are
//! skipped and collected in [`ImportReport::skipped`].

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{EmbeddingError, EmbeddingVector};
use crate::store::{ImageRecord, MAX_ID_BYTES};

#[derive(Debug, Error)]
pub enum ImportError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("line {line}: dimension {actual} does not match {expected}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        actual: usize,
    },
    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: invalid vector: {reason}")]
    InvalidVector { line: usize, reason: String },
    #[error("matrix has {rows} rows but the id file has {ids} ids")]
    IdCountMismatch { rows: usize, ids: usize },
    #[error("raw matrix import needs an id file")]
    MissingIdFile,
}

impl ImportError {
    pub fn line(&self) -> Option<usize> {
        match self {
            ImportError::ParseError { line, .. }
            | ImportError::DimensionMismatch { line, .. }
            | ImportError::DuplicateId { line, .. }
            | ImportError::InvalidVector { line, .. } => Some(*line),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportFormat {
    JsonLines,
    RawMatrix,
}

impl FromStr for ImportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jsonl" | "json_lines" | "jsonlines" => Ok(ImportFormat::JsonLines),
            "raw" | "raw_matrix" => Ok(ImportFormat::RawMatrix),
            other => Err(format!("unknown import format {other:?} (expected jsonl or raw)")),
        }
    }
}

impl fmt::Display for ImportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ImportFormat::JsonLines => "jsonl",
            ImportFormat::RawMatrix => "raw",
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct ImportOptions {
    pub strict: bool,
    /// Expected dimension. When absent, the first valid line decides.
    pub dim: Option<usize>,
    /// Id sidecar for raw matrices. Defaults to `<matrix>.ids`.
    pub ids_path: Option<PathBuf>,
}

#[derive(Debug, Default)]
pub struct ImportReport {
    /// Dimension of the imported vectors, if any line established one.
    pub dim: Option<usize>,
    pub records: Vec<ImageRecord>,
    /// Lines skipped in lenient mode.
    pub skipped: Vec<ImportError>,
}

#[derive(Deserialize)]
struct JsonRecord {
    id: String,
    #[serde(default)]
    uri: String,
    embedding: Vec<f64>,
    #[serde(default)]
    tags: BTreeMap<String, String>,
}

#[derive(Serialize)]
struct JsonRecordOut<'a> {
    id: &'a str,
    uri: &'a str,
    embedding: &'a [f32],
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    tags: &'a BTreeMap<String, String>,
}

struct Collector {
    strict: bool,
    dim: Option<usize>,
    seen: HashSet<String>,
    report: ImportReport,
}

impl Collector {
    fn new(options: &ImportOptions) -> Self {
        Self {
            strict: options.strict,
            dim: options.dim,
            seen: HashSet::new(),
            report: ImportReport::default(),
        }
    }

    fn fail(&mut self, e: ImportError) -> Result<(), ImportError> {
        if self.strict {
            return Err(e);
        }
        tracing::debug!(error = %e, "skipping line");
        self.report.skipped.push(e);
        Ok(())
    }

    fn accept(
        &mut self,
        line: usize,
        id: String,
        uri: String,
        values: &[f64],
        tags: BTreeMap<String, String>,
    ) -> Result<(), ImportError> {
        match self.build(line, id, uri, values, tags) {
            Ok(record) => {
                self.dim.get_or_insert(record.embedding.dim());
                self.seen.insert(record.id.clone());
                self.report.records.push(record);
                Ok(())
            }
            Err(e) => self.fail(e),
        }
    }

    fn build(
        &self,
        line: usize,
        id: String,
        uri: String,
        values: &[f64],
        tags: BTreeMap<String, String>,
    ) -> Result<ImageRecord, ImportError> {
        if id.is_empty() || id.len() > MAX_ID_BYTES {
            return Err(ImportError::ParseError {
                line,
                message: format!("id length {} outside [1, {MAX_ID_BYTES}]", id.len()),
            });
        }
        if let Some(expected) = self.dim {
            if values.len() != expected {
                return Err(ImportError::DimensionMismatch {
                    line,
                    expected,
                    actual: values.len(),
                });
            }
        }
        if self.seen.contains(&id) {
            return Err(ImportError::DuplicateId { line, id });
        }
        let embedding = EmbeddingVector::from_f64(values).map_err(|e| ImportError::InvalidVector {
            line,
            reason: match e {
                EmbeddingError::ZeroVector => "zero vector".into(),
                EmbeddingError::EmptyInput => "empty embedding".into(),
                EmbeddingError::NonFinite(i) => format!("non-finite component {i}"),
                other => other.to_string(),
            },
        })?;
        Ok(ImageRecord {
            id,
            uri,
            embedding,
            tags,
        })
    }

    fn finish(mut self) -> ImportReport {
        self.report.dim = self.dim;
        self.report
    }
}

/// Reads and validates records from an interchange file.
pub fn import_embeddings(
    path: impl AsRef<Path>,
    format: ImportFormat,
    options: &ImportOptions,
) -> Result<ImportReport, ImportError> {
    let path = path.as_ref();
    match format {
        ImportFormat::JsonLines => parse_jsonl(&fs::read_to_string(path)?, options),
        ImportFormat::RawMatrix => {
            let ids_path = options
                .ids_path
                .clone()
                .unwrap_or_else(|| default_ids_path(path));
            if !ids_path.exists() {
                return Err(ImportError::MissingIdFile);
            }
            parse_raw(&fs::read(path)?, &fs::read_to_string(ids_path)?, options)
        }
    }
}

/// `<matrix>.ids`
pub fn default_ids_path(matrix: &Path) -> PathBuf {
    let mut s = matrix.as_os_str().to_owned();
    s.push(".ids");
    PathBuf::from(s)
}

pub fn parse_jsonl(text: &str, options: &ImportOptions) -> Result<ImportReport, ImportError> {
    let mut c = Collector::new(options);
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<JsonRecord>(raw) {
            Ok(r) => c.accept(line, r.id, r.uri, &r.embedding, r.tags)?,
            Err(e) => c.fail(ImportError::ParseError {
                line,
                message: e.to_string(),
            })?,
        }
    }
    Ok(c.finish())
}

pub fn parse_raw(matrix: &[u8], ids: &str, options: &ImportOptions) -> Result<ImportReport, ImportError> {
    let header: [u8; 4] = matrix
        .get(..4)
        .and_then(|h| h.try_into().ok())
        .ok_or_else(|| ImportError::ParseError {
            line: 0,
            message: "missing dimension header".into(),
        })?;
    let dim = u32::from_le_bytes(header) as usize;
    if dim == 0 {
        return Err(ImportError::ParseError {
            line: 0,
            message: "dimension 0".into(),
        });
    }
    if let Some(expected) = options.dim {
        if expected != dim {
            return Err(ImportError::DimensionMismatch {
                line: 0,
                expected,
                actual: dim,
            });
        }
    }
    let body = &matrix[4..];
    let row_bytes = dim * 4;
    if !body.len().is_multiple_of(row_bytes) {
        return Err(ImportError::ParseError {
            line: body.len() / row_bytes + 1,
            message: format!("truncated row: {} trailing bytes", body.len() % row_bytes),
        });
    }
    let rows = body.len() / row_bytes;
    let id_lines: Vec<&str> = ids.lines().collect();
    if id_lines.len() != rows {
        return Err(ImportError::IdCountMismatch {
            rows,
            ids: id_lines.len(),
        });
    }

    let mut c = Collector::new(&ImportOptions {
        dim: Some(dim),
        ..options.clone()
    });
    let mut values = Vec::with_capacity(dim);
    for (i, (row, id_line)) in body.chunks_exact(row_bytes).zip(id_lines).enumerate() {
        values.clear();
        values.extend(
            row.chunks_exact(4)
                .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap()))),
        );
        let (id, uri) = id_line.split_once('\t').unwrap_or((id_line, ""));
        c.accept(i + 1, id.trim().to_owned(), uri.trim().to_owned(), &values, BTreeMap::new())?;
    }
    Ok(c.finish())
}

pub fn export_jsonl<'a>(
    records: impl IntoIterator<Item = &'a ImageRecord>,
    mut out: impl Write,
) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(
            &mut out,
            &JsonRecordOut {
                id: &r.id,
                uri: &r.uri,
                embedding: r.embedding.values(),
                tags: &r.tags,
            },
        )?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Writes a raw matrix and its id sidecar. Records with a non-empty uri get
/// an `id<TAB>uri` sidecar line.
pub fn export_raw<'a>(
    records: impl IntoIterator<Item = &'a ImageRecord>,
    dim: usize,
    mut matrix: impl Write,
    mut ids: impl Write,
) -> io::Result<()> {
    let dim32 = u32::try_from(dim).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "dimension too large"))?;
    matrix.write_all(&dim32.to_le_bytes())?;
    for r in records {
        if r.embedding.dim() != dim {
            return Err(io::Error::new(
                io::ErrorKind::InvalidInput,
                format!("record {:?} has dimension {}", r.id, r.embedding.dim()),
            ));
        }
        for v in r.embedding.values() {
            matrix.write_all(&v.to_le_bytes())?;
        }
        if r.uri.is_empty() {
            writeln!(ids, "{}", r.id)?;
        } else {
            writeln!(ids, "{}\t{}", r.id, r.uri)?;
        }
    }
    Ok(())
}
