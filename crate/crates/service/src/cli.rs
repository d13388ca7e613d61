//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage or invalid request, 2 I/O or input format,
//! 3 embedding provider, 4 store validation.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use promptscope_core::embedding::EmbeddingVector;
use promptscope_core::eval::{self, LabelMap, Provenance};
use promptscope_core::lexicon::{LinkageType, Lexicon};
use promptscope_core::provider::import::{import_embeddings, ImportFormat, ImportOptions};
use promptscope_core::provider::{EmbeddingProvider, HttpProvider, ProviderError, StubProvider, DEFAULT_TIMEOUT};
use promptscope_core::search::SearchEngine;
use promptscope_core::store::{self, Store, StoreError};

use crate::api::{self, ApiError, ClassifyRequest, EvaluateRequest, ExpandRequest, SearchRequest, Service};
use crate::config::Config;
use crate::server::AppState;

const DEFAULT_LISTEN: &str = "127.0.0.1:8080";

#[derive(Debug, Parser)]
#[command(name = "promptscope", version, about = "Prompt-driven image search and zero-shot evaluation")]
pub struct Cli {
    /// TOML settings file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Embedding service URL, or `stub:<dim>` for the offline stub.
    #[arg(long, global = true)]
    endpoint: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Import precomputed embeddings into a store file.
    Ingest(IngestArgs),
    /// Rank stored images against text and image prompts.
    Search(SearchArgs),
    /// Show lexicon linkages and the prompts they produce.
    Expand(ExpandArgs),
    /// Assign every stored image to its most similar class prompt.
    Classify(ClassifyArgs),
    /// Score predictions against ground truth.
    Evaluate(EvaluateArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Validate a store file and print its header.
    Info(InfoArgs),
    /// Run a deterministic local embedding service.
    #[command(hide = true)]
    StubProvider(StubArgs),
}

#[derive(Debug, Args)]
struct IngestArgs {
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "jsonl")]
    format: ImportFormat,
    /// Id sidecar for raw matrices (default `<input>.ids`).
    #[arg(long)]
    ids: Option<PathBuf>,
    /// Dimension of a new store. Inferred from the input when omitted.
    #[arg(long)]
    dim: Option<usize>,
    /// Fail on the first bad line instead of skipping it.
    #[arg(long)]
    strict: bool,
}

#[derive(Debug, Args)]
struct SearchArgs {
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long = "positive", short = 'p', num_args = 1..)]
    positives: Vec<String>,
    #[arg(long = "negative", short = 'n', num_args = 1..)]
    negatives: Vec<String>,
    /// Stored record used as a positive prompt.
    #[arg(long = "image-id", visible_alias = "image-ref", num_args = 1..)]
    image_refs: Vec<String>,
    #[arg(long, short = 'k')]
    k: Option<usize>,
    /// `mean` or `max`.
    #[arg(long)]
    aggregation: Option<String>,
    /// Expand positive texts through the lexicon. Optionally a comma list
    /// of linkage types.
    #[arg(long, num_args = 0..=1, default_missing_value = "all")]
    expand: Option<String>,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Show per-side scores.
    #[arg(long)]
    debug: bool,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct ExpandArgs {
    #[arg(long)]
    term: String,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Comma list of linkage types (default all).
    #[arg(long)]
    types: Option<String>,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct ClassifyArgs {
    #[arg(long)]
    store: Option<PathBuf>,
    /// TSV of `label <TAB> prompt text`, in class order.
    #[arg(long)]
    classes: PathBuf,
    /// Write `id <TAB> label` predictions here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Ground truth TSV. Evaluates the predictions when given.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Where to write the evaluation report (requires --truth).
    #[arg(long, requires = "truth")]
    report: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// Comma list fixing the class order.
    #[arg(long)]
    labels: Option<String>,
    /// Class prompt TSV, recorded as provenance and used for class order.
    #[arg(long)]
    classes: Option<PathBuf>,
    /// Store path recorded as provenance.
    #[arg(long)]
    store: Option<PathBuf>,
    /// Provider identity recorded as provenance.
    #[arg(long)]
    provider: Option<String>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long)]
    listen: Option<String>,
    #[arg(long)]
    lexicon: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InfoArgs {
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct StubArgs {
    #[arg(long, default_value_t = 512)]
    dim: usize,
    #[arg(long, default_value = "127.0.0.1:0")]
    listen: String,
    /// JSON lines of `{"text": ..., "embedding": [...]}` or
    /// `{"image_base64": ..., "embedding": [...]}`.
    #[arg(long)]
    fixtures: Option<PathBuf>,
}

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }

    fn io(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    fn provider(message: impl Into<String>) -> Self {
        Self { code: 3, message: message.into() }
    }

    fn store(e: StoreError, path: &Path) -> Self {
        let code = match e {
            StoreError::Io(_) => 2,
            _ => 4,
        };
        Self {
            code,
            message: format!("{}: {e}", path.display()),
        }
    }
}

impl From<ApiError> for CliError {
    fn from(e: ApiError) -> Self {
        Self {
            code: e.exit_code(),
            message: e.to_string(),
        }
    }
}

impl From<ProviderError> for CliError {
    fn from(e: ProviderError) -> Self {
        CliError::provider(e.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run(args: impl IntoIterator<Item = impl Into<OsString> + Clone>) -> u8 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

struct Ctx {
    config: Config,
    endpoint: Option<String>,
}

impl Ctx {
    fn store_path(&self, flag: Option<PathBuf>) -> Result<PathBuf> {
        flag.or_else(|| self.config.store.clone())
            .ok_or_else(|| CliError::usage("no store given (use --store or set `store` in the config)"))
    }

    fn lexicon(&self, flag: Option<PathBuf>) -> Result<Option<Arc<Lexicon>>> {
        match flag.or_else(|| self.config.lexicon.clone()) {
            Some(path) => Lexicon::load(&path)
                .map(|l| Some(Arc::new(l)))
                .map_err(|e| CliError::io(format!("{}: {e}", path.display()))),
            None => Ok(None),
        }
    }

    fn timeout(&self) -> Duration {
        self.config.timeout_ms.map(Duration::from_millis).unwrap_or(DEFAULT_TIMEOUT)
    }

    fn provider(&self) -> Result<Option<Arc<dyn EmbeddingProvider>>> {
        match &self.endpoint {
            Some(endpoint) => connect(endpoint, self.timeout()).map(Some),
            None => Ok(None),
        }
    }

    fn require_provider(&self) -> Result<Arc<dyn EmbeddingProvider>> {
        self.provider()?.ok_or_else(|| {
            CliError::provider(format!(
                "no embedding endpoint configured (use --endpoint, {} or the config file)",
                promptscope_core::provider::ENDPOINT_ENV
            ))
        })
    }
}

/// Builds a provider from an endpoint string. `stub:<dim>` selects the
/// in-process deterministic stub.
pub fn connect(endpoint: &str, timeout: Duration) -> Result<Arc<dyn EmbeddingProvider>> {
    if let Some(dim) = endpoint.strip_prefix("stub:") {
        let dim = dim
            .parse()
            .map_err(|_| CliError::usage(format!("invalid stub dimension in {endpoint:?}")))?;
        return Ok(Arc::new(StubProvider::new(dim)?));
    }
    Ok(Arc::new(HttpProvider::connect(endpoint, timeout)?))
}

fn execute(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(path) => Config::load(path).map_err(CliError::usage)?,
        None => Config::default(),
    };
    let ctx = Ctx {
        endpoint: config.endpoint(cli.endpoint.as_deref()),
        config,
    };
    match cli.command {
        Command::Ingest(a) => ingest(&ctx, a),
        Command::Search(a) => search(&ctx, a),
        Command::Expand(a) => expand(&ctx, a),
        Command::Classify(a) => classify(&ctx, a),
        Command::Evaluate(a) => evaluate(a),
        Command::Serve(a) => serve(&ctx, a),
        Command::Info(a) => info(&ctx, a),
        Command::StubProvider(a) => stub_provider(a),
    }
}

fn open_store(path: &Path) -> Result<Store> {
    Store::open(path).map_err(|e| CliError::store(e, path))
}

fn stdout(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())
        .and_then(|()| out.flush())
        .map_err(|e| CliError::io(format!("stdout: {e}")))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn read_tsv(path: &Path) -> Result<LabelMap> {
    eval::read_label_tsv(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn parse_types(list: &str) -> Result<Vec<LinkageType>> {
    if list == "all" {
        return Ok(LinkageType::ALL.to_vec());
    }
    LinkageType::parse_list(list).map_err(CliError::usage)
}

fn ingest(ctx: &Ctx, a: IngestArgs) -> Result<()> {
    let path = ctx.store_path(a.store)?;
    let existing = if path.exists() { Some(open_store(&path)?) } else { None };
    let options = ImportOptions {
        strict: a.strict,
        dim: existing.as_ref().map(Store::dim).or(a.dim),
        ids_path: a.ids,
    };
    let report = import_embeddings(&a.input, a.format, &options)
        .map_err(|e| CliError::io(format!("{}: {e}", a.input.display())))?;
    for skipped in &report.skipped {
        eprintln!("warning: skipped {skipped}");
    }
    let mut store = match existing {
        Some(store) => store,
        None => {
            let dim = report
                .dim
                .or(a.dim)
                .ok_or_else(|| CliError::usage("cannot infer the dimension of an empty input; pass --dim"))?;
            Store::create(dim).map_err(|e| CliError::store(e, &path))?
        }
    };
    let accepted = store.ingest(report.records).map_err(|e| CliError::store(e, &path))?;
    store.save(&path).map_err(|e| CliError::store(e, &path))?;
    stdout(&format!(
        "ingested {accepted} records into {} (skipped {}, count {}, dim {})\n",
        path.display(),
        report.skipped.len(),
        store.len(),
        store.dim()
    ))
}

fn search(ctx: &Ctx, a: SearchArgs) -> Result<()> {
    let path = ctx.store_path(a.store)?;
    let snapshot = open_store(&path)?.snapshot();
    let needs_text = !(a.positives.is_empty() && a.negatives.is_empty());
    let service = Service {
        engine: SearchEngine::default(),
        provider: if needs_text { Some(ctx.require_provider()?) } else { None },
        lexicon: ctx.lexicon(a.lexicon)?,
        store_path: Some(path.display().to_string()),
        default_k: ctx.config.default_k,
    };
    let req = SearchRequest {
        positive_texts: a.positives,
        negative_texts: a.negatives,
        positive_image_refs: a.image_refs,
        k: a.k,
        aggregation: a.aggregation,
        expand_with_lexicon: a.expand.as_deref().map(parse_types).transpose()?,
        debug: a.debug,
    };
    let resp = service.search(&snapshot, &req)?;
    if a.json {
        return stdout(&api::to_json(&resp));
    }
    for w in &resp.plan.warnings {
        eprintln!("warning: {w}");
    }
    let mut out = String::new();
    if req.expand_with_lexicon.is_some() {
        let _ = writeln!(out, "# positive: {}", resp.plan.positive_prompts.join(", "));
        let _ = writeln!(out, "# negative: {}", resp.plan.negative_prompts.join(", "));
    }
    if a.debug {
        let _ = writeln!(out, "rank\tscore\tpositive\tnegative\tid\turi");
    } else {
        let _ = writeln!(out, "rank\tscore\tid\turi");
    }
    for r in &resp.results {
        let _ = write!(out, "{}\t{}\t", r.rank, api::format_sig9(r.score));
        if let (Some(p), Some(n)) = (r.score_positive, r.score_negative) {
            let _ = write!(out, "{}\t{}\t", api::format_sig9(p), api::format_sig9(n));
        }
        let _ = writeln!(out, "{}\t{}", r.id, r.uri);
    }
    stdout(&out)
}

fn expand(ctx: &Ctx, a: ExpandArgs) -> Result<()> {
    let service = Service {
        lexicon: ctx.lexicon(a.lexicon)?,
        ..Default::default()
    };
    if service.lexicon.is_none() {
        return Err(CliError::usage("no lexicon given (use --lexicon or set `lexicon` in the config)"));
    }
    let resp = service.expand(&ExpandRequest {
        term: a.term,
        types: a.types.as_deref().map(parse_types).transpose()?,
    })?;
    if a.json {
        return stdout(&api::to_json(&resp));
    }
    if resp.senses.is_empty() {
        eprintln!("no lexicon entry for {:?}", resp.term);
        return Ok(());
    }
    let mut out = String::new();
    for sense in &resp.senses {
        let set = &sense.linkages;
        let _ = writeln!(out, "{} [{}]", set.seed, set.sense);
        if !set.sense_gloss.is_empty() {
            let _ = writeln!(out, "  gloss: {}", set.sense_gloss);
        }
        for kind in &resp.types {
            let terms = set.get(*kind);
            if !terms.is_empty() {
                let _ = writeln!(out, "  {kind}: {}", terms.join(", "));
            }
        }
        let _ = writeln!(out, "  positive prompts: {}", sense.plan.positive_prompts.join(", "));
        let _ = writeln!(out, "  negative prompts: {}", sense.plan.negative_prompts.join(", "));
        for w in &sense.plan.warnings {
            let _ = writeln!(out, "  warning: {w}");
        }
    }
    stdout(&out)
}

fn classify(ctx: &Ctx, a: ClassifyArgs) -> Result<()> {
    let path = ctx.store_path(a.store)?;
    let classes = read_tsv(&a.classes)?;
    let snapshot = open_store(&path)?.snapshot();
    let service = Service {
        provider: Some(ctx.require_provider()?),
        store_path: Some(path.display().to_string()),
        ..Default::default()
    };
    let resp = service.classify(&snapshot, &ClassifyRequest { classes })?;
    let text = if a.json {
        api::to_json(&resp)
    } else {
        eval::format_label_tsv(&resp.predictions)
    };
    match &a.output {
        Some(out) => write_file(out, &text)?,
        None => stdout(&text)?,
    }
    if let Some(truth) = &a.truth {
        let report = api::evaluate(&EvaluateRequest {
            ground_truth: read_tsv(truth)?,
            labels: Some(resp.labels.clone()),
            provenance: service.provenance(resp.prompts.clone()),
            predictions: resp.predictions,
        })?;
        eprintln!("macro F1 {} over {} images", api::format_sig9(report.macro_f1), report.evaluated);
        if let Some(report_path) = &a.report {
            write_file(report_path, &api::to_json(&report))?;
        }
    }
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let prompts = match &a.classes {
        Some(path) => read_tsv(path)?,
        None => IndexMap::new(),
    };
    let labels = match (&a.labels, prompts.is_empty()) {
        (Some(list), _) => Some(list.split(',').map(|s| s.trim().to_owned()).collect()),
        (None, false) => Some(prompts.keys().cloned().collect()),
        (None, true) => None,
    };
    let req = EvaluateRequest {
        predictions: read_tsv(&a.predictions)?,
        ground_truth: read_tsv(&a.truth)?,
        labels,
        provenance: Provenance {
            store: a.store.map(|p| p.display().to_string()),
            prompts,
            provider: a.provider,
        },
    };
    let text = api::to_json(&api::evaluate(&req)?);
    if let Some(path) = &a.report {
        write_file(path, &text)?;
    }
    stdout(&text)
}

#[derive(Serialize)]
struct FileInfo {
    version: u32,
    path: String,
    format_version: u16,
    dim: usize,
    count: u64,
    checksum: String,
    bytes: u64,
}

fn info(ctx: &Ctx, a: InfoArgs) -> Result<()> {
    let path = ctx.store_path(a.store)?;
    let s = store::inspect(&path).map_err(|e| CliError::store(e, &path))?;
    let info = FileInfo {
        version: api::API_VERSION,
        path: path.display().to_string(),
        format_version: s.version,
        dim: s.dim,
        count: s.count,
        checksum: format!("{:08x}", s.checksum),
        bytes: s.bytes,
    };
    if a.json {
        return stdout(&api::to_json(&info));
    }
    stdout(&format!(
        "path\t{}\nformat version\t{}\ndim\t{}\ncount\t{}\nchecksum\t{}\nbytes\t{}\n",
        info.path, info.format_version, info.dim, info.count, info.checksum, info.bytes
    ))
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::io(format!("cannot start runtime: {e}")))
}

async fn bind(addr: &str) -> Result<tokio::net::TcpListener> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| CliError::io(format!("cannot listen on {addr}: {e}")))?;
    let local = listener.local_addr().map_err(|e| CliError::io(e.to_string()))?;
    eprintln!("listening on http://{local}");
    Ok(listener)
}

async fn ctrl_c() {
    let _ = tokio::signal::ctrl_c().await;
}

fn serve(ctx: &Ctx, a: ServeArgs) -> Result<()> {
    let path = ctx.store_path(a.store)?;
    let store = open_store(&path)?;
    // The blocking HTTP client must be created and dropped outside the
    // async runtime.
    let provider = ctx.provider()?;
    if provider.is_none() {
        tracing::warn!("no embedding endpoint configured; text and image prompts will fail");
    }
    let service = Service {
        engine: SearchEngine::default(),
        provider,
        lexicon: ctx.lexicon(a.lexicon)?,
        store_path: Some(path.display().to_string()),
        default_k: ctx.config.default_k,
    };
    let state = Arc::new(AppState::new(service, store, Some(path)));
    let listen = a
        .listen
        .or_else(|| ctx.config.listen.clone())
        .unwrap_or_else(|| DEFAULT_LISTEN.to_owned());
    let rt = runtime()?;
    let result = rt.block_on({
        let state = Arc::clone(&state);
        async move {
            let listener = bind(&listen).await?;
            crate::server::serve(listener, state, ctrl_c())
                .await
                .map_err(|e| CliError::io(e.to_string()))
        }
    });
    drop(rt);
    drop(state);
    result
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Fixture {
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    image_base64: Option<String>,
    embedding: Vec<f64>,
}

fn load_fixtures(mut stub: StubProvider, path: &Path) -> Result<StubProvider> {
    use base64::Engine;
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = |msg: String| CliError::io(format!("{}:{}: {msg}", path.display(), i + 1));
        let f: Fixture = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        let v = EmbeddingVector::from_f64(&f.embedding).map_err(|e| bad(e.to_string()))?;
        stub = match (f.text, f.image_base64) {
            (Some(t), None) => stub.with_text(t, v)?,
            (None, Some(b)) => {
                let bytes = base64::engine::general_purpose::STANDARD
                    .decode(b)
                    .map_err(|e| bad(e.to_string()))?;
                stub.with_image(bytes, v)?
            }
            _ => return Err(bad("expected exactly one of text or image_base64".into())),
        };
    }
    Ok(stub)
}

fn stub_provider(a: StubArgs) -> Result<()> {
    let mut stub = StubProvider::new(a.dim)?;
    if let Some(path) = &a.fixtures {
        stub = load_fixtures(stub, path)?;
    }
    let rt = runtime()?;
    rt.block_on(async move {
        let listener = bind(&a.listen).await?;
        axum::serve(listener, crate::embed_server::embed_router(Arc::new(stub)))
            .with_graceful_shutdown(ctrl_c())
            .await
            .map_err(|e| CliError::io(e.to_string()))
    })
}
