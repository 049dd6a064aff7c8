//! Builds a [`Pipeline`] and its backends from a [`Config`].

use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use scholarag_core::compose::{BiblioClient, BiblioConfig as CoreBiblioConfig, InstructionSet};
use scholarag_core::corpus::{load_corpus, Corpus};
use scholarag_core::embedding::{Embedder, HashEmbedder, RemoteEmbedder, RemoteEmbedderConfig};
use scholarag_core::generate::{
    CompletionBackend, HttpCompletionBackend, HttpCompletionConfig, ScriptedBackend,
};
use scholarag_core::kgfact::{KgEngine, SparqlClient, SparqlClientConfig, TemplateCatalog};
use scholarag_core::pipeline::{build_index_with, PipelineSettings};
use scholarag_core::router::{KeywordClassifier, LlmClassifier, Router, RuleTable, TaskClassifier};
use scholarag_core::{Pipeline, VectorIndex};
use serde::Serialize;

use crate::config::{ClassifierKind, Config, EmbeddingProvider};

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("corpus: {0}")]
    Corpus(#[from] scholarag_core::corpus::CorpusError),
    #[error("index {path}: {cause}")]
    Index { path: String, cause: String },
    #[error("index file {0} does not exist; run `scholarag ingest` or start with --build-index")]
    MissingIndex(String),
    #[error("index has dimension {index} but the embedder produces {embedder}")]
    DimensionMismatch { index: usize, embedder: usize },
    #[error("{0}")]
    Backend(String),
    #[error("ingest: {0}")]
    Ingest(String),
}

pub fn embedder(config: &Config) -> Result<Arc<dyn Embedder>, AppError> {
    let e = &config.embedding;
    Ok(match e.provider {
        EmbeddingProvider::Hash => Arc::new(HashEmbedder::new(e.dim)),
        EmbeddingProvider::Remote => {
            let mut rc = RemoteEmbedderConfig::new(e.url.clone().unwrap_or_default(), e.dim);
            rc.token = e.token.clone();
            rc.timeout = Duration::from_millis(e.timeout_ms);
            Arc::new(
                RemoteEmbedder::new(rc)
                    .map_err(|e| AppError::Backend(format!("embedding: {e}")))?,
            )
        }
    })
}

pub fn llm(config: &Config) -> Result<Option<Arc<dyn CompletionBackend>>, AppError> {
    let l = &config.llm;
    if let Some(script) = &l.script {
        let backend = ScriptedBackend::from_file(script)
            .map_err(|e| AppError::Backend(format!("llm: {e}")))?;
        return Ok(Some(Arc::new(backend)));
    }
    let Some(url) = &l.url else { return Ok(None) };
    let mut hc = HttpCompletionConfig::new(url.clone(), l.model.clone());
    hc.token = l.token.clone();
    hc.max_inflight = l.max_inflight;
    hc.timeout = Duration::from_millis(l.timeout_ms);
    hc.max_attempts = l.max_attempts;
    let backend =
        HttpCompletionBackend::new(hc).map_err(|e| AppError::Backend(format!("llm: {e}")))?;
    Ok(Some(Arc::new(backend)))
}

pub fn rules(config: &Config) -> Result<RuleTable, AppError> {
    let mut rules = RuleTable::default();
    if let Some(path) = &config.router.rules {
        rules.extend(&RuleTable::load(path).map_err(|e| AppError::Backend(e.to_string()))?);
    }
    Ok(rules)
}

pub fn catalog(config: &Config) -> Result<TemplateCatalog, AppError> {
    match &config.kg.templates_dir {
        Some(dir) => {
            TemplateCatalog::load_dir(dir).map_err(|e| AppError::Backend(format!("kg: {e}")))
        }
        None => Ok(TemplateCatalog::builtin()),
    }
}

pub fn load_corpus_from(config: &Config) -> Result<Corpus, AppError> {
    match &config.corpus.path {
        Some(path) => Ok(load_corpus(path, config.corpus.mode)?),
        None => Ok(Corpus::empty()),
    }
}

/// What `ingest` reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IngestReport {
    pub documents: usize,
    pub chunks: usize,
    pub dim: usize,
    pub warnings: Vec<String>,
    pub index_path: Option<String>,
    pub elapsed_ms: u64,
}

impl IngestReport {
    pub fn render(&self) -> String {
        let mut out = format!(
            "documents  {}\nchunks     {}\ndim        {}\nelapsed_ms {}",
            self.documents, self.chunks, self.dim, self.elapsed_ms
        );
        if let Some(p) = &self.index_path {
            out.push_str(&format!("\nindex      {p}"));
        }
        for w in &self.warnings {
            out.push_str(&format!("\nwarning    {w}"));
        }
        out
    }
}

/// Chunks and embeds the corpus; writes the index when `out` is given.
pub async fn ingest(
    corpus: &Corpus,
    embedder: &dyn Embedder,
    min_chars: usize,
    embed_heading: bool,
    out: Option<&Path>,
) -> Result<(VectorIndex, IngestReport), AppError> {
    let started = Instant::now();
    let index = build_index_with(corpus, embedder, min_chars, embed_heading)
        .await
        .map_err(|e| AppError::Ingest(e.message))?;
    if let Some(path) = out {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| AppError::Index {
                path: parent.display().to_string(),
                cause: e.to_string(),
            })?;
        }
        index.save(path).map_err(|e| AppError::Index {
            path: path.display().to_string(),
            cause: e.to_string(),
        })?;
    }
    let report = IngestReport {
        documents: corpus.len(),
        chunks: index.len(),
        dim: index.dim(),
        warnings: corpus
            .warnings()
            .iter()
            .map(|w| format!("{}: {}", w.path.display(), w.message))
            .collect(),
        index_path: out.map(|p| p.display().to_string()),
        elapsed_ms: started.elapsed().as_millis() as u64,
    };
    Ok((index, report))
}

/// Loads the configured index, or builds it: in memory when no path is set,
/// to disk when `build_missing` is true and the file is absent.
async fn index_for(
    config: &Config,
    corpus: &Corpus,
    embedder: &dyn Embedder,
    build_missing: bool,
) -> Result<VectorIndex, AppError> {
    let index = match &config.index.path {
        Some(path) if path.exists() => VectorIndex::load(path).map_err(|e| AppError::Index {
            path: path.display().to_string(),
            cause: e.to_string(),
        })?,
        Some(path) if build_missing => {
            let (index, report) = ingest(
                corpus,
                embedder,
                config.corpus.min_chars,
                config.embedding.embed_heading,
                Some(path),
            )
            .await?;
            tracing::info!(documents = report.documents, chunks = report.chunks, path = %path.display(), "index built");
            index
        }
        Some(path) => return Err(AppError::MissingIndex(path.display().to_string())),
        None => {
            ingest(
                corpus,
                embedder,
                config.corpus.min_chars,
                config.embedding.embed_heading,
                None,
            )
            .await?
            .0
        }
    };
    if index.dim() != embedder.info().dim {
        return Err(AppError::DimensionMismatch {
            index: index.dim(),
            embedder: embedder.info().dim,
        });
    }
    Ok(index)
}

pub fn settings(config: &Config) -> PipelineSettings {
    PipelineSettings {
        k: config.retrieval.k,
        router_threshold: config.router.threshold,
        grounding_threshold: config.grounding.threshold,
        budget_chars: config.compose.budget_chars,
        context_chars: config.grounding.context_chars,
        model_id: config.llm.model.clone(),
        temperature: config.llm.temperature,
        max_tokens: config.llm.max_tokens,
        kg_gloss: config.kg.gloss,
        with_heading: config.compose.with_heading,
    }
}

/// Wires every backend named in `config` into a pipeline.
pub async fn build_pipeline(
    config: &Config,
    build_missing_index: bool,
) -> Result<Pipeline, AppError> {
    let embedder = embedder(config)?;
    let corpus = load_corpus_from(config)?;
    let index = index_for(config, &corpus, embedder.as_ref(), build_missing_index).await?;
    let llm = llm(config)?;
    let rules = rules(config)?;

    let classifier: Arc<dyn TaskClassifier> = match (config.router.classifier, &llm) {
        (ClassifierKind::Llm, Some(backend)) => {
            Arc::new(LlmClassifier::with_default_prompt(backend.clone()))
        }
        (ClassifierKind::Llm, None) => {
            return Err(AppError::Backend(
                "router.classifier = \"llm\" needs llm.url or llm.script".into(),
            ))
        }
        (ClassifierKind::Keyword, _) => Arc::new(KeywordClassifier::default()),
    };
    let instructions = match &config.compose.prompts_dir {
        Some(dir) => {
            InstructionSet::load_dir(dir).map_err(|e| AppError::Backend(format!("compose: {e}")))?
        }
        None => InstructionSet::default(),
    };

    let mut pipeline = Pipeline::new(Arc::new(corpus), Arc::new(index), embedder)
        .with_router(Router::new(
            rules.clone(),
            classifier,
            config.router.threshold,
        ))
        .with_instructions(instructions)
        .with_settings(settings(config));
    if let Some(llm) = llm {
        pipeline = pipeline.with_llm(llm);
    }
    if config.kg.enabled {
        let client = SparqlClient::new(SparqlClientConfig {
            endpoint: config.kg.endpoint.clone(),
            timeout: Duration::from_millis(config.kg.timeout_ms),
            max_rows: config.kg.max_rows,
            max_inflight: config.kg.max_inflight,
        });
        pipeline = pipeline.with_kg(KgEngine {
            catalog: catalog(config)?,
            rules,
            client,
        });
    }
    if let Some(url) = &config.biblio.url {
        pipeline = pipeline.with_biblio(BiblioClient::new(CoreBiblioConfig {
            url: url.clone(),
            token: config.biblio.token.clone(),
            timeout: Duration::from_millis(config.biblio.timeout_ms),
        }));
    }
    Ok(pipeline)
}
