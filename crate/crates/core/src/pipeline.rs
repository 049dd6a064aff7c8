//! The answer pipeline: route, gather, compose, complete, extract.

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::compose::{
    bibliography, compose_prompt, enrich_bibliography, gather_evidence, BibEntry, BiblioClient,
    ComposeOptions, EvidenceSet, EvidenceSources, InstructionSet,
};
use crate::corpus::{Corpus, DEFAULT_MIN_CHARS};
use crate::embedding::{Embedder, EmbeddingError};
use crate::generate::{
    extract_citations, AnswerProvenance, CompletionBackend, GeneratedAnswer, GenerationRequest,
    Timings,
};
use crate::grounding::{DEFAULT_CONTEXT_CHARS, DEFAULT_THRESHOLD as GROUNDING_THRESHOLD};
use crate::kgfact::KgEngine;
use crate::router::{
    forced, Router, RoutingDecision, TaskLabel, DEFAULT_THRESHOLD as ROUTER_THRESHOLD,
};
use crate::vindex::{EntryMetadata, IndexEntry, IndexError, VectorIndex};

pub const DEFAULT_K: usize = 8;
const EMBED_BATCH: usize = 64;

/// Completion text, model id and attempt count.
type Generated = (String, Option<String>, u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Input,
    Route,
    Retrieve,
    Compose,
    Generate,
    Ingest,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Stage::Input => "input",
            Stage::Route => "route",
            Stage::Retrieve => "retrieve",
            Stage::Compose => "compose",
            Stage::Generate => "generate",
            Stage::Ingest => "ingest",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
#[error("{stage}: {message}")]
pub struct PipelineError {
    pub stage: Stage,
    pub message: String,
}

impl PipelineError {
    pub fn new(stage: Stage, message: impl Into<String>) -> Self {
        Self {
            stage,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSettings {
    pub k: usize,
    pub router_threshold: f64,
    pub grounding_threshold: f64,
    pub budget_chars: usize,
    pub context_chars: usize,
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Sends KG tables through the LLM for a phrased answer instead of
    /// returning the table verbatim.
    pub kg_gloss: bool,
    pub with_heading: bool,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            router_threshold: ROUTER_THRESHOLD,
            grounding_threshold: GROUNDING_THRESHOLD,
            budget_chars: crate::compose::DEFAULT_BUDGET_CHARS,
            context_chars: DEFAULT_CONTEXT_CHARS,
            model_id: "default".to_string(),
            temperature: 0.0,
            max_tokens: 1024,
            kg_gloss: false,
            with_heading: false,
        }
    }
}

/// Per-request adjustments.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    pub k: Option<usize>,
    pub threshold: Option<f64>,
    pub task: Option<TaskLabel>,
    pub temperature: Option<f64>,
    pub budget_chars: Option<usize>,
}

/// Embeds every chunk of `corpus` and returns a frozen index.
pub async fn build_index(
    corpus: &Corpus,
    embedder: &dyn Embedder,
    min_chars: usize,
) -> Result<VectorIndex, PipelineError> {
    build_index_with(corpus, embedder, min_chars, false).await
}

/// Like [`build_index`]; with `embed_heading` each chunk is embedded as
/// `section_path` + blank line + text. Stored chunk text is unchanged.
pub async fn build_index_with(
    corpus: &Corpus,
    embedder: &dyn Embedder,
    min_chars: usize,
    embed_heading: bool,
) -> Result<VectorIndex, PipelineError> {
    let ingest = |e: &dyn std::fmt::Display| PipelineError::new(Stage::Ingest, e.to_string());
    let chunks = corpus.chunks(min_chars.max(1));
    let mut index = VectorIndex::new(embedder.info().dim);
    for batch in chunks.chunks(EMBED_BATCH) {
        let texts: Vec<String> = batch
            .iter()
            .map(|c| {
                if embed_heading {
                    format!("{}\n\n{}", c.section_path, c.text)
                } else {
                    c.text.clone()
                }
            })
            .collect();
        let vectors = embedder
            .embed_batch(&texts)
            .await
            .map_err(|e: EmbeddingError| ingest(&e))?;
        for (chunk, vector) in batch.iter().zip(vectors) {
            let paper = corpus
                .get(&chunk.paper_id)
                .expect("chunk of a corpus paper");
            let metadata = EntryMetadata {
                paper_id: paper.paper_id.clone(),
                title: paper.title.clone(),
                authors: paper.authors.clone(),
                venue: paper.venue.clone(),
                year: paper.year,
                section_path: chunk.section_path.clone(),
                text: chunk.text.clone(),
            };
            index
                .add(IndexEntry {
                    chunk_id: chunk.chunk_id.clone(),
                    vector,
                    metadata,
                })
                .map_err(|e: IndexError| ingest(&e))?;
        }
    }
    index.freeze();
    Ok(index)
}

pub fn default_min_chars() -> usize {
    DEFAULT_MIN_CHARS
}

#[derive(Clone)]
pub struct Pipeline {
    corpus: Arc<Corpus>,
    index: Arc<VectorIndex>,
    embedder: Arc<dyn Embedder>,
    router: Router,
    instructions: InstructionSet,
    llm: Option<Arc<dyn CompletionBackend>>,
    kg: Option<KgEngine>,
    biblio: Option<BiblioClient>,
    settings: PipelineSettings,
}

impl Pipeline {
    pub fn new(corpus: Arc<Corpus>, index: Arc<VectorIndex>, embedder: Arc<dyn Embedder>) -> Self {
        Self {
            corpus,
            index,
            embedder,
            router: Router::default(),
            instructions: InstructionSet::default(),
            llm: None,
            kg: None,
            biblio: None,
            settings: PipelineSettings::default(),
        }
    }

    pub fn with_router(mut self, router: Router) -> Self {
        self.router = router;
        self
    }

    pub fn with_instructions(mut self, instructions: InstructionSet) -> Self {
        self.instructions = instructions;
        self
    }

    pub fn with_llm(mut self, llm: Arc<dyn CompletionBackend>) -> Self {
        self.llm = Some(llm);
        self
    }

    pub fn with_kg(mut self, kg: KgEngine) -> Self {
        self.kg = Some(kg);
        self
    }

    pub fn with_biblio(mut self, biblio: BiblioClient) -> Self {
        self.biblio = Some(biblio);
        self
    }

    pub fn with_settings(mut self, settings: PipelineSettings) -> Self {
        self.settings = settings;
        self
    }

    pub fn settings(&self) -> &PipelineSettings {
        &self.settings
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn index(&self) -> &VectorIndex {
        &self.index
    }

    pub fn router(&self) -> &Router {
        &self.router
    }

    pub fn kg(&self) -> Option<&KgEngine> {
        self.kg.as_ref()
    }

    pub async fn answer(&self, query: &str) -> Result<GeneratedAnswer, PipelineError> {
        self.answer_with(query, &Overrides::default()).await
    }

    pub async fn route(
        &self,
        query: &str,
        threshold: Option<f64>,
    ) -> (RoutingDecision, Option<String>) {
        let routed = self
            .router
            .route_with_threshold(query, threshold.unwrap_or(self.settings.router_threshold))
            .await;
        (routed.decision, routed.warning)
    }

    pub async fn answer_with(
        &self,
        query: &str,
        overrides: &Overrides,
    ) -> Result<GeneratedAnswer, PipelineError> {
        let started = Instant::now();
        let query = query.trim();
        if query.is_empty() {
            return Err(PipelineError::new(Stage::Input, "query is empty"));
        }
        let mut warnings = Vec::new();
        let decision = match overrides.task {
            Some(label) => forced(label),
            None => {
                let (decision, warning) = self.route(query, overrides.threshold).await;
                warnings.extend(warning);
                decision
            }
        };
        let route_ms = started.elapsed().as_millis() as u64;

        let retrieve_started = Instant::now();
        let sources = EvidenceSources {
            corpus: &self.corpus,
            index: &self.index,
            embedder: self.embedder.as_ref(),
            kg: self.kg.as_ref(),
            k: overrides.k.unwrap_or(self.settings.k),
            grounding_threshold: self.settings.grounding_threshold,
            context_chars: self.settings.context_chars,
        };
        let evidence = gather_evidence(query, &decision, &sources)
            .await
            .map_err(|e| PipelineError::new(Stage::Retrieve, e.to_string()))?;
        let retrieve_ms = retrieve_started.elapsed().as_millis() as u64;

        let mut answer = self
            .answer_from_evidence(query, decision, evidence, overrides)
            .await?;
        answer.provenance.warnings.splice(0..0, warnings);
        answer.provenance.timings.route_ms = route_ms;
        answer.provenance.timings.retrieve_ms = retrieve_ms;
        answer.provenance.timings.total_ms = started.elapsed().as_millis() as u64;
        Ok(answer)
    }

    /// Composes and generates from evidence the caller already has. Benchmark
    /// runs use this to inject gold passages or no evidence at all.
    pub async fn answer_from_evidence(
        &self,
        query: &str,
        decision: RoutingDecision,
        evidence: EvidenceSet,
        overrides: &Overrides,
    ) -> Result<GeneratedAnswer, PipelineError> {
        let started = Instant::now();
        let k = overrides.k.unwrap_or(self.settings.k);
        let threshold = overrides
            .threshold
            .unwrap_or(self.settings.router_threshold);
        let kg = evidence.kg.clone();
        let options = ComposeOptions {
            budget_chars: overrides.budget_chars.unwrap_or(self.settings.budget_chars),
            with_heading: self.settings.with_heading,
        };
        let prompt = compose_prompt(query, evidence, &self.instructions, options)
            .map_err(|e| PipelineError::new(Stage::Compose, e.to_string()))?;
        let m = prompt.evidence.m();
        let local_bib = bibliography(&prompt.evidence);

        let verbatim_kg =
            decision.label == TaskLabel::KGFact && (!self.settings.kg_gloss || self.llm.is_none());
        let generation = async {
            if verbatim_kg {
                let text = kg
                    .as_ref()
                    .map(|a| a.render_table(1))
                    .unwrap_or_else(|| "no record found".to_string());
                return Ok((text, None, 0));
            }
            let llm = self.llm.as_ref().ok_or_else(|| {
                PipelineError::new(
                    Stage::Generate,
                    format!(
                        "no completion endpoint configured for {}; set llm.url",
                        decision.label
                    ),
                )
            })?;
            let request = GenerationRequest {
                prompt: prompt.text.clone(),
                model_id: self.settings.model_id.clone(),
                temperature: overrides.temperature.unwrap_or(self.settings.temperature),
                max_tokens: self.settings.max_tokens,
            };
            let completion = llm
                .complete(&request)
                .await
                .map_err(|e| PipelineError::new(Stage::Generate, e.to_string()))?;
            Ok((
                completion.text,
                Some(llm.model_id().to_string()),
                completion.attempts,
            ))
        };
        let enrichment = async {
            match &self.biblio {
                Some(client) if !local_bib.is_empty() => {
                    enrich_bibliography(local_bib.clone(), client).await
                }
                _ => local_bib.clone(),
            }
        };
        let (generated, mut bib): (Result<Generated, PipelineError>, Vec<BibEntry>) =
            tokio::join!(generation, enrichment);
        let (text, model_id, attempts) = generated?;

        let (citations, dropped_markers) = if verbatim_kg {
            ((1..=m as u32).collect::<BTreeSet<u32>>(), Vec::new())
        } else {
            let e = extract_citations(&text, m);
            (e.citations, e.dropped)
        };
        for entry in &mut bib {
            entry.cited = entry.ref_nos.iter().any(|r| citations.contains(r));
        }
        let generate_ms = started.elapsed().as_millis() as u64;
        Ok(GeneratedAnswer {
            text,
            citations,
            dropped_markers,
            ungrounded: prompt.ungrounded,
            bibliography: bib,
            kg,
            provenance: AnswerProvenance {
                task: decision.label,
                routing: decision,
                threshold,
                k,
                model_id,
                attempts,
                dropped_evidence: prompt.dropped.clone(),
                warnings: Vec::new(),
                timings: Timings {
                    generate_ms,
                    total_ms: generate_ms,
                    ..Default::default()
                },
            },
            evidence: prompt.evidence.items().to_vec(),
        })
    }
}
