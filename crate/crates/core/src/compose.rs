//! Evidence gathering, prompt assembly and bibliography.
//!
//! A prompt is the task instruction, the numbered evidence block and the
//! query, joined by blank lines. Evidence is numbered once when gathered and
//! keeps its numbers when the budget forces items out.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::embedding::Embedder;
use crate::grounding::{ground, paper_context, title_similarity, GroundingResult, GroundingStatus};
use crate::kgfact::{render_ref_table, KgAnswer, KgEngine};
use crate::router::{RoutingDecision, TaskLabel};
use crate::text::collapse_whitespace;
use crate::vindex::VectorIndex;

pub const DEFAULT_BUDGET_CHARS: usize = 10_000;
/// Minimum similarity for a bibliographic API match to be accepted.
pub const ENRICH_MATCH_THRESHOLD: f64 = 0.85;

#[derive(Debug, thiserror::Error)]
pub enum ComposeError {
    #[error("budget too small: {needed} characters needed for instruction and query, budget is {budget}")]
    BudgetTooSmall { needed: usize, budget: usize },
    #[error("{label} evidence: {message}")]
    Backend { label: TaskLabel, message: String },
    #[error("instruction template {path}: {cause}")]
    Template { path: String, cause: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EvidenceKind {
    TextChunk,
    PaperFullText,
    KgRow,
    InlineText,
}

impl EvidenceKind {
    pub fn is_textual(self) -> bool {
        matches!(self, EvidenceKind::TextChunk | EvidenceKind::PaperFullText)
    }
}

/// Where an evidence item came from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvidenceSource {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub paper_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chunk_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub template_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub authors: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub venue: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub year: Option<i32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub section_path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceItem {
    pub ref_no: u32,
    pub kind: EvidenceKind,
    pub payload: String,
    pub source: EvidenceSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceSet {
    pub task: TaskLabel,
    items: Vec<EvidenceItem>,
    /// Raw KG result for KGFact requests, including the zero-row case.
    pub kg: Option<KgAnswer>,
    pub grounding: Option<GroundingResult>,
}

impl EvidenceSet {
    /// Numbers `items` 1..m in the given order. Items with a blank payload
    /// are skipped.
    pub fn new(
        task: TaskLabel,
        items: impl IntoIterator<Item = (EvidenceKind, String, EvidenceSource)>,
    ) -> Self {
        let items = items
            .into_iter()
            .filter(|(_, payload, _)| !payload.trim().is_empty())
            .enumerate()
            .map(|(i, (kind, payload, source))| EvidenceItem {
                ref_no: i as u32 + 1,
                kind,
                payload,
                source,
            })
            .collect();
        Self {
            task,
            items,
            kg: None,
            grounding: None,
        }
    }

    pub fn empty(task: TaskLabel) -> Self {
        Self::new(task, [])
    }

    pub fn items(&self) -> &[EvidenceItem] {
        &self.items
    }

    pub fn m(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Removes the item with the largest ref number. The rest keep theirs.
    fn pop_last(&mut self) -> Option<EvidenceItem> {
        self.items.pop()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnrichmentStatus {
    Local,
    Enriched,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BibEntry {
    /// Every evidence ref number that points at this paper, ascending.
    pub ref_nos: Vec<u32>,
    pub paper_id: String,
    pub title: String,
    pub authors: Vec<String>,
    pub venue: Option<String>,
    pub year: Option<i32>,
    pub external_id: Option<String>,
    pub doi: Option<String>,
    pub enrichment_status: EnrichmentStatus,
    /// Whether the answer cites any of `ref_nos`.
    #[serde(default)]
    pub cited: bool,
}

/// One instruction per task.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstructionSet {
    by_task: BTreeMap<&'static str, String>,
}

impl Default for InstructionSet {
    fn default() -> Self {
        let mut by_task = BTreeMap::new();
        by_task.insert(
            TaskLabel::GeneralQA.as_str(),
            include_str!("../data/prompts/general_qa.txt")
                .trim()
                .to_string(),
        );
        by_task.insert(
            TaskLabel::Simplification.as_str(),
            include_str!("../data/prompts/simplification.txt")
                .trim()
                .to_string(),
        );
        by_task.insert(
            TaskLabel::Summarization.as_str(),
            include_str!("../data/prompts/summarization.txt")
                .trim()
                .to_string(),
        );
        by_task.insert(
            TaskLabel::KGFact.as_str(),
            include_str!("../data/prompts/kgfact.txt")
                .trim()
                .to_string(),
        );
        Self { by_task }
    }
}

impl InstructionSet {
    /// Reads `general_qa.txt`, `simplification.txt`, `summarization.txt` and
    /// `kgfact.txt` from `dir`; files that are absent keep the built-in text.
    pub fn load_dir(dir: &Path) -> Result<Self, ComposeError> {
        let mut set = Self::default();
        for (task, file) in [
            (TaskLabel::GeneralQA, "general_qa.txt"),
            (TaskLabel::Simplification, "simplification.txt"),
            (TaskLabel::Summarization, "summarization.txt"),
            (TaskLabel::KGFact, "kgfact.txt"),
        ] {
            let path = dir.join(file);
            if !path.exists() {
                continue;
            }
            let text = std::fs::read_to_string(&path).map_err(|e| ComposeError::Template {
                path: path.display().to_string(),
                cause: e.to_string(),
            })?;
            set.set(task, text.trim())?;
        }
        Ok(set)
    }

    pub fn set(&mut self, task: TaskLabel, instruction: &str) -> Result<(), ComposeError> {
        if instruction.trim().is_empty() {
            return Err(ComposeError::Template {
                path: task.as_str().into(),
                cause: "empty instruction".into(),
            });
        }
        self.by_task.insert(task.as_str(), instruction.to_string());
        Ok(())
    }

    pub fn get(&self, task: TaskLabel) -> &str {
        &self.by_task[task.as_str()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComposedPrompt {
    pub task: TaskLabel,
    pub text: String,
    pub instruction: String,
    pub query: String,
    pub evidence: EvidenceSet,
    pub budget_chars: usize,
    /// Ref numbers removed to fit the budget, ascending.
    pub dropped: Vec<u32>,
    pub ungrounded: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ComposeOptions {
    pub budget_chars: usize,
    /// Appends the section path to text sources.
    pub with_heading: bool,
}

impl Default for ComposeOptions {
    fn default() -> Self {
        Self {
            budget_chars: DEFAULT_BUDGET_CHARS,
            with_heading: false,
        }
    }
}

/// Renders the evidence block. Text items become `[n] payload (source: t)`;
/// KG rows become a table under one header line.
pub fn render_evidence(evidence: &EvidenceSet, with_heading: bool) -> String {
    let mut blocks: Vec<String> = Vec::new();
    let kg_rows: Vec<&EvidenceItem> = evidence
        .items()
        .iter()
        .filter(|i| i.kind == EvidenceKind::KgRow)
        .collect();
    for item in evidence
        .items()
        .iter()
        .filter(|i| i.kind != EvidenceKind::KgRow)
    {
        let source = match (&item.source.title, &item.source.section_path) {
            (Some(t), Some(s)) if with_heading && !s.is_empty() => format!("{t}, {s}"),
            (Some(t), _) => t.clone(),
            (None, _) => "user-provided text".to_string(),
        };
        blocks.push(format!(
            "[{}] {} (source: {source})",
            item.ref_no, item.payload
        ));
    }
    if !kg_rows.is_empty() {
        let header = evidence
            .kg
            .as_ref()
            .map(|a| a.table_lines().0)
            .unwrap_or_default();
        blocks.push(render_ref_table(
            &header,
            kg_rows
                .iter()
                .map(|i| (i.ref_no as usize, i.payload.as_str())),
        ));
    }
    blocks.join("\n")
}

fn assemble(instruction: &str, evidence_block: &str, query: &str) -> String {
    if evidence_block.is_empty() {
        format!("{instruction}\n\n{query}")
    } else {
        format!("{instruction}\n\n{evidence_block}\n\n{query}")
    }
}

pub fn compose_prompt(
    query: &str,
    mut evidence: EvidenceSet,
    instructions: &InstructionSet,
    options: ComposeOptions,
) -> Result<ComposedPrompt, ComposeError> {
    let instruction = instructions.get(evidence.task).to_string();
    let bare = assemble(&instruction, "", query).chars().count();
    if bare > options.budget_chars {
        return Err(ComposeError::BudgetTooSmall {
            needed: bare,
            budget: options.budget_chars,
        });
    }
    let mut dropped = Vec::new();
    let text = loop {
        let text = assemble(
            &instruction,
            &render_evidence(&evidence, options.with_heading),
            query,
        );
        if text.chars().count() <= options.budget_chars {
            break text;
        }
        let item = evidence
            .pop_last()
            .expect("bare prompt fits, so some item must remain");
        dropped.push(item.ref_no);
    };
    dropped.reverse();
    Ok(ComposedPrompt {
        task: evidence.task,
        text,
        instruction,
        query: query.to_string(),
        ungrounded: evidence.is_empty(),
        evidence,
        budget_chars: options.budget_chars,
        dropped,
    })
}

/// Backends available to [`gather_evidence`].
pub struct EvidenceSources<'a> {
    pub corpus: &'a Corpus,
    pub index: &'a VectorIndex,
    pub embedder: &'a dyn Embedder,
    pub kg: Option<&'a KgEngine>,
    pub k: usize,
    pub grounding_threshold: f64,
    pub context_chars: usize,
}

pub async fn gather_evidence(
    query: &str,
    decision: &RoutingDecision,
    sources: &EvidenceSources<'_>,
) -> Result<EvidenceSet, ComposeError> {
    let label = decision.label;
    let backend = |message: String| ComposeError::Backend { label, message };
    match label {
        TaskLabel::GeneralQA => {
            if sources.index.is_empty() || sources.k == 0 {
                return Ok(EvidenceSet::empty(label));
            }
            let q = sources
                .embedder
                .embed(query)
                .await
                .map_err(|e| backend(e.to_string()))?;
            let hits = sources
                .index
                .search(&q, sources.k)
                .map_err(|e| backend(e.to_string()))?;
            Ok(EvidenceSet::new(
                label,
                hits.into_iter().map(|h| {
                    let m = h.metadata;
                    let source = EvidenceSource {
                        paper_id: Some(m.paper_id),
                        chunk_id: Some(h.chunk_id),
                        title: Some(m.title),
                        authors: m.authors,
                        venue: m.venue,
                        year: m.year,
                        section_path: Some(m.section_path),
                        score: Some(h.score),
                        ..Default::default()
                    };
                    (
                        EvidenceKind::TextChunk,
                        collapse_whitespace(&m.text),
                        source,
                    )
                }),
            ))
        }
        TaskLabel::Simplification | TaskLabel::Summarization => {
            let result = ground(query, sources.corpus, sources.grounding_threshold);
            let item = match result.status {
                GroundingStatus::Matched => {
                    let id = result.paper_id.as_deref().unwrap_or_default();
                    let doc = sources
                        .corpus
                        .get(id)
                        .ok_or_else(|| backend(format!("grounded paper {id} not in corpus")))?;
                    let source = EvidenceSource {
                        paper_id: Some(doc.paper_id.clone()),
                        title: Some(doc.title.clone()),
                        authors: doc.authors.clone(),
                        venue: doc.venue.clone(),
                        year: doc.year,
                        score: result.similarity,
                        ..Default::default()
                    };
                    (
                        EvidenceKind::PaperFullText,
                        paper_context(doc, sources.context_chars),
                        source,
                    )
                }
                GroundingStatus::NoMatch => (
                    EvidenceKind::InlineText,
                    result.inline_text.clone().unwrap_or_default(),
                    EvidenceSource::default(),
                ),
            };
            let mut set = EvidenceSet::new(label, [item]);
            set.grounding = Some(result);
            Ok(set)
        }
        TaskLabel::KGFact => {
            let engine = sources
                .kg
                .ok_or_else(|| backend("no knowledge-graph endpoint configured".into()))?;
            let answer = engine
                .answer(query, sources.corpus.titles())
                .await
                .map_err(|e| backend(e.to_string()))?;
            let (_, lines) = answer.table_lines();
            let mut set = EvidenceSet::new(
                label,
                lines.into_iter().map(|line| {
                    let source = EvidenceSource {
                        template_id: Some(answer.template_id.clone()),
                        endpoint: Some(answer.endpoint.clone()),
                        ..Default::default()
                    };
                    (EvidenceKind::KgRow, line, source)
                }),
            );
            set.kg = Some(answer);
            Ok(set)
        }
    }
}

/// One entry per distinct paper among the textual evidence, in order of
/// first reference.
pub fn bibliography(evidence: &EvidenceSet) -> Vec<BibEntry> {
    let mut out: Vec<BibEntry> = Vec::new();
    for item in evidence.items().iter().filter(|i| i.kind.is_textual()) {
        let Some(paper_id) = item.source.paper_id.clone() else {
            continue;
        };
        if let Some(e) = out.iter_mut().find(|e| e.paper_id == paper_id) {
            e.ref_nos.push(item.ref_no);
            continue;
        }
        out.push(BibEntry {
            ref_nos: vec![item.ref_no],
            paper_id,
            title: item.source.title.clone().unwrap_or_default(),
            authors: item.source.authors.clone(),
            venue: item.source.venue.clone(),
            year: item.source.year,
            external_id: None,
            doi: None,
            enrichment_status: EnrichmentStatus::Local,
            cited: false,
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiblioMatch {
    pub id: String,
    pub title: String,
    #[serde(default)]
    pub doi: Option<String>,
    #[serde(default)]
    pub year: Option<i32>,
    #[serde(default)]
    pub venue: Option<String>,
    #[serde(default)]
    pub authors: Vec<String>,
}

#[derive(Deserialize)]
struct SearchResponse {
    matches: Vec<BiblioMatch>,
}

#[derive(Debug, Clone)]
pub struct BiblioConfig {
    pub url: String,
    pub token: Option<String>,
    pub timeout: Duration,
}

/// Client for a scholarly-metadata API with a title-search route.
#[derive(Debug, Clone)]
pub struct BiblioClient {
    config: BiblioConfig,
    http: reqwest::Client,
}

impl BiblioClient {
    pub fn new(config: BiblioConfig) -> Self {
        let http = reqwest::Client::builder()
            .timeout(config.timeout)
            .build()
            .unwrap_or_default();
        Self { config, http }
    }

    pub async fn search(&self, title: &str) -> Result<Vec<BiblioMatch>, String> {
        let url = format!("{}/search", self.config.url.trim_end_matches('/'));
        let mut req = self.http.get(url).query(&[("title", title)]);
        if let Some(token) = &self.config.token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().await.map_err(|e| e.to_string())?;
        if !resp.status().is_success() {
            return Err(format!("HTTP {}", resp.status().as_u16()));
        }
        resp.json::<SearchResponse>()
            .await
            .map(|r| r.matches)
            .map_err(|e| e.to_string())
    }
}

/// Looks every entry up by title, concurrently. Entries already enriched
/// are left alone; a failed or unmatched lookup marks the entry `Failed`
/// and keeps its local fields.
pub async fn enrich_bibliography(entries: Vec<BibEntry>, client: &BiblioClient) -> Vec<BibEntry> {
    let lookups = entries.into_iter().map(|mut entry| async move {
        if entry.enrichment_status == EnrichmentStatus::Enriched {
            return entry;
        }
        match client.search(&entry.title).await {
            Ok(matches) => {
                let best = matches
                    .into_iter()
                    .map(|m| (title_similarity(&m.title, &entry.title), m))
                    .filter(|(s, _)| *s >= ENRICH_MATCH_THRESHOLD)
                    .fold(None::<(f64, BiblioMatch)>, |best, (s, m)| match best {
                        Some((bs, bm)) if bs >= s => Some((bs, bm)),
                        _ => Some((s, m)),
                    });
                match best {
                    Some((_, m)) => {
                        entry.external_id = Some(m.id);
                        entry.doi = m.doi.map(|d| d.to_lowercase());
                        entry.venue = entry.venue.or(m.venue);
                        entry.year = entry.year.or(m.year);
                        if entry.authors.is_empty() {
                            entry.authors = m.authors;
                        }
                        entry.enrichment_status = EnrichmentStatus::Enriched;
                    }
                    None => entry.enrichment_status = EnrichmentStatus::Failed,
                }
            }
            Err(cause) => {
                tracing::warn!(title = %entry.title, %cause, "bibliographic lookup failed");
                entry.enrichment_status = EnrichmentStatus::Failed;
            }
        }
        entry
    });
    futures::future::join_all(lookups).await
}

#[cfg(test)]
mod tests {
    use super::*;

    fn text_item(payload: &str, paper: &str) -> (EvidenceKind, String, EvidenceSource) {
        let source = EvidenceSource {
            paper_id: Some(paper.into()),
            title: Some(format!("Title {paper}")),
            ..Default::default()
        };
        (EvidenceKind::TextChunk, payload.to_string(), source)
    }

    #[test]
    fn two_chunks_then_query() {
        let ev = EvidenceSet::new(
            TaskLabel::GeneralQA,
            [text_item("alpha", "p1"), text_item("beta", "p2")],
        );
        let instr = InstructionSet::default();
        let p = compose_prompt("What is alpha?", ev, &instr, ComposeOptions::default()).unwrap();
        let expected = format!(
            "{}\n\n[1] alpha (source: Title p1)\n[2] beta (source: Title p2)\n\nWhat is alpha?",
            instr.get(TaskLabel::GeneralQA)
        );
        assert_eq!(p.text, expected);
        assert!(!p.ungrounded);
        assert!(p.dropped.is_empty());
    }

    #[test]
    fn empty_evidence_is_ungrounded() {
        let instr = InstructionSet::default();
        let p = compose_prompt(
            "q?",
            EvidenceSet::empty(TaskLabel::GeneralQA),
            &instr,
            ComposeOptions::default(),
        )
        .unwrap();
        assert_eq!(p.text, format!("{}\n\nq?", instr.get(TaskLabel::GeneralQA)));
        assert!(p.ungrounded);
    }

    #[test]
    fn budget_drops_largest_ref_first() {
        let instr = InstructionSet::default();
        let items = [
            text_item(&"a".repeat(100), "p1"),
            text_item(&"b".repeat(100), "p2"),
            text_item(&"c".repeat(100), "p3"),
        ];
        let full = compose_prompt(
            "q",
            EvidenceSet::new(TaskLabel::GeneralQA, items.clone()),
            &instr,
            ComposeOptions::default(),
        )
        .unwrap();
        let budget = full.text.chars().count() - 1;
        let p = compose_prompt(
            "q",
            EvidenceSet::new(TaskLabel::GeneralQA, items),
            &instr,
            ComposeOptions {
                budget_chars: budget,
                with_heading: false,
            },
        )
        .unwrap();
        assert_eq!(p.dropped, vec![3]);
        assert_eq!(
            p.evidence
                .items()
                .iter()
                .map(|i| i.ref_no)
                .collect::<Vec<_>>(),
            vec![1, 2]
        );
        assert!(p.text.contains("[2] bbb"));
    }

    #[test]
    fn budget_too_small() {
        let err = compose_prompt(
            "q",
            EvidenceSet::empty(TaskLabel::GeneralQA),
            &InstructionSet::default(),
            ComposeOptions {
                budget_chars: 10,
                with_heading: false,
            },
        )
        .unwrap_err();
        assert!(err.to_string().starts_with("budget too small"));
    }

    #[test]
    fn bibliography_merges_same_paper() {
        let ev = EvidenceSet::new(
            TaskLabel::GeneralQA,
            [
                text_item("x", "p1"),
                text_item("y", "p2"),
                text_item("z", "p1"),
            ],
        );
        let bib = bibliography(&ev);
        assert_eq!(bib.len(), 2);
        assert_eq!(bib[0].ref_nos, vec![1, 3]);
        assert_eq!(bib[1].ref_nos, vec![2]);
        assert!(bib
            .iter()
            .all(|b| b.enrichment_status == EnrichmentStatus::Local));
    }

    #[test]
    fn inline_text_has_generic_source() {
        let ev = EvidenceSet::new(
            TaskLabel::Summarization,
            [(
                EvidenceKind::InlineText,
                "Cells divide.".to_string(),
                EvidenceSource::default(),
            )],
        );
        assert_eq!(
            render_evidence(&ev, false),
            "[1] Cells divide. (source: user-provided text)"
        );
        assert!(bibliography(&ev).is_empty());
    }

    #[test]
    fn blank_payloads_are_not_numbered() {
        let ev = EvidenceSet::new(
            TaskLabel::GeneralQA,
            [text_item(" ", "p1"), text_item("y", "p2")],
        );
        assert_eq!(ev.m(), 1);
        assert_eq!(ev.items()[0].ref_no, 1);
    }
}
