//! Task routing: identifier pre-check, pluggable classifier, threshold fallback.
//!
//! `route` never fails. An identifier term (h-index, ORCID, ...) sends the
//! query to [`TaskLabel::KGFact`] before any classifier runs; otherwise the
//! classifier's label is used unless its confidence is under the threshold or
//! the backend errored, in which case the query falls back to
//! [`TaskLabel::GeneralQA`].

use std::fmt;
use std::path::Path;
use std::sync::{Arc, LazyLock};

use async_trait::async_trait;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::generate::{CompletionBackend, GenerationRequest};
use crate::text::{contains_phrase, match_tokens};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_RULES: &str = include_str!("../data/router_rules.txt");
pub const DEFAULT_CLASSIFIER_PROMPT: &str = include_str!("../data/router_prompt.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskLabel {
    GeneralQA,
    Simplification,
    Summarization,
    KGFact,
}

impl TaskLabel {
    pub const ALL: [TaskLabel; 4] = [
        TaskLabel::GeneralQA,
        TaskLabel::Simplification,
        TaskLabel::Summarization,
        TaskLabel::KGFact,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskLabel::GeneralQA => "GeneralQA",
            TaskLabel::Simplification => "Simplification",
            TaskLabel::Summarization => "Summarization",
            TaskLabel::KGFact => "KGFact",
        }
    }

    /// Parses a label name leniently (`KG-Fact`, `general qa`, `summary`, ...).
    pub fn parse(s: &str) -> Option<Self> {
        match_tokens(s).iter().find_map(|t| label_for_token(t))
    }
}

fn label_for_token(t: &str) -> Option<TaskLabel> {
    match t {
        "generalqa" | "qa" | "general" => Some(TaskLabel::GeneralQA),
        "simplification" | "simplify" => Some(TaskLabel::Simplification),
        "summarization" | "summarisation" | "summary" | "summarize" => {
            Some(TaskLabel::Summarization)
        }
        "kgfact" | "kg" => Some(TaskLabel::KGFact),
        _ => None,
    }
}

impl fmt::Display for TaskLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Trigger {
    RulePreCheck,
    Classifier,
    Fallback,
    /// The caller fixed the label (benchmark runs, request overrides).
    Override,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingDecision {
    pub label: TaskLabel,
    pub confidence: f64,
    pub trigger: Trigger,
    pub matched_rule: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum RouterError {
    #[error("classifier backend failed: {0}")]
    Backend(String),
    #[error("malformed classifier reply: {0:?}")]
    MalformedReply(String),
    #[error("cannot read rule table {path}: {cause}")]
    RuleFile { path: String, cause: String },
}

/// Identifier terms for the KG pre-check.
#[derive(Debug, Clone)]
pub struct RuleTable {
    terms: Vec<(String, Vec<String>)>,
}

impl Default for RuleTable {
    fn default() -> Self {
        Self::parse(DEFAULT_RULES)
    }
}

impl RuleTable {
    /// One term per line; `#` starts a comment.
    pub fn parse(src: &str) -> Self {
        let mut table = Self { terms: Vec::new() };
        for line in src.lines() {
            let term = line.split('#').next().unwrap_or("").trim();
            table.add(term);
        }
        table
    }

    pub fn load(path: &Path) -> Result<Self, RouterError> {
        std::fs::read_to_string(path)
            .map(|s| Self::parse(&s))
            .map_err(|e| RouterError::RuleFile {
                path: path.display().to_string(),
                cause: e.to_string(),
            })
    }

    pub fn add(&mut self, term: &str) {
        let tokens = match_tokens(term);
        if !tokens.is_empty() && !self.terms.iter().any(|(_, t)| *t == tokens) {
            self.terms.push((term.to_string(), tokens));
        }
    }

    pub fn extend(&mut self, other: &RuleTable) {
        for (term, _) in &other.terms {
            self.add(term);
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.terms.iter().map(|(t, _)| t.as_str())
    }

    /// First rule term present in `query` as whole words.
    pub fn first_match(&self, query: &str) -> Option<&str> {
        let tokens = match_tokens(query);
        self.terms
            .iter()
            .find(|(_, t)| contains_phrase(&tokens, t))
            .map(|(term, _)| term.as_str())
    }
}

pub fn rule_precheck(query: &str, rules: &RuleTable) -> Option<RoutingDecision> {
    rules.first_match(query).map(|term| RoutingDecision {
        label: TaskLabel::KGFact,
        confidence: 1.0,
        trigger: Trigger::RulePreCheck,
        matched_rule: Some(term.to_string()),
    })
}

#[async_trait]
pub trait TaskClassifier: Send + Sync {
    /// Returns a label and a confidence in `[0, 1]`.
    async fn classify(&self, query: &str) -> Result<(TaskLabel, f64), RouterError>;
}

/// Deterministic cue-phrase scorer.
///
/// Every label accumulates the weights of its cue phrases found in the query;
/// GeneralQA also starts from a prior. The winner's share of the total score
/// is the confidence.
#[derive(Debug, Clone)]
pub struct KeywordClassifier {
    cues: Vec<(TaskLabel, Vec<String>, f64)>,
    prior: f64,
}

const SUMMARIZATION_CUES: &[&str] = &[
    "summarize",
    "summarise",
    "summary",
    "summaries",
    "summarization",
    "tldr",
    "tl dr",
    "key points",
    "main points",
    "key findings",
    "main findings",
    "in a nutshell",
    "gist",
    "condense",
    "recap",
    "overview of the paper",
    "brief overview",
    "one sentence",
];
const SIMPLIFICATION_CUES: &[&str] = &[
    "simplify",
    "simplified",
    "simpler",
    "simple terms",
    "simple words",
    "plain language",
    "plain english",
    "layman",
    "laymans",
    "lay audience",
    "eli5",
    "explain like",
    "nonexpert",
    "easier to understand",
    "easy to understand",
    "rewrite for",
    "rephrase",
    "for a child",
    "high school student",
    "less technical",
    "without jargon",
];
const KGFACT_CUES: &[&str] = &[
    "coauthor",
    "coauthors",
    "coauthored",
    "collaborators",
    "affiliation",
    "affiliations",
    "affiliated",
    "institution",
    "how many papers",
    "how many publications",
    "how many works",
    "how many citations",
    "how many times",
    "citation count",
    "number of citations",
    "number of papers",
    "number of publications",
    "times cited",
    "most cited",
    "who wrote",
    "who authored",
    "authors of",
    "written by",
    "which journal",
    "which venue",
    "which conference",
    "what venue",
    "what journal",
    "what year",
    "which year",
    "publication year",
    "published in",
    "papers by",
    "works by",
    "publications by",
    "papers cite",
    "works cite",
    "cite",
    "cites",
    "citing",
    "references of",
    "reference list",
    "metadata",
];
const GENERAL_QA_CUES: &[&str] = &[
    "compare",
    "difference between",
    "why",
    "explain how",
    "what are the",
];

impl Default for KeywordClassifier {
    fn default() -> Self {
        let mut cues = Vec::new();
        for (label, list, weight) in [
            (TaskLabel::Summarization, SUMMARIZATION_CUES, 3.0),
            (TaskLabel::Simplification, SIMPLIFICATION_CUES, 3.0),
            (TaskLabel::KGFact, KGFACT_CUES, 3.0),
            (TaskLabel::GeneralQA, GENERAL_QA_CUES, 1.0),
        ] {
            for cue in list {
                cues.push((label, match_tokens(cue), weight));
            }
        }
        Self { cues, prior: 1.0 }
    }
}

impl KeywordClassifier {
    pub fn scores(&self, query: &str) -> [(TaskLabel, f64); 4] {
        let tokens = match_tokens(query);
        let mut scores = TaskLabel::ALL.map(|l| {
            (
                l,
                if l == TaskLabel::GeneralQA {
                    self.prior
                } else {
                    0.0
                },
            )
        });
        for (label, cue, weight) in &self.cues {
            if contains_phrase(&tokens, cue) {
                scores
                    .iter_mut()
                    .find(|(l, _)| l == label)
                    .expect("label present")
                    .1 += weight;
            }
        }
        scores
    }

    pub fn classify_sync(&self, query: &str) -> (TaskLabel, f64) {
        let scores = self.scores(query);
        let total: f64 = scores.iter().map(|(_, s)| s).sum();
        // Ties resolve to the earliest label in `TaskLabel::ALL`.
        let (label, best) =
            scores
                .iter()
                .copied()
                .fold((TaskLabel::GeneralQA, f64::MIN), |acc, (l, s)| {
                    if s > acc.1 {
                        (l, s)
                    } else {
                        acc
                    }
                });
        (label, if total > 0.0 { best / total } else { 0.0 })
    }
}

#[async_trait]
impl TaskClassifier for KeywordClassifier {
    async fn classify(&self, query: &str) -> Result<(TaskLabel, f64), RouterError> {
        Ok(self.classify_sync(query))
    }
}

/// Classifier backed by a completion endpoint prompted to answer with one
/// label and a probability.
pub struct LlmClassifier {
    backend: Arc<dyn CompletionBackend>,
    instruction: String,
}

impl LlmClassifier {
    /// `instruction` must contain a `{{query}}` placeholder.
    pub fn new(backend: Arc<dyn CompletionBackend>, instruction: impl Into<String>) -> Self {
        Self {
            backend,
            instruction: instruction.into(),
        }
    }

    pub fn with_default_prompt(backend: Arc<dyn CompletionBackend>) -> Self {
        Self::new(backend, DEFAULT_CLASSIFIER_PROMPT)
    }
}

static PROBABILITY: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?:^|[^\d.])((?:0?\.\d+)|(?:[01](?:\.\d+)?))(?:[^\d.]|$)")
        .expect("probability regex")
});

/// Parses `<label> <probability>` (or a JSON object with `label` and
/// `confidence`) out of a classifier reply.
pub fn parse_classifier_reply(reply: &str) -> Result<(TaskLabel, f64), RouterError> {
    #[derive(Deserialize)]
    struct Structured {
        label: String,
        confidence: f64,
    }
    if let Ok(s) = serde_json::from_str::<Structured>(reply.trim()) {
        if let Some(label) = TaskLabel::parse(&s.label) {
            if (0.0..=1.0).contains(&s.confidence) {
                return Ok((label, s.confidence));
            }
        }
        return Err(RouterError::MalformedReply(reply.to_string()));
    }
    let label =
        TaskLabel::parse(reply).ok_or_else(|| RouterError::MalformedReply(reply.to_string()))?;
    let confidence = PROBABILITY
        .captures_iter(reply)
        .filter_map(|c| c[1].parse::<f64>().ok())
        .find(|p| (0.0..=1.0).contains(p))
        .ok_or_else(|| RouterError::MalformedReply(reply.to_string()))?;
    Ok((label, confidence))
}

#[async_trait]
impl TaskClassifier for LlmClassifier {
    async fn classify(&self, query: &str) -> Result<(TaskLabel, f64), RouterError> {
        let request = GenerationRequest {
            prompt: self.instruction.replace("{{query}}", query),
            model_id: self.backend.model_id().to_string(),
            temperature: 0.0,
            max_tokens: 16,
        };
        let completion = self
            .backend
            .complete(&request)
            .await
            .map_err(|e| RouterError::Backend(e.to_string()))?;
        parse_classifier_reply(&completion.text)
    }
}

/// A routing decision plus a warning when the fallback was forced by a
/// backend failure.
#[derive(Debug, Clone, PartialEq)]
pub struct Routed {
    pub decision: RoutingDecision,
    pub warning: Option<String>,
}

#[derive(Clone)]
pub struct Router {
    rules: RuleTable,
    classifier: Arc<dyn TaskClassifier>,
    threshold: f64,
}

impl Default for Router {
    fn default() -> Self {
        Self::new(
            RuleTable::default(),
            Arc::new(KeywordClassifier::default()),
            DEFAULT_THRESHOLD,
        )
    }
}

impl Router {
    pub fn new(rules: RuleTable, classifier: Arc<dyn TaskClassifier>, threshold: f64) -> Self {
        Self {
            rules,
            classifier,
            threshold: threshold.clamp(0.0, 1.0),
        }
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn rules(&self) -> &RuleTable {
        &self.rules
    }

    pub async fn route(&self, query: &str) -> Routed {
        self.route_with_threshold(query, self.threshold).await
    }

    pub async fn route_with_threshold(&self, query: &str, threshold: f64) -> Routed {
        if let Some(decision) = rule_precheck(query, &self.rules) {
            return Routed {
                decision,
                warning: None,
            };
        }
        match self.classifier.classify(query).await {
            Ok((label, confidence)) if confidence >= threshold => Routed {
                decision: RoutingDecision {
                    label,
                    confidence,
                    trigger: Trigger::Classifier,
                    matched_rule: None,
                },
                warning: None,
            },
            Ok((_, confidence)) => Routed {
                decision: fallback(confidence),
                warning: None,
            },
            Err(e) => {
                tracing::warn!(error = %e, "classifier failed; falling back to GeneralQA");
                Routed {
                    decision: fallback(0.0),
                    warning: Some(e.to_string()),
                }
            }
        }
    }
}

/// A decision that bypasses routing.
pub fn forced(label: TaskLabel) -> RoutingDecision {
    RoutingDecision {
        label,
        confidence: 1.0,
        trigger: Trigger::Override,
        matched_rule: None,
    }
}

fn fallback(confidence: f64) -> RoutingDecision {
    RoutingDecision {
        label: TaskLabel::GeneralQA,
        confidence,
        trigger: Trigger::Fallback,
        matched_rule: None,
    }
}
