//! Benchmark runs through the pipeline.
//!
//! Three modes: `orig` hands the gold passages to the generator, `retrieval`
//! runs the whole pipeline, and `zero` sends the question with no evidence.

use std::collections::BTreeMap;
use std::path::Path;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::metrics::{
    best_reference_score, citation_prf, compression_ratio, label_metrics, CitationJudgment,
    LabeledPrediction, SummaryMetric, SummaryPair, Verdict,
};
use super::{mean, EvalError, MetricReport};
use crate::compose::{EvidenceKind, EvidenceSet, EvidenceSource};
use crate::generate::GeneratedAnswer;
use crate::pipeline::{Overrides, Pipeline};
use crate::router::{forced, TaskLabel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchMode {
    Orig,
    Retrieval,
    #[serde(rename = "zero")]
    ZeroContext,
}

impl BenchMode {
    pub fn as_str(self) -> &'static str {
        match self {
            BenchMode::Orig => "orig",
            BenchMode::Retrieval => "retrieval",
            BenchMode::ZeroContext => "zero",
        }
    }
}

impl std::str::FromStr for BenchMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "orig" => Ok(BenchMode::Orig),
            "retrieval" => Ok(BenchMode::Retrieval),
            "zero" => Ok(BenchMode::ZeroContext),
            other => Err(format!(
                "unknown mode {other:?}; expected orig, retrieval or zero"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Passages {
    One(String),
    Many(Vec<String>),
}

impl Passages {
    pub fn as_slice(&self) -> &[String] {
        match self {
            Passages::One(s) => std::slice::from_ref(s),
            Passages::Many(v) => v,
        }
    }
}

/// One dataset record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchExample {
    pub id: String,
    pub question: String,
    #[serde(default)]
    pub gold_context: Option<Passages>,
    #[serde(default)]
    pub gold_label: Option<String>,
    #[serde(default)]
    pub gold_answer: Option<String>,
    #[serde(default)]
    pub gold_citations: Option<Vec<String>>,
    #[serde(default)]
    pub references: Option<Vec<String>>,
}

/// Parses line-delimited JSON records. Blank lines are skipped.
pub fn parse_dataset(src: &str) -> Result<Vec<BenchExample>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in src.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| EvalError::Parse {
            line: i + 1,
            message,
        };
        let ex: BenchExample = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        if ex.id.trim().is_empty() || ex.question.trim().is_empty() {
            return Err(bad("id and question must be non-empty".into()));
        }
        if ex.gold_label.is_none() && ex.gold_answer.is_none() {
            return Err(bad("record needs gold_label or gold_answer".into()));
        }
        if let Some(l) = &ex.gold_label {
            if Verdict::parse(l).is_none() {
                return Err(bad(format!("gold_label {l:?} is not yes, maybe or no")));
            }
        }
        if out.iter().any(|o: &BenchExample| o.id == ex.id) {
            return Err(bad(format!("duplicate id {:?}", ex.id)));
        }
        out.push(ex);
    }
    Ok(out)
}

pub fn load_dataset(path: &Path) -> Result<Vec<BenchExample>, EvalError> {
    let src = std::fs::read_to_string(path).map_err(|e| EvalError::Io {
        path: path.display().to_string(),
        cause: e.to_string(),
    })?;
    parse_dataset(&src)
}

/// What happened to one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchTrace {
    pub id: String,
    pub mode: BenchMode,
    pub question: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub answer: Option<GeneratedAnswer>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predicted_label: Option<Verdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchOutcome {
    pub report: MetricReport,
    pub traces: Vec<BenchTrace>,
}

async fn run_one(pipeline: &Pipeline, ex: &BenchExample, mode: BenchMode) -> BenchTrace {
    let qa = forced(TaskLabel::GeneralQA);
    let overrides = Overrides {
        task: Some(TaskLabel::GeneralQA),
        ..Default::default()
    };
    let result = match mode {
        BenchMode::Orig => {
            let passages = ex
                .gold_context
                .as_ref()
                .map(Passages::as_slice)
                .unwrap_or_default();
            let evidence = EvidenceSet::new(
                TaskLabel::GeneralQA,
                passages.iter().map(|p| {
                    let source = EvidenceSource {
                        title: Some("gold context".into()),
                        ..Default::default()
                    };
                    (EvidenceKind::InlineText, p.clone(), source)
                }),
            );
            pipeline
                .answer_from_evidence(&ex.question, qa, evidence, &overrides)
                .await
        }
        BenchMode::Retrieval => pipeline.answer_with(&ex.question, &overrides).await,
        BenchMode::ZeroContext => {
            pipeline
                .answer_from_evidence(
                    &ex.question,
                    qa,
                    EvidenceSet::empty(TaskLabel::GeneralQA),
                    &overrides,
                )
                .await
        }
    };
    match result {
        Ok(answer) => BenchTrace {
            id: ex.id.clone(),
            mode,
            question: ex.question.clone(),
            predicted_label: Verdict::from_answer(&answer.text),
            answer: Some(answer),
            error: None,
        },
        Err(e) => BenchTrace {
            id: ex.id.clone(),
            mode,
            question: ex.question.clone(),
            answer: None,
            error: Some(e.to_string()),
            predicted_label: None,
        },
    }
}

/// Paper ids and DOIs of the bibliography entries the answer cites.
fn cited_sources(answer: &GeneratedAnswer) -> Vec<String> {
    let mut out = Vec::new();
    for b in answer.bibliography.iter().filter(|b| b.cited) {
        out.push(b.paper_id.clone());
        out.extend(b.doi.clone());
    }
    out
}

/// Runs every example with at most `parallelism` in flight and scores the
/// results. Stage errors are recorded per example; the run continues.
pub async fn run_benchmark(
    pipeline: &Pipeline,
    examples: &[BenchExample],
    mode: BenchMode,
    parallelism: usize,
) -> Result<BenchOutcome, EvalError> {
    if examples.is_empty() {
        return Err(EvalError::EmptyInput("dataset"));
    }
    let mut traces: Vec<BenchTrace> = stream::iter(examples)
        .map(|ex| run_one(pipeline, ex, mode))
        .buffer_unordered(parallelism.max(1))
        .collect()
        .await;
    traces.sort_by(|a, b| a.id.cmp(&b.id));
    let mut by_id: BTreeMap<&str, &BenchExample> = BTreeMap::new();
    for ex in examples {
        by_id.insert(&ex.id, ex);
    }

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut cite = (Vec::new(), Vec::new(), Vec::new());
    let mut rouge: BTreeMap<SummaryMetric, Vec<f64>> = BTreeMap::new();
    let mut compression = Vec::new();
    let mut errors = 0usize;
    let mut ungrounded = 0usize;
    for t in &traces {
        let ex = by_id[t.id.as_str()];
        let mut row = BTreeMap::new();
        row.insert("id".to_string(), json!(t.id));
        if let Some(e) = &t.error {
            errors += 1;
            row.insert("error".into(), json!(e));
        }
        let answer_text = t.answer.as_ref().map(|a| a.text.as_str());
        if let Some(a) = &t.answer {
            ungrounded += a.ungrounded as usize;
            row.insert("ungrounded".into(), json!(a.ungrounded));
        }
        if let Some(gold) = ex.gold_label.as_deref().and_then(Verdict::parse) {
            labels.push(LabeledPrediction {
                predicted: t.predicted_label,
                gold,
            });
            row.insert("gold_label".into(), json!(gold));
            row.insert("predicted_label".into(), json!(t.predicted_label));
            row.insert("correct".into(), json!(t.predicted_label == Some(gold)));
        }
        if let Some(gold) = &ex.gold_citations {
            let predicted = t.answer.as_ref().map(cited_sources).unwrap_or_default();
            let prf = citation_prf(&CitationJudgment::new(predicted, gold));
            cite.0.push(prf.precision);
            cite.1.push(prf.recall);
            cite.2.push(prf.f1);
            row.insert("citation_precision".into(), json!(prf.precision));
            row.insert("citation_recall".into(), json!(prf.recall));
            row.insert("citation_f1".into(), json!(prf.f1));
        }
        let references = ex
            .references
            .clone()
            .or_else(|| ex.gold_answer.clone().map(|a| vec![a]));
        if let (Some(references), Some(generated)) = (references, answer_text) {
            let source = ex
                .gold_context
                .as_ref()
                .map(|p| p.as_slice().join("\n\n"))
                .unwrap_or_default();
            let pair = SummaryPair {
                source_text: source,
                generated: generated.to_string(),
                references,
            };
            for m in SummaryMetric::ALL {
                let v = best_reference_score(&pair, m)?;
                rouge.entry(m).or_default().push(v);
                row.insert(m.name().into(), json!(v));
            }
            if ex.gold_context.is_some() {
                if let Ok(c) = compression_ratio(&pair) {
                    compression.push(c);
                    row.insert("compression_ratio".into(), json!(c));
                }
            }
        }
        rows.push(row);
    }

    let mut report = MetricReport {
        per_example: rows,
        ..Default::default()
    };
    report
        .aggregate
        .insert("examples".into(), json!(traces.len()));
    report.aggregate.insert("errors".into(), json!(errors));
    report
        .aggregate
        .insert("ungrounded".into(), json!(ungrounded));
    if !labels.is_empty() {
        let m = label_metrics(&labels)?;
        report
            .aggregate
            .insert("accuracy".into(), json!(m.accuracy));
        report
            .aggregate
            .insert("macro_f1".into(), json!(m.macro_f1));
    }
    if !cite.0.is_empty() {
        report
            .aggregate
            .insert("citation_precision".into(), json!(mean(&cite.0)));
        report
            .aggregate
            .insert("citation_recall".into(), json!(mean(&cite.1)));
        report
            .aggregate
            .insert("citation_f1".into(), json!(mean(&cite.2)));
    }
    for (m, values) in &rouge {
        report
            .aggregate
            .insert(m.name().into(), json!(mean(values)));
    }
    if !compression.is_empty() {
        report
            .aggregate
            .insert("compression_ratio".into(), json!(mean(&compression)));
    }
    let s = pipeline.settings();
    report.config_echo = BTreeMap::from([
        ("mode".to_string(), json!(mode)),
        ("k".to_string(), json!(s.k)),
        ("model_id".to_string(), json!(s.model_id)),
        ("temperature".to_string(), json!(s.temperature)),
        ("parallelism".to_string(), json!(parallelism.max(1))),
        ("tokenizer".to_string(), Value::from(super::TOKENIZER_NOTE)),
    ]);
    Ok(BenchOutcome { report, traces })
}
