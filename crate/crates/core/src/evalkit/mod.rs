//! Evaluation metrics and benchmark runs.
//!
//! Metric functions are pure. Record-level evaluators turn line-delimited
//! prediction files into a [`MetricReport`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub mod bench;
pub mod metrics;
pub mod readability;

pub use bench::{
    load_dataset, parse_dataset, run_benchmark, BenchExample, BenchMode, BenchOutcome, BenchTrace,
};
pub use metrics::{
    best_reference_score, citation_prf, compression_ratio, label_metrics, rouge_l, rouge_n,
    tokenize, CitationJudgment, LabelMetrics, LabeledPrediction, Prf, SummaryMetric, SummaryPair,
    Verdict,
};
pub use readability::{smog_index, syllables};

pub(crate) const TOKENIZER_NOTE: &str =
    "lowercase, split on non-alphanumerics; no stemming, no stopword removal";

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("empty input: no {0}")]
    EmptyInput(&'static str),
    #[error("insufficient text for SMOG: {sentences} sentence(s), at least 3 needed")]
    InsufficientText { sentences: usize },
    #[error("generated summary has no tokens")]
    EmptySummary,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{path}: {cause}")]
    Io { path: String, cause: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_example: Vec<BTreeMap<String, Value>>,
    pub aggregate: BTreeMap<String, Value>,
    pub config_echo: BTreeMap<String, Value>,
}

impl MetricReport {
    pub fn aggregate_f64(&self, key: &str) -> Option<f64> {
        self.aggregate.get(key).and_then(Value::as_f64)
    }

    /// Aggregate values as an aligned two-column table.
    pub fn render_table(&self) -> String {
        let w = self.aggregate.keys().map(|k| k.len()).max().unwrap_or(0);
        self.aggregate
            .iter()
            .map(|(k, v)| {
                let v = match v {
                    Value::Number(n) if n.is_f64() => {
                        format!("{:.4}", n.as_f64().unwrap_or_default())
                    }
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                format!("{k:<w$}  {v}")
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

fn parse_lines<T: serde::de::DeserializeOwned>(src: &str) -> Result<Vec<T>, EvalError> {
    src.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| EvalError::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CitationRecord {
    pub id: String,
    pub predicted: Vec<String>,
    pub gold: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRecord {
    pub id: String,
    /// Free text; the first yes/maybe/no word is the label.
    pub predicted: String,
    pub gold: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SummaryRecord {
    pub id: String,
    #[serde(default)]
    pub source: String,
    pub generated: String,
    pub references: Vec<String>,
}

pub fn parse_citation_records(src: &str) -> Result<Vec<CitationRecord>, EvalError> {
    parse_lines(src)
}

pub fn parse_label_records(src: &str) -> Result<Vec<LabelRecord>, EvalError> {
    parse_lines(src)
}

pub fn parse_summary_records(src: &str) -> Result<Vec<SummaryRecord>, EvalError> {
    parse_lines(src)
}

/// Per-example citation P/R/F1 and their means.
pub fn evaluate_citations(records: &[CitationRecord]) -> Result<MetricReport, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyInput("citation records"));
    }
    let mut report = MetricReport::default();
    let mut cols: [Vec<f64>; 3] = Default::default();
    for r in records {
        let prf = citation_prf(&CitationJudgment::new(&r.predicted, &r.gold));
        cols[0].push(prf.precision);
        cols[1].push(prf.recall);
        cols[2].push(prf.f1);
        report.per_example.push(BTreeMap::from([
            ("id".to_string(), json!(r.id)),
            ("precision".to_string(), json!(prf.precision)),
            ("recall".to_string(), json!(prf.recall)),
            ("f1".to_string(), json!(prf.f1)),
        ]));
    }
    for (name, values) in ["precision", "recall", "f1"].iter().zip(&cols) {
        report
            .aggregate
            .insert(name.to_string(), json!(mean(values)));
    }
    report.config_echo.insert(
        "id_matching".into(),
        json!("DOIs lowercased without resolver prefix"),
    );
    Ok(report)
}

/// Accuracy and macro-F1 over yes/maybe/no labels.
pub fn evaluate_labels(records: &[LabelRecord]) -> Result<MetricReport, EvalError> {
    let mut report = MetricReport::default();
    let mut preds = Vec::new();
    for (i, r) in records.iter().enumerate() {
        let gold = Verdict::parse(&r.gold).ok_or_else(|| EvalError::Parse {
            line: i + 1,
            message: format!("gold {:?} is not yes, maybe or no", r.gold),
        })?;
        let predicted = Verdict::from_answer(&r.predicted);
        preds.push(LabeledPrediction { predicted, gold });
        report.per_example.push(BTreeMap::from([
            ("id".to_string(), json!(r.id)),
            ("gold".to_string(), json!(gold)),
            ("predicted".to_string(), json!(predicted)),
            ("correct".to_string(), json!(predicted == Some(gold))),
        ]));
    }
    let m = label_metrics(&preds)?;
    report
        .aggregate
        .insert("accuracy".into(), json!(m.accuracy));
    report
        .aggregate
        .insert("macro_f1".into(), json!(m.macro_f1));
    for (class, f1) in &m.per_class_f1 {
        report
            .aggregate
            .insert(format!("f1_{}", class.as_str()), json!(f1));
    }
    Ok(report)
}

/// ROUGE (best over references), compression ratio and aggregate SMOG.
/// BERTScore is listed as unavailable.
pub fn evaluate_summaries(records: &[SummaryRecord]) -> Result<MetricReport, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyInput("summary records"));
    }
    let mut report = MetricReport::default();
    let mut by_metric: BTreeMap<SummaryMetric, Vec<f64>> = BTreeMap::new();
    let mut compression = Vec::new();
    for r in records {
        let pair = SummaryPair {
            source_text: r.source.clone(),
            generated: r.generated.clone(),
            references: r.references.clone(),
        };
        let mut row = BTreeMap::from([("id".to_string(), json!(r.id))]);
        for m in SummaryMetric::ALL {
            let v = best_reference_score(&pair, m)?;
            by_metric.entry(m).or_default().push(v);
            row.insert(m.name().to_string(), json!(v));
        }
        if !r.source.is_empty() {
            let c = compression_ratio(&pair)?;
            compression.push(c);
            row.insert("compression_ratio".into(), json!(c));
        }
        report.per_example.push(row);
    }
    for (m, values) in &by_metric {
        report
            .aggregate
            .insert(m.name().to_string(), json!(mean(values)));
    }
    if !compression.is_empty() {
        report
            .aggregate
            .insert("compression_ratio".into(), json!(mean(&compression)));
    }
    let generated: Vec<&str> = records.iter().map(|r| r.generated.as_str()).collect();
    match smog_index(&generated) {
        Ok(v) => {
            report.aggregate.insert("smog".into(), json!(v));
        }
        Err(e) => {
            report.aggregate.insert("smog".into(), Value::Null);
            report
                .config_echo
                .insert("smog_note".into(), json!(e.to_string()));
        }
    }
    report
        .aggregate
        .insert("bertscore".into(), json!("unavailable"));
    report
        .config_echo
        .insert("tokenizer".into(), json!(TOKENIZER_NOTE));
    report.config_echo.insert(
        "smog".into(),
        json!("corpus-level over all generated texts"),
    );
    Ok(report)
}
