//! Set-overlap, label and n-gram metrics.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    /// From an overlap count and the two totals, with zero conventions for
    /// empty sides.
    pub fn from_counts(overlap: usize, predicted: usize, gold: usize) -> Self {
        let precision = if predicted == 0 {
            0.0
        } else {
            overlap as f64 / predicted as f64
        };
        let recall = if gold == 0 {
            0.0
        } else {
            overlap as f64 / gold as f64
        };
        Self {
            precision,
            recall,
            f1: harmonic(precision, recall),
        }
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Canonical form of a citation id. DOIs lose any resolver prefix and are
/// lowercased; other ids are only trimmed.
pub fn normalize_source_id(id: &str) -> String {
    let id = id.trim();
    let lower = id.to_lowercase();
    for prefix in [
        "https://doi.org/",
        "http://doi.org/",
        "https://dx.doi.org/",
        "http://dx.doi.org/",
        "doi:",
    ] {
        if let Some(rest) = lower.strip_prefix(prefix) {
            return rest.trim().to_string();
        }
    }
    if lower.starts_with("10.") {
        lower
    } else {
        id.to_string()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CitationJudgment {
    pub predicted: BTreeSet<String>,
    pub gold: BTreeSet<String>,
}

impl CitationJudgment {
    pub fn new<P, G>(predicted: P, gold: G) -> Self
    where
        P: IntoIterator,
        P::Item: AsRef<str>,
        G: IntoIterator,
        G::Item: AsRef<str>,
    {
        Self {
            predicted: predicted
                .into_iter()
                .map(|s| normalize_source_id(s.as_ref()))
                .collect(),
            gold: gold
                .into_iter()
                .map(|s| normalize_source_id(s.as_ref()))
                .collect(),
        }
    }
}

pub fn citation_prf(j: &CitationJudgment) -> Prf {
    let overlap = j.predicted.intersection(&j.gold).count();
    Prf::from_counts(overlap, j.predicted.len(), j.gold.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Yes,
    Maybe,
    No,
}

impl Verdict {
    pub const ALL: [Verdict; 3] = [Verdict::Yes, Verdict::Maybe, Verdict::No];

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Yes => "yes",
            Verdict::Maybe => "maybe",
            Verdict::No => "no",
        }
    }

    /// Exact label, case-insensitive.
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_lowercase().as_str() {
            "yes" => Some(Verdict::Yes),
            "maybe" => Some(Verdict::Maybe),
            "no" => Some(Verdict::No),
            _ => None,
        }
    }

    /// First yes/maybe/no word of a free-text answer.
    pub fn from_answer(text: &str) -> Option<Self> {
        tokenize(text).iter().find_map(|t| Self::parse(t))
    }
}

/// One prediction. `predicted` is `None` when the answer carried no label;
/// it counts as wrong.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledPrediction {
    pub predicted: Option<Verdict>,
    pub gold: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class_f1: BTreeMap<Verdict, f64>,
}

/// Accuracy and the unweighted mean of the three per-class F1 scores.
/// A class absent from both gold and predictions scores 0.
pub fn label_metrics(preds: &[LabeledPrediction]) -> Result<LabelMetrics, EvalError> {
    if preds.is_empty() {
        return Err(EvalError::EmptyInput("label predictions"));
    }
    let correct = preds.iter().filter(|p| p.predicted == Some(p.gold)).count();
    let mut per_class_f1 = BTreeMap::new();
    for class in Verdict::ALL {
        let tp = preds
            .iter()
            .filter(|p| p.gold == class && p.predicted == Some(class))
            .count();
        let predicted = preds.iter().filter(|p| p.predicted == Some(class)).count();
        let gold = preds.iter().filter(|p| p.gold == class).count();
        per_class_f1.insert(class, Prf::from_counts(tp, predicted, gold).f1);
    }
    Ok(LabelMetrics {
        accuracy: correct as f64 / preds.len() as f64,
        macro_f1: per_class_f1.values().sum::<f64>() / 3.0,
        per_class_f1,
    })
}

/// Lowercase, split on anything that is not alphanumeric, drop empties.
/// Shared by ROUGE and the compression ratio.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<&[String], usize> {
    let mut counts = BTreeMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram overlap.
pub fn rouge_n(candidate: &str, reference: &str, n: usize) -> Prf {
    let c = tokenize(candidate);
    let r = tokenize(reference);
    let cc = ngram_counts(&c, n);
    let rc = ngram_counts(&r, n);
    let overlap: usize = cc
        .iter()
        .map(|(g, k)| (*k).min(rc.get(g).copied().unwrap_or(0)))
        .sum();
    Prf::from_counts(overlap, cc.values().sum(), rc.values().sum())
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Longest-common-subsequence overlap over tokens.
pub fn rouge_l(candidate: &str, reference: &str) -> Prf {
    let c = tokenize(candidate);
    let r = tokenize(reference);
    Prf::from_counts(lcs_len(&c, &r), c.len(), r.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SummaryMetric {
    Rouge1,
    Rouge2,
    RougeL,
}

impl SummaryMetric {
    pub const ALL: [SummaryMetric; 3] = [
        SummaryMetric::Rouge1,
        SummaryMetric::Rouge2,
        SummaryMetric::RougeL,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SummaryMetric::Rouge1 => "rouge1",
            SummaryMetric::Rouge2 => "rouge2",
            SummaryMetric::RougeL => "rougeL",
        }
    }

    /// F1 of the candidate against one reference.
    pub fn score(self, candidate: &str, reference: &str) -> f64 {
        match self {
            SummaryMetric::Rouge1 => rouge_n(candidate, reference, 1).f1,
            SummaryMetric::Rouge2 => rouge_n(candidate, reference, 2).f1,
            SummaryMetric::RougeL => rouge_l(candidate, reference).f1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryPair {
    #[serde(default)]
    pub source_text: String,
    pub generated: String,
    pub references: Vec<String>,
}

/// The best F1 over all references.
pub fn best_reference_score(pair: &SummaryPair, metric: SummaryMetric) -> Result<f64, EvalError> {
    if pair.references.is_empty() {
        return Err(EvalError::EmptyInput("references"));
    }
    Ok(pair
        .references
        .iter()
        .map(|r| metric.score(&pair.generated, r))
        .fold(0.0, f64::max))
}

/// Source tokens per summary token.
pub fn compression_ratio(pair: &SummaryPair) -> Result<f64, EvalError> {
    let summary = tokenize(&pair.generated).len();
    if summary == 0 {
        return Err(EvalError::EmptySummary);
    }
    Ok(tokenize(&pair.source_text).len() as f64 / summary as f64)
}
