//! Paper grounding for simplification and summarization requests.
//!
//! Title candidates come from three tiers, in priority order: quoted spans,
//! cue phrases ("summarize <X>", "the paper <X>"), and corpus titles that
//! occur verbatim in the query. The first candidate whose fuzzy similarity to
//! a corpus title reaches the threshold grounds the query to that paper;
//! otherwise the query body itself becomes the text to transform.

use std::collections::BTreeSet;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, PaperDocument, TitleEntry};
use crate::text::{match_tokens, normalize_title, word_spans};

pub const DEFAULT_THRESHOLD: f64 = 0.85;
pub const DEFAULT_CONTEXT_CHARS: usize = 8000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CandidateSource {
    QuotedSpan,
    PatternMatch,
    GazetteerMatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TitleCandidate {
    pub surface: String,
    /// Byte offsets into the query.
    pub span: (usize, usize),
    pub source: CandidateSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroundingStatus {
    Matched,
    NoMatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingResult {
    pub status: GroundingStatus,
    pub paper_id: Option<String>,
    pub similarity: Option<f64>,
    pub inline_text: Option<String>,
    pub candidate: Option<TitleCandidate>,
}

static QUOTED: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#""([^"]+)"|“([^”]+)”|(?:^|[\s(:])'([^']{2,}?)'(?:$|[\s.,;:!?)])"#)
        .expect("quote regex")
});

static CUE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)\b(?:summari[sz]e|simplify|summary of|tl;?dr of|gist of|the (?:paper|article|publication))\s+(?:(?:the\s+)?(?:paper|article|publication)\s+)?(?:(?:titled|called|named|entitled)\s+)?",
    )
    .expect("cue regex")
});

const DEICTIC_STARTS: &[&str] = &[
    "this",
    "these",
    "that",
    "those",
    "the following",
    "following",
    "my",
    "our",
    "it",
    "a",
    "an",
    "me",
    "below",
    "above",
    "here",
];
const TRAILING_FILLER: &[&str] = &[
    "please",
    "thanks",
    "thank you",
    "for me",
    "briefly",
    "in simple terms",
    "in plain language",
    "in plain english",
    "in one sentence",
    "for a layperson",
    "for a general audience",
];

pub fn detect_title(query: &str, titles: &[TitleEntry]) -> Vec<TitleCandidate> {
    let mut out: Vec<TitleCandidate> = Vec::new();

    for cap in QUOTED.captures_iter(query) {
        let m = cap
            .get(1)
            .or_else(|| cap.get(2))
            .or_else(|| cap.get(3))
            .expect("one group matches");
        let (start, end) = trim_span(query, m.start(), m.end());
        if start < end {
            out.push(TitleCandidate {
                surface: query[start..end].to_string(),
                span: (start, end),
                source: CandidateSource::QuotedSpan,
            });
        }
    }

    for m in CUE.find_iter(query) {
        if let Some((start, end)) = cue_capture(query, m.end()) {
            if !overlaps_any(&out, start, end) {
                out.push(TitleCandidate {
                    surface: query[start..end].to_string(),
                    span: (start, end),
                    source: CandidateSource::PatternMatch,
                });
            }
        }
    }

    let words = word_spans(query);
    let mut hits: Vec<(usize, usize)> = Vec::new();
    for t in titles {
        let title_tokens: Vec<&str> = t.normalized.split(' ').filter(|s| !s.is_empty()).collect();
        if title_tokens.len() < 2 || title_tokens.len() > words.len() {
            continue;
        }
        for w in words.windows(title_tokens.len()) {
            if w.iter().zip(&title_tokens).all(|(a, b)| a.lower == *b) {
                hits.push((w[0].start, w[w.len() - 1].end));
            }
        }
    }
    hits.sort_by(|a, b| (b.1 - b.0).cmp(&(a.1 - a.0)).then(a.0.cmp(&b.0)));
    hits.dedup();
    for (start, end) in hits {
        if !overlaps_any(&out, start, end) {
            out.push(TitleCandidate {
                surface: query[start..end].to_string(),
                span: (start, end),
                source: CandidateSource::GazetteerMatch,
            });
        }
    }

    out.sort_by(|a, b| {
        a.source
            .cmp(&b.source)
            .then((b.span.1 - b.span.0).cmp(&(a.span.1 - a.span.0)))
    });
    out
}

fn overlaps_any(cands: &[TitleCandidate], start: usize, end: usize) -> bool {
    cands.iter().any(|c| start < c.span.1 && c.span.0 < end)
}

fn trim_span(s: &str, mut start: usize, mut end: usize) -> (usize, usize) {
    let slice = &s[start..end];
    start += slice.len() - slice.trim_start().len();
    end -= slice.len() - slice.trim_end().len();
    (start, end.max(start))
}

/// The candidate after a cue phrase: to the end of the sentence, minus
/// trailing filler. Rejects deictic references ("this text") and anything
/// with a colon, which marks pasted input.
fn cue_capture(query: &str, from: usize) -> Option<(usize, usize)> {
    let rest = &query[from..];
    let stop = rest.find(['\n', '?', '!']).unwrap_or(rest.len());
    let rest = &rest[..stop];
    if rest.contains(':') || rest.starts_with(['"', '“', '\'']) {
        return None;
    }
    let lower = rest.to_lowercase();
    if DEICTIC_STARTS
        .iter()
        .any(|d| lower == *d || lower.starts_with(&format!("{d} ")))
    {
        return None;
    }
    let mut end = rest.len();
    loop {
        let trimmed =
            rest[..end].trim_end_matches(|c: char| c.is_whitespace() || ".,;".contains(c));
        let mut new_end = trimmed.len();
        let lower = trimmed.to_lowercase();
        for f in TRAILING_FILLER {
            if lower.ends_with(f)
                && (lower.len() == f.len() || lower[..lower.len() - f.len()].ends_with(' '))
            {
                new_end = trimmed.len() - f.len();
                break;
            }
        }
        if new_end == end {
            break;
        }
        end = new_end;
    }
    let (start, end) = trim_span(query, from, from + end);
    let words = query[start..end].split_whitespace().count();
    (1..=25).contains(&words).then_some((start, end))
}

/// Token-set similarity in `[0, 1]`: the mean of the Dice coefficient of the
/// two normalized token sets and the normalized Levenshtein similarity of the
/// sets rendered as sorted, space-joined strings.
pub fn title_similarity(a: &str, b: &str) -> f64 {
    let sa: BTreeSet<String> = normalize_title(a)
        .split(' ')
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect();
    let sb: BTreeSet<String> = normalize_title(b)
        .split(' ')
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect();
    if sa.is_empty() && sb.is_empty() {
        return 1.0;
    }
    let inter = sa.intersection(&sb).count() as f64;
    let dice = 2.0 * inter / (sa.len() + sb.len()) as f64;
    let ja = sa.into_iter().collect::<Vec<_>>().join(" ");
    let jb = sb.into_iter().collect::<Vec<_>>().join(" ");
    let edit = strsim::normalized_levenshtein(&ja, &jb);
    0.5 * dice + 0.5 * edit
}

/// Best-scoring corpus title if it reaches `threshold`; ties go to the
/// smallest paper_id.
pub fn fuzzy_match(
    candidate: &str,
    titles: &[TitleEntry],
    threshold: f64,
) -> Option<(String, f64)> {
    let mut best: Option<(&str, f64)> = None;
    for t in titles {
        let s = title_similarity(candidate, &t.title);
        best = match best {
            Some((id, bs)) if bs > s || (bs == s && id <= t.paper_id.as_str()) => Some((id, bs)),
            _ => Some((&t.paper_id, s)),
        };
    }
    best.filter(|(_, s)| *s >= threshold)
        .map(|(id, s)| (id.to_string(), s))
}

pub fn ground(query: &str, corpus: &Corpus, threshold: f64) -> GroundingResult {
    for cand in detect_title(query, corpus.titles()) {
        if let Some((paper_id, similarity)) = fuzzy_match(&cand.surface, corpus.titles(), threshold)
        {
            return GroundingResult {
                status: GroundingStatus::Matched,
                paper_id: Some(paper_id),
                similarity: Some(similarity),
                inline_text: None,
                candidate: Some(cand),
            };
        }
    }
    GroundingResult {
        status: GroundingStatus::NoMatch,
        paper_id: None,
        similarity: None,
        inline_text: Some(strip_instruction_prefix(query)),
        candidate: None,
    }
}

const INSTRUCTION_WORDS: &[&str] = &[
    "summarize",
    "summarise",
    "summary",
    "summarization",
    "simplify",
    "simplification",
    "tldr",
    "tl",
    "rewrite",
    "rephrase",
    "paraphrase",
    "explain",
    "condense",
    "shorten",
];

static LEADING_INSTRUCTION: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)^\s*(?:please\s+)?(?:summari[sz]e|simplify|rewrite|rephrase|paraphrase|condense|shorten)\b(?:\s+(?:this|the following|the|following))?(?:\s+(?:text|paragraph|passage|sentence|abstract|excerpt))?[\s,.\-]*",
    )
    .expect("instruction regex")
});

/// The query with its leading instruction removed (`simplify: <text>` ->
/// `<text>`). Never returns an empty string for a non-blank query.
pub fn strip_instruction_prefix(query: &str) -> String {
    let trimmed = query.trim();
    if let Some(colon) = trimmed.find(':') {
        let head = &trimmed[..colon];
        if head.chars().count() <= 80
            && match_tokens(head)
                .iter()
                .any(|t| INSTRUCTION_WORDS.contains(&t.as_str()))
        {
            let rest = trimmed[colon + 1..].trim();
            if !rest.is_empty() {
                return rest.to_string();
            }
        }
    }
    if let Some(m) = LEADING_INSTRUCTION.find(trimmed) {
        let rest = trimmed[m.end()..].trim();
        if !rest.is_empty() {
            return rest.to_string();
        }
    }
    trimmed.to_string()
}

/// Abstract plus section texts, cut at the last whole part that fits in
/// `budget_chars`. A first part longer than the budget is truncated.
pub fn paper_context(doc: &PaperDocument, budget_chars: usize) -> String {
    let mut parts: Vec<String> = Vec::new();
    if let Some(a) = &doc.abstract_text {
        parts.push(format!("Abstract\n{a}"));
    }
    for (section, path) in doc.sections.iter().zip(doc.section_paths()) {
        if section.body.is_empty() {
            continue;
        }
        if path.is_empty() {
            parts.push(section.body.clone());
        } else {
            parts.push(format!("{path}\n{}", section.body));
        }
    }
    let mut out = String::new();
    let mut used = 0;
    for part in parts {
        let sep = if out.is_empty() { 0 } else { 2 };
        let len = part.chars().count();
        if used + sep + len > budget_chars {
            if out.is_empty() {
                out = part.chars().take(budget_chars).collect();
            }
            break;
        }
        if sep > 0 {
            out.push_str("\n\n");
        }
        out.push_str(&part);
        used += sep + len;
    }
    out
}
