//! Paper ingest: front-matter parsing, section splitting and chunking.
//!
//! Corpus files are UTF-8 text with a `---` delimited front-matter block of
//! `key: value` lines followed by a body split into sections by `# ` and `## `
//! heading lines. Fenced blocks and image lines are dropped while parsing, so
//! section bodies never carry table or figure payloads.
//!
//! Chunking is lossless: the chunks of a section, concatenated in order,
//! reproduce the section body exactly.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::text::normalize_title;

/// Default minimum chunk length in characters.
pub const DEFAULT_MIN_CHARS: usize = 800;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("missing {0}")]
    MissingField(&'static str),
    #[error("invalid value for {field}: {value:?}")]
    InvalidField { field: &'static str, value: String },
    #[error("malformed front matter at line {line}: {message}")]
    MalformedFrontMatter { line: usize, message: String },
    #[error("document body is empty")]
    EmptyBody,
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: Box<CorpusError>,
    },
    #[error("duplicate paper_id {0:?}")]
    DuplicatePaperId(String),
    #[error("no parsable documents under {0}")]
    NoDocuments(PathBuf),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

/// Supported corpus document formats.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum CorpusFormat {
    /// `---` front matter plus a `#`/`##` headed markdown body.
    #[default]
    MarkdownFrontMatter,
}

/// One headed section. `level` is 1 for `#`, 2 for `##` and 0 for text that
/// precedes the first heading.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub level: u8,
    pub heading: String,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaperDocument {
    pub paper_id: String,
    pub title: String,
    pub authors: Vec<String>,
    pub venue: Option<String>,
    pub year: Option<i32>,
    #[serde(rename = "abstract")]
    pub abstract_text: Option<String>,
    pub sections: Vec<Section>,
}

impl PaperDocument {
    /// Section paths in section order: `heading`, or `parent/heading` for `##`
    /// sections nested under a `#` section.
    pub fn section_paths(&self) -> Vec<String> {
        let mut parent: Option<&str> = None;
        self.sections
            .iter()
            .map(|s| match s.level {
                1 => {
                    parent = Some(&s.heading);
                    s.heading.clone()
                }
                2 => match parent {
                    Some(p) => format!("{p}/{}", s.heading),
                    None => s.heading.clone(),
                },
                _ => s.heading.clone(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub paper_id: String,
    pub section_path: String,
    /// Character (Unicode scalar) offsets into the section body.
    pub char_span: (usize, usize),
    pub text: String,
    pub char_len: usize,
}

/// Derived id used when the front matter carries no `paper_id`.
pub fn paper_id_for_title(title: &str) -> String {
    let digest = Sha256::digest(title.as_bytes());
    hex::encode(&digest[..8])
}

pub fn parse_paper(raw: &str, format: CorpusFormat) -> Result<PaperDocument> {
    match format {
        CorpusFormat::MarkdownFrontMatter => parse_markdown(raw),
    }
}

fn parse_markdown(raw: &str) -> Result<PaperDocument> {
    let normalized = raw.replace("\r\n", "\n").replace('\r', "\n");
    let lines: Vec<&str> = normalized.split('\n').collect();

    if lines.first().map(|l| l.trim()) != Some("---") {
        return Err(CorpusError::MissingField("title"));
    }
    let close = lines
        .iter()
        .skip(1)
        .position(|l| l.trim() == "---")
        .map(|p| p + 1)
        .ok_or(CorpusError::MalformedFrontMatter {
            line: 1,
            message: "unterminated front matter".into(),
        })?;

    let mut fields: HashMap<String, String> = HashMap::new();
    for (i, line) in lines[1..close].iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (key, value) =
            line.split_once(':')
                .ok_or_else(|| CorpusError::MalformedFrontMatter {
                    line: i + 2,
                    message: format!("expected `key: value`, got {line:?}"),
                })?;
        fields.insert(key.trim().to_lowercase(), value.trim().to_string());
    }

    let title = fields
        .remove("title")
        .filter(|t| !t.is_empty())
        .ok_or(CorpusError::MissingField("title"))?;
    let authors = fields
        .remove("authors")
        .ok_or(CorpusError::MissingField("authors"))?
        .split(';')
        .map(str::trim)
        .filter(|a| !a.is_empty())
        .map(String::from)
        .collect();
    let non_empty = |v: Option<String>| v.filter(|s| !s.is_empty());
    let venue = non_empty(fields.remove("venue"));
    let abstract_text = non_empty(fields.remove("abstract"));
    let year = match non_empty(fields.remove("year")) {
        Some(y) => Some(y.parse::<i32>().map_err(|_| CorpusError::InvalidField {
            field: "year",
            value: y.clone(),
        })?),
        None => None,
    };
    let paper_id =
        non_empty(fields.remove("paper_id")).unwrap_or_else(|| paper_id_for_title(&title));

    let sections = parse_body(&lines[close + 1..]);
    if sections.iter().all(|s| s.body.is_empty()) {
        return Err(CorpusError::EmptyBody);
    }

    Ok(PaperDocument {
        paper_id,
        title,
        authors,
        venue,
        year,
        abstract_text,
        sections,
    })
}

fn parse_body(lines: &[&str]) -> Vec<Section> {
    let mut raw_sections: Vec<(u8, String, Vec<&str>)> = Vec::new();
    let mut in_fence = false;
    for line in lines {
        let trimmed = line.trim_start();
        if trimmed.starts_with("```") {
            in_fence = !in_fence;
            continue;
        }
        if in_fence || trimmed.starts_with("![") {
            continue;
        }
        if let Some(h) = line.strip_prefix("## ") {
            raw_sections.push((2, h.trim().to_string(), Vec::new()));
        } else if let Some(h) = line.strip_prefix("# ") {
            raw_sections.push((1, h.trim().to_string(), Vec::new()));
        } else {
            if raw_sections.is_empty() {
                if line.trim().is_empty() {
                    continue;
                }
                raw_sections.push((0, String::new(), Vec::new()));
            }
            raw_sections
                .last_mut()
                .expect("section exists")
                .2
                .push(line);
        }
    }
    raw_sections
        .into_iter()
        .map(|(level, heading, lines)| Section {
            level,
            heading,
            body: join_paragraphs(&lines),
        })
        .collect()
}

/// Groups lines into paragraphs at blank lines and joins them with one blank line.
fn join_paragraphs(lines: &[&str]) -> String {
    let mut paragraphs: Vec<String> = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            if !current.is_empty() {
                paragraphs.push(current.join("\n"));
                current.clear();
            }
        } else {
            current.push(line);
        }
    }
    if !current.is_empty() {
        paragraphs.push(current.join("\n"));
    }
    paragraphs.join("\n\n")
}

/// Writes a document back in the corpus grammar. `parse_paper` inverts it.
pub fn serialize_paper(doc: &PaperDocument) -> String {
    let mut out = String::from("---\n");
    out.push_str(&format!("paper_id: {}\n", doc.paper_id));
    out.push_str(&format!("title: {}\n", doc.title));
    out.push_str(&format!("authors: {}\n", doc.authors.join("; ")));
    if let Some(v) = &doc.venue {
        out.push_str(&format!("venue: {v}\n"));
    }
    if let Some(y) = doc.year {
        out.push_str(&format!("year: {y}\n"));
    }
    if let Some(a) = &doc.abstract_text {
        out.push_str(&format!("abstract: {a}\n"));
    }
    out.push_str("---\n\n");
    for s in &doc.sections {
        match s.level {
            1 => out.push_str(&format!("# {}\n\n", s.heading)),
            2 => out.push_str(&format!("## {}\n\n", s.heading)),
            _ => {}
        }
        if !s.body.is_empty() {
            out.push_str(&s.body);
            out.push_str("\n\n");
        }
    }
    out
}

/// Splits every section of `doc` into chunks of at least `min_chars` characters.
///
/// Paragraphs (text up to and including a run of two or more newlines) are
/// accumulated greedily until the buffer reaches `min_chars`, then emitted. A
/// shorter trailing buffer becomes the last chunk of its section. Paragraphs
/// longer than `2 * min_chars` are first cut at the first sentence boundary at
/// or after each `min_chars` step. A `min_chars` of zero is treated as one.
pub fn chunk_document(doc: &PaperDocument, min_chars: usize) -> Vec<Chunk> {
    let min_chars = min_chars.max(1);
    let paths = doc.section_paths();
    let mut chunks = Vec::new();
    for (si, (section, path)) in doc.sections.iter().zip(paths).enumerate() {
        let chars: Vec<char> = section.body.chars().collect();
        for (ci, (start, end)) in chunk_spans(&chars, min_chars).into_iter().enumerate() {
            let text: String = chars[start..end].iter().collect();
            chunks.push(Chunk {
                chunk_id: format!("{}:{si:03}:{ci:03}", doc.paper_id),
                paper_id: doc.paper_id.clone(),
                section_path: path.clone(),
                char_span: (start, end),
                char_len: end - start,
                text,
            });
        }
    }
    chunks
}

fn chunk_spans(chars: &[char], min_chars: usize) -> Vec<(usize, usize)> {
    let mut units = Vec::new();
    for (start, end) in paragraph_spans(chars) {
        if end - start > 2 * min_chars {
            units.extend(split_long_paragraph(chars, start, end, min_chars));
        } else {
            units.push((start, end));
        }
    }

    let mut spans = Vec::new();
    let mut buf_start: Option<usize> = None;
    for (start, end) in units {
        let s = *buf_start.get_or_insert(start);
        if end - s >= min_chars {
            spans.push((s, end));
            buf_start = None;
        }
    }
    if let Some(s) = buf_start {
        spans.push((s, chars.len()));
    }
    spans
}

/// Paragraph spans; each span includes its trailing run of newlines.
fn paragraph_spans(chars: &[char]) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < chars.len() {
        if chars[i] == '\n' {
            let run_start = i;
            while i < chars.len() && chars[i] == '\n' {
                i += 1;
            }
            if i - run_start >= 2 {
                spans.push((start, i));
                start = i;
            }
        } else {
            i += 1;
        }
    }
    if start < chars.len() {
        spans.push((start, chars.len()));
    }
    spans
}

fn split_long_paragraph(
    chars: &[char],
    start: usize,
    end: usize,
    min_chars: usize,
) -> Vec<(usize, usize)> {
    // A boundary is the first non-whitespace position after `.`, `!` or `?`
    // followed by whitespace.
    let mut boundaries = Vec::new();
    let mut i = start;
    while i + 1 < end {
        if matches!(chars[i], '.' | '!' | '?') && chars[i + 1].is_whitespace() {
            let mut j = i + 1;
            while j < end && chars[j].is_whitespace() {
                j += 1;
            }
            if j < end {
                boundaries.push(j);
            }
            i = j;
        } else {
            i += 1;
        }
    }

    let mut pieces = Vec::new();
    let mut last = start;
    for &b in &boundaries {
        if b >= last + min_chars {
            pieces.push((last, b));
            last = b;
        }
    }
    pieces.push((last, end));
    pieces
}

/// How corpus loading treats unparsable files.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IngestMode {
    #[default]
    Strict,
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IngestWarning {
    pub path: PathBuf,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TitleEntry {
    pub paper_id: String,
    pub title: String,
    pub normalized: String,
}

/// An immutable set of papers with an id lookup and a normalized-title index.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    papers: Vec<PaperDocument>,
    by_id: HashMap<String, usize>,
    titles: Vec<TitleEntry>,
    warnings: Vec<IngestWarning>,
}

impl Corpus {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Builds a corpus, rejecting duplicate paper ids.
    pub fn from_papers(papers: Vec<PaperDocument>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(papers.len());
        for (i, p) in papers.iter().enumerate() {
            if by_id.insert(p.paper_id.clone(), i).is_some() {
                return Err(CorpusError::DuplicatePaperId(p.paper_id.clone()));
            }
        }
        let titles = papers
            .iter()
            .map(|p| TitleEntry {
                paper_id: p.paper_id.clone(),
                title: p.title.clone(),
                normalized: normalize_title(&p.title),
            })
            .collect();
        Ok(Self {
            papers,
            by_id,
            titles,
            warnings: Vec::new(),
        })
    }

    pub fn papers(&self) -> &[PaperDocument] {
        &self.papers
    }

    pub fn get(&self, paper_id: &str) -> Option<&PaperDocument> {
        self.by_id.get(paper_id).map(|&i| &self.papers[i])
    }

    pub fn titles(&self) -> &[TitleEntry] {
        &self.titles
    }

    pub fn warnings(&self) -> &[IngestWarning] {
        &self.warnings
    }

    pub fn len(&self) -> usize {
        self.papers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.papers.is_empty()
    }

    /// Chunks of every paper, in corpus order.
    pub fn chunks(&self, min_chars: usize) -> Vec<Chunk> {
        self.papers
            .par_iter()
            .flat_map_iter(|p| chunk_document(p, min_chars))
            .collect()
    }
}

/// Loads a single corpus file or every `*.md` file in a directory (sorted by
/// file name).
pub fn load_corpus(path: &Path, mode: IngestMode) -> Result<Corpus> {
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let files: Vec<PathBuf> = if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(io_err)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "md"))
            .collect();
        files.sort();
        files
    } else {
        std::fs::metadata(path).map_err(io_err)?;
        vec![path.to_path_buf()]
    };

    let parsed: Vec<(PathBuf, Result<PaperDocument>)> = files
        .into_par_iter()
        .map(|file| {
            let res = std::fs::read_to_string(&file)
                .map_err(|source| CorpusError::Io {
                    path: file.clone(),
                    source,
                })
                .and_then(|raw| parse_paper(&raw, CorpusFormat::MarkdownFrontMatter));
            (file, res)
        })
        .collect();

    let mut papers = Vec::new();
    let mut warnings = Vec::new();
    for (file, res) in parsed {
        match res {
            Ok(doc) => papers.push(doc),
            Err(e) => match mode {
                IngestMode::Strict => {
                    return Err(CorpusError::File {
                        path: file,
                        source: Box::new(e),
                    });
                }
                IngestMode::Lenient => {
                    tracing::warn!(path = %file.display(), error = %e, "skipping unparsable document");
                    warnings.push(IngestWarning {
                        path: file,
                        message: e.to_string(),
                    });
                }
            },
        }
    }
    if papers.is_empty() {
        return Err(CorpusError::NoDocuments(path.to_path_buf()));
    }
    let mut corpus = Corpus::from_papers(papers)?;
    corpus.warnings = warnings;
    Ok(corpus)
}
