//! Template-based question answering over a scholarly knowledge graph.
//!
//! A query is reduced to entities (author names, work titles, identifiers),
//! scored against the template catalog, expanded into a SPARQL string and
//! sent to the endpoint. Results come back as typed rows.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, LazyLock};
use std::time::{Duration, Instant};

use regex::Regex;
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

use crate::corpus::TitleEntry;
use crate::grounding::detect_title;
use crate::router::RuleTable;
use crate::text::{contains_phrase, match_tokens};

pub const DEFAULT_ENDPOINT: &str = "https://semopenalex.org/sparql";
pub const DEFAULT_TIMEOUT_MS: u64 = 15_000;
pub const DEFAULT_MAX_ROWS: usize = 200;
pub const TEMPLATE_COUNT: usize = 18;
pub const RESULTS_MEDIA_TYPE: &str = "application/sparql-results+json";

const BUILTIN_TEMPLATES: [&str; TEMPLATE_COUNT] = [
    include_str!("../data/kg/01_author_works.rq"),
    include_str!("../data/kg/02_author_works_count.rq"),
    include_str!("../data/kg/03_author_citation_count.rq"),
    include_str!("../data/kg/04_author_h_index.rq"),
    include_str!("../data/kg/05_author_i10_index.rq"),
    include_str!("../data/kg/06_author_orcid.rq"),
    include_str!("../data/kg/07_author_affiliations.rq"),
    include_str!("../data/kg/08_author_coauthors.rq"),
    include_str!("../data/kg/09_author_most_cited_work.rq"),
    include_str!("../data/kg/10_author_works_in_year.rq"),
    include_str!("../data/kg/11_work_coauthors.rq"),
    include_str!("../data/kg/12_work_doi.rq"),
    include_str!("../data/kg/13_work_venue.rq"),
    include_str!("../data/kg/14_work_publication_year.rq"),
    include_str!("../data/kg/15_work_citation_count.rq"),
    include_str!("../data/kg/16_work_citing_works.rq"),
    include_str!("../data/kg/17_work_cited_works.rq"),
    include_str!("../data/kg/18_work_metadata.rq"),
];

#[derive(Debug, thiserror::Error)]
pub enum KgError {
    #[error("template {name}: {message}")]
    Template { name: String, message: String },
    #[error("duplicate template id {0:?}")]
    DuplicateTemplate(String),
    #[error("unsupported KG query; available templates: {catalog}")]
    Unsupported { catalog: String },
    #[error("missing slot {0:?}")]
    MissingSlot(String),
    #[error("slot {slot:?} contains control character U+{code:04X} that cannot be escaped")]
    UnescapableChar { slot: String, code: u32 },
    #[error("SPARQL endpoint {endpoint} unreachable: {cause}")]
    Transport { endpoint: String, cause: String },
    #[error("SPARQL endpoint {endpoint} returned HTTP {status}")]
    Http { endpoint: String, status: u16 },
    #[error("malformed SPARQL result document: {0}")]
    Malformed(String),
    #[error("SPARQL query timed out after {ms} ms")]
    Timeout { ms: u64 },
    #[error("reading template directory {path}: {cause}")]
    Io { path: String, cause: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TemplateCategory {
    Author,
    Work,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnType {
    String,
    Integer,
    Iri,
    Date,
}

impl ColumnType {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "string" => Some(Self::String),
            "integer" => Some(Self::Integer),
            "iri" => Some(Self::Iri),
            "date" => Some(Self::Date),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultColumn {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: ColumnType,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparqlTemplate {
    pub template_id: String,
    pub category: TemplateCategory,
    pub required_slots: Vec<String>,
    pub body: String,
    pub result_columns: Vec<ResultColumn>,
    /// Relation keywords used by the selector.
    pub cues: Vec<String>,
}

static PLACEHOLDER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\{\{\s*([A-Za-z_][A-Za-z0-9_]*)\s*\}\}").unwrap());

impl SparqlTemplate {
    /// Parses a template file: `# key: value` header lines followed by the
    /// query body.
    pub fn parse(name: &str, src: &str) -> Result<Self, KgError> {
        let err = |message: String| KgError::Template {
            name: name.to_string(),
            message,
        };
        let src = src.replace("\r\n", "\n");
        let mut header: BTreeMap<String, String> = BTreeMap::new();
        let mut body_start = 0;
        for line in src.split_inclusive('\n') {
            let Some(rest) = line.trim_end().strip_prefix('#') else {
                break;
            };
            if let Some((k, v)) = rest.split_once(':') {
                header.insert(k.trim().to_string(), v.trim().to_string());
            }
            body_start += line.len();
        }
        let body = src[body_start..].to_string();
        let field = |k: &str| {
            header
                .get(k)
                .cloned()
                .ok_or_else(|| err(format!("missing header {k:?}")))
        };

        let template_id = field("id")?;
        let category = match field("category")?.as_str() {
            "author" => TemplateCategory::Author,
            "work" => TemplateCategory::Work,
            other => return Err(err(format!("unknown category {other:?}"))),
        };
        let list = |v: String, sep: char| -> Vec<String> {
            v.split(sep)
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect()
        };
        let required_slots = list(field("slots")?, ',');
        let mut result_columns = Vec::new();
        for col in list(field("columns")?, ',') {
            let (n, t) = col
                .split_once(':')
                .ok_or_else(|| err(format!("column {col:?} has no type")))?;
            let kind = ColumnType::parse(t.trim())
                .ok_or_else(|| err(format!("unknown column type {t:?}")))?;
            result_columns.push(ResultColumn {
                name: n.trim().to_string(),
                kind,
            });
        }
        let cues = list(field("cues")?, '|');
        if body.trim().is_empty() {
            return Err(err("empty query body".into()));
        }
        for cap in PLACEHOLDER.captures_iter(&body) {
            if !required_slots.iter().any(|s| s == &cap[1]) {
                return Err(err(format!(
                    "placeholder {:?} is not a declared slot",
                    &cap[1]
                )));
            }
        }
        for slot in &required_slots {
            if !PLACEHOLDER.captures_iter(&body).any(|c| &c[1] == slot) {
                return Err(err(format!("slot {slot:?} is never used")));
            }
        }
        Ok(Self {
            template_id,
            category,
            required_slots,
            body,
            result_columns,
            cues,
        })
    }

    pub fn column(&self, name: &str) -> Option<&ResultColumn> {
        self.result_columns.iter().find(|c| c.name == name)
    }
}

#[derive(Debug, Clone)]
pub struct TemplateCatalog {
    templates: Vec<SparqlTemplate>,
}

impl Default for TemplateCatalog {
    fn default() -> Self {
        Self::builtin()
    }
}

impl TemplateCatalog {
    pub fn builtin() -> Self {
        let templates = BUILTIN_TEMPLATES
            .iter()
            .enumerate()
            .map(|(i, src)| {
                SparqlTemplate::parse(&format!("builtin #{}", i + 1), src)
                    .expect("builtin template")
            })
            .collect();
        Self::new(templates).expect("builtin catalog")
    }

    pub fn new(templates: Vec<SparqlTemplate>) -> Result<Self, KgError> {
        for (i, t) in templates.iter().enumerate() {
            if templates[..i]
                .iter()
                .any(|o| o.template_id == t.template_id)
            {
                return Err(KgError::DuplicateTemplate(t.template_id.clone()));
            }
        }
        Ok(Self { templates })
    }

    /// Loads every `*.rq` file in `dir`, in file-name order.
    pub fn load_dir(dir: &Path) -> Result<Self, KgError> {
        let io = |e: std::io::Error| KgError::Io {
            path: dir.display().to_string(),
            cause: e.to_string(),
        };
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "rq"))
            .collect();
        paths.sort();
        let mut templates = Vec::new();
        for p in paths {
            let src = std::fs::read_to_string(&p).map_err(io)?;
            templates.push(SparqlTemplate::parse(&p.display().to_string(), &src)?);
        }
        Self::new(templates)
    }

    pub fn templates(&self) -> &[SparqlTemplate] {
        &self.templates
    }

    pub fn get(&self, template_id: &str) -> Option<&SparqlTemplate> {
        self.templates.iter().find(|t| t.template_id == template_id)
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    fn id_list(&self) -> String {
        self.templates
            .iter()
            .map(|t| t.template_id.as_str())
            .collect::<Vec<_>>()
            .join(", ")
    }
}

/// Entities found in a KG query.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KgEntities {
    pub authors: Vec<String>,
    pub works: Vec<String>,
    /// Literal identifier values found in the query, keyed `orcid` / `doi`.
    pub identifiers: BTreeMap<String, String>,
    /// Identifier kinds the query asks for (rule terms it mentions).
    pub requested: Vec<String>,
    pub year: Option<String>,
    /// Byte spans of everything above, used to blank entities out before
    /// relation-keyword scoring.
    #[serde(skip)]
    spans: Vec<(usize, usize)>,
}

impl KgEntities {
    fn slot_value(&self, slot: &str) -> Option<&str> {
        match slot {
            "name" => self.authors.first().map(String::as_str),
            "title" => self.works.first().map(String::as_str),
            "year" => self.year.as_deref(),
            other => self.identifiers.get(other).map(String::as_str),
        }
    }

    pub fn slots_for(&self, template: &SparqlTemplate) -> BTreeMap<String, String> {
        template
            .required_slots
            .iter()
            .filter_map(|s| self.slot_value(s).map(|v| (s.clone(), v.to_string())))
            .collect()
    }
}

static ORCID: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\b\d{4}-\d{4}-\d{4}-\d{3}[\dX]\b").unwrap());
static DOI: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b10\.\d{4,9}/\S+").unwrap());
static YEAR: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b(?:19|20)\d{2}\b").unwrap());
static PERSON: LazyLock<Regex> = LazyLock::new(|| {
    let word = r"(?:\p{Lu}[\p{Ll}'’\-]+|\p{Lu}\.)";
    Regex::new(&format!(r"{word}(?:\s+{word}){{1,3}}")).unwrap()
});

/// Capitalized words that start questions rather than names.
const NAME_STOPWORDS: &[&str] = &[
    "What", "Who", "Whom", "Whose", "Which", "How", "When", "Where", "Why", "List", "Find", "Show",
    "Give", "Tell", "Get", "Does", "Did", "Do", "Is", "Are", "Was", "Were", "Has", "Have", "Can",
    "Could", "The", "A", "An", "In", "Of", "For", "Please", "Name", "Look", "Return",
];

pub fn extract_entities(query: &str, rules: &RuleTable, titles: &[TitleEntry]) -> KgEntities {
    let mut e = KgEntities::default();
    let overlaps =
        |spans: &[(usize, usize)], s: usize, t: usize| spans.iter().any(|&(a, b)| s < b && a < t);

    if let Some(m) = ORCID.find(query) {
        e.identifiers.insert("orcid".into(), m.as_str().to_string());
        e.spans.push((m.start(), m.end()));
    }
    if let Some(m) = DOI.find(query) {
        let doi = m
            .as_str()
            .trim_end_matches(['.', ',', ';', ':', '?', '!', ')', ']', '"', '\'', '”']);
        e.identifiers.insert("doi".into(), doi.to_string());
        e.spans.push((m.start(), m.start() + doi.len()));
    }
    for term in rules.terms() {
        let tokens = match_tokens(term);
        if contains_phrase(&match_tokens(query), &tokens) {
            e.requested.push(tokens.concat());
        }
    }
    for cand in detect_title(query, titles) {
        if !overlaps(&e.spans, cand.span.0, cand.span.1) {
            e.works.push(cand.surface.clone());
            // Quotes belong to the entity too; blank them with it.
            e.spans.push((
                cand.span.0.saturating_sub(1),
                (cand.span.1 + 1).min(query.len()),
            ));
        }
    }
    let mut person_spans = Vec::new();
    for m in PERSON.find_iter(query) {
        if overlaps(&e.spans, m.start(), m.end()) {
            continue;
        }
        let mut words: Vec<(usize, &str)> = Vec::new();
        let mut offset = m.start();
        for w in m.as_str().split_whitespace() {
            let at = query[offset..]
                .find(w)
                .map(|i| offset + i)
                .unwrap_or(offset);
            words.push((at, w));
            offset = at + w.len();
        }
        while words
            .first()
            .is_some_and(|(_, w)| NAME_STOPWORDS.contains(w))
        {
            words.remove(0);
        }
        if words.len() < 2 {
            continue;
        }
        let start = words[0].0;
        let (last_at, last) = words[words.len() - 1];
        let last = last
            .strip_suffix("'s")
            .or_else(|| last.strip_suffix("’s"))
            .unwrap_or(last);
        let end = last_at + last.len();
        e.authors.push(query[start..end].to_string());
        person_spans.push((start, m.end()));
    }
    e.spans.extend(person_spans);
    for m in YEAR.find_iter(query) {
        if !overlaps(&e.spans, m.start(), m.end()) {
            e.year = Some(m.as_str().to_string());
            e.spans.push((m.start(), m.end()));
            break;
        }
    }
    e
}

/// Score of one template for a query. Relation keywords must match for a
/// template to be considered at all; fillable slots then add a bonus.
pub fn template_score(
    template: &SparqlTemplate,
    relation_tokens: &[String],
    entities: &KgEntities,
) -> usize {
    let cue_score: usize = template
        .cues
        .iter()
        .map(|c| match_tokens(c))
        .filter(|c| contains_phrase(relation_tokens, c))
        .map(|c| c.len())
        .sum();
    if cue_score == 0 {
        return 0;
    }
    let fillable = template
        .required_slots
        .iter()
        .all(|s| entities.slot_value(s).is_some());
    cue_score
        + if fillable {
            2 * template.required_slots.len()
        } else {
            0
        }
}

fn relation_tokens(query: &str, entities: &KgEntities) -> Vec<String> {
    let mut blanked = query.to_string();
    let mut spans = entities.spans.clone();
    spans.sort();
    for (s, t) in spans.into_iter().rev() {
        if blanked.is_char_boundary(s) && blanked.is_char_boundary(t) && s < t {
            blanked.replace_range(s..t, " ");
        }
    }
    match_tokens(&blanked)
}

pub fn select_template<'a>(
    query: &str,
    entities: &KgEntities,
    catalog: &'a TemplateCatalog,
) -> Result<&'a SparqlTemplate, KgError> {
    let tokens = relation_tokens(query, entities);
    let mut best: Option<(&SparqlTemplate, usize)> = None;
    for t in catalog.templates() {
        let score = template_score(t, &tokens, entities);
        if score > 0 && best.is_none_or(|(_, b)| score > b) {
            best = Some((t, score));
        }
    }
    best.map(|(t, _)| t).ok_or_else(|| KgError::Unsupported {
        catalog: catalog.id_list(),
    })
}

/// Escapes a value for use inside a double-quoted SPARQL string literal.
pub fn escape_literal(slot: &str, value: &str) -> Result<String, KgError> {
    let mut out = String::with_capacity(value.len() + 2);
    for ch in value.chars() {
        match ch {
            '\\' => out.push_str("\\\\"),
            '"' => out.push_str("\\\""),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if c.is_control() => {
                return Err(KgError::UnescapableChar {
                    slot: slot.to_string(),
                    code: c as u32,
                });
            }
            c => out.push(c),
        }
    }
    Ok(out)
}

pub fn build_query(
    template: &SparqlTemplate,
    slots: &BTreeMap<String, String>,
) -> Result<String, KgError> {
    let mut escaped = BTreeMap::new();
    for slot in &template.required_slots {
        let value = slots
            .get(slot)
            .filter(|v| !v.trim().is_empty())
            .ok_or_else(|| KgError::MissingSlot(slot.clone()))?;
        escaped.insert(slot.as_str(), escape_literal(slot, value)?);
    }
    Ok(PLACEHOLDER
        .replace_all(&template.body, |c: &regex::Captures| escaped[&c[1]].clone())
        .into_owned())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "lowercase")]
pub enum KgValue {
    String(String),
    Integer(i64),
    Iri(String),
    Date(String),
}

impl std::fmt::Display for KgValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KgValue::String(s) | KgValue::Iri(s) | KgValue::Date(s) => f.write_str(s),
            KgValue::Integer(n) => write!(f, "{n}"),
        }
    }
}

pub type KgRow = BTreeMap<String, KgValue>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KgAnswer {
    pub template_id: String,
    /// Column order for rendering; the template's declared columns.
    pub columns: Vec<String>,
    pub bindings: Vec<KgRow>,
    pub endpoint: String,
    pub elapsed_ms: u64,
    pub sparql: String,
    /// True when the row cap cut the result.
    pub truncated: bool,
}

impl KgAnswer {
    /// Column-aligned cells: a header line and one line per row.
    pub fn table_lines(&self) -> (String, Vec<String>) {
        let cells: Vec<Vec<String>> = self
            .bindings
            .iter()
            .map(|row| {
                self.columns
                    .iter()
                    .map(|c| row.get(c).map(|v| v.to_string()).unwrap_or_default())
                    .collect()
            })
            .collect();
        let widths: Vec<usize> = self
            .columns
            .iter()
            .enumerate()
            .map(|(j, c)| {
                cells
                    .iter()
                    .map(|r| r[j].chars().count())
                    .chain([c.chars().count()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |r: &[String]| {
            r.iter()
                .zip(&widths)
                .map(|(cell, w)| format!("{cell:<w$}"))
                .collect::<Vec<_>>()
                .join(" | ")
                .trim_end()
                .to_string()
        };
        (line(&self.columns), cells.iter().map(|r| line(r)).collect())
    }

    /// The table with a leading reference column numbered from `first_ref`.
    /// Zero rows render as "no record found".
    pub fn render_table(&self, first_ref: usize) -> String {
        if self.bindings.is_empty() {
            return "no record found".to_string();
        }
        let (header, rows) = self.table_lines();
        render_ref_table(
            &header,
            rows.iter()
                .enumerate()
                .map(|(i, r)| (first_ref + i, r.as_str())),
        )
    }
}

/// Lays out `[n] row` lines under a header, indenting the header to the
/// width of the widest reference marker.
pub fn render_ref_table<'a>(
    header: &str,
    rows: impl IntoIterator<Item = (usize, &'a str)>,
) -> String {
    let rows: Vec<(String, &str)> = rows
        .into_iter()
        .map(|(n, r)| (format!("[{n}]"), r))
        .collect();
    let w = rows.iter().map(|(m, _)| m.len()).max().unwrap_or(0);
    let mut out = format!("{:w$} {header}", "");
    for (marker, row) in rows {
        out.push('\n');
        out.push_str(&format!("{marker:<w$} {row}"));
    }
    out
}

#[derive(Deserialize)]
struct ResultsDoc {
    results: ResultsBody,
}

#[derive(Deserialize)]
struct ResultsBody {
    bindings: Vec<BTreeMap<String, Term>>,
}

#[derive(Deserialize)]
struct Term {
    #[serde(rename = "type")]
    kind: String,
    value: String,
}

/// Parses a `application/sparql-results+json` document into rows typed by
/// the template's declared columns. Undeclared variables are ignored.
pub fn parse_results(
    template: &SparqlTemplate,
    body: &[u8],
    max_rows: usize,
) -> Result<(Vec<KgRow>, bool), KgError> {
    let doc: ResultsDoc =
        serde_json::from_slice(body).map_err(|e| KgError::Malformed(e.to_string()))?;
    let truncated = doc.results.bindings.len() > max_rows;
    let mut rows = Vec::new();
    for binding in doc.results.bindings.into_iter().take(max_rows) {
        let mut row = KgRow::new();
        for (var, term) in binding {
            let Some(col) = template.column(&var) else {
                continue;
            };
            row.insert(var.clone(), typed_value(&var, col.kind, term)?);
        }
        rows.push(row);
    }
    Ok((rows, truncated))
}

fn typed_value(var: &str, kind: ColumnType, term: Term) -> Result<KgValue, KgError> {
    let bad = |what: &str| KgError::Malformed(format!("column {var:?}: {what}"));
    match kind {
        ColumnType::String => Ok(KgValue::String(term.value)),
        ColumnType::Iri => {
            if term.kind == "uri" {
                Ok(KgValue::Iri(term.value))
            } else {
                Err(bad(&format!("expected an IRI, got {}", term.kind)))
            }
        }
        ColumnType::Integer => {
            let v = term.value.trim();
            if let Ok(n) = v.parse::<i64>() {
                return Ok(KgValue::Integer(n));
            }
            match v.parse::<f64>() {
                Ok(f) if f.fract() == 0.0 && f.abs() < 9.0e15 => Ok(KgValue::Integer(f as i64)),
                _ => Err(bad(&format!("{v:?} is not an integer"))),
            }
        }
        ColumnType::Date => {
            let v = term.value.trim();
            let ok = v.len() >= 4 && v.as_bytes()[..4].iter().all(u8::is_ascii_digit);
            if ok {
                Ok(KgValue::Date(v.to_string()))
            } else {
                Err(bad(&format!("{v:?} is not a date")))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct SparqlClientConfig {
    pub endpoint: String,
    pub timeout: Duration,
    pub max_rows: usize,
    pub max_inflight: usize,
}

impl Default for SparqlClientConfig {
    fn default() -> Self {
        Self {
            endpoint: DEFAULT_ENDPOINT.to_string(),
            timeout: Duration::from_millis(DEFAULT_TIMEOUT_MS),
            max_rows: DEFAULT_MAX_ROWS,
            max_inflight: 4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SparqlClient {
    config: SparqlClientConfig,
    http: reqwest::Client,
    permits: Arc<Semaphore>,
}

impl SparqlClient {
    pub fn new(config: SparqlClientConfig) -> Self {
        let permits = Arc::new(Semaphore::new(config.max_inflight.max(1)));
        Self {
            config,
            http: reqwest::Client::new(),
            permits,
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.config.endpoint
    }

    /// Runs `query` and types the rows with `template`'s columns. The whole
    /// exchange, body included, is bounded by the configured timeout.
    pub async fn execute(
        &self,
        query: &str,
        template: &SparqlTemplate,
    ) -> Result<KgAnswer, KgError> {
        let _permit = self
            .permits
            .acquire()
            .await
            .expect("semaphore never closed");
        let started = Instant::now();
        let endpoint = self.config.endpoint.clone();
        let exchange = async {
            let resp = self
                .http
                .get(&endpoint)
                .query(&[("query", query)])
                .header(reqwest::header::ACCEPT, RESULTS_MEDIA_TYPE)
                .send()
                .await
                .map_err(|e| KgError::Transport {
                    endpoint: endpoint.clone(),
                    cause: e.to_string(),
                })?;
            let status = resp.status();
            if !status.is_success() {
                return Err(KgError::Http {
                    endpoint: endpoint.clone(),
                    status: status.as_u16(),
                });
            }
            resp.bytes().await.map_err(|e| KgError::Transport {
                endpoint: endpoint.clone(),
                cause: e.to_string(),
            })
        };
        let body = tokio::time::timeout(self.config.timeout, exchange)
            .await
            .map_err(|_| KgError::Timeout {
                ms: self.config.timeout.as_millis() as u64,
            })??;
        let (bindings, truncated) = parse_results(template, &body, self.config.max_rows)?;
        Ok(KgAnswer {
            template_id: template.template_id.clone(),
            columns: template
                .result_columns
                .iter()
                .map(|c| c.name.clone())
                .collect(),
            bindings,
            endpoint,
            elapsed_ms: started.elapsed().as_millis() as u64,
            sparql: query.to_string(),
            truncated,
        })
    }
}

/// The full KG path: entities, template, query string, execution.
#[derive(Debug, Clone)]
pub struct KgEngine {
    pub catalog: TemplateCatalog,
    pub rules: RuleTable,
    pub client: SparqlClient,
}

impl KgEngine {
    /// Resolves a query to its template and the expanded SPARQL, without
    /// contacting the endpoint.
    pub fn plan(
        &self,
        query: &str,
        titles: &[TitleEntry],
    ) -> Result<(&SparqlTemplate, String), KgError> {
        let entities = extract_entities(query, &self.rules, titles);
        let template = select_template(query, &entities, &self.catalog)?;
        let sparql = build_query(template, &entities.slots_for(template))?;
        Ok((template, sparql))
    }

    pub async fn answer(&self, query: &str, titles: &[TitleEntry]) -> Result<KgAnswer, KgError> {
        let (template, sparql) = self.plan(query, titles)?;
        self.client.execute(&sparql, template).await
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entities(q: &str) -> KgEntities {
        extract_entities(q, &RuleTable::default(), &[])
    }

    fn pick(q: &str) -> Result<String, KgError> {
        let catalog = TemplateCatalog::builtin();
        select_template(q, &entities(q), &catalog).map(|t| t.template_id.clone())
    }

    #[test]
    fn builtin_catalog_has_eighteen_unique_templates() {
        let c = TemplateCatalog::builtin();
        assert_eq!(c.len(), 18);
        let authors = c
            .templates()
            .iter()
            .filter(|t| t.category == TemplateCategory::Author)
            .count();
        assert_eq!(authors, 10);
    }

    #[test]
    fn orcid_request_and_author() {
        let e = entities("What is the ORCID of Jane Doe?");
        assert_eq!(e.authors, vec!["Jane Doe"]);
        assert_eq!(e.requested, vec!["orcid"]);
        assert!(e.works.is_empty());
    }

    #[test]
    fn doi_literal_is_trimmed() {
        let e = entities("Find the DOI 10.1234/abc.5678");
        assert_eq!(
            e.identifiers.get("doi").map(String::as_str),
            Some("10.1234/abc.5678")
        );
        let e = entities("Details for 10.1234/abc.5678?");
        assert_eq!(e.identifiers["doi"], "10.1234/abc.5678");
    }

    #[test]
    fn hello_has_no_entities() {
        let e = entities("hello");
        assert!(
            e.authors.is_empty()
                && e.works.is_empty()
                && e.identifiers.is_empty()
                && e.requested.is_empty()
        );
        assert_eq!(e.year, None);
    }

    #[test]
    fn orcid_literal_with_x_checksum() {
        let e = entities("Who has ORCID 0000-0002-1825-009X?");
        assert_eq!(e.identifiers["orcid"], "0000-0002-1825-009X");
    }

    #[test]
    fn selection_examples() {
        assert_eq!(
            pick("What is the h-index of Jane Doe?").unwrap(),
            "author_h_index"
        );
        assert_eq!(
            pick("Who are the co-authors of \"Deep Residual Learning\"?").unwrap(),
            "work_coauthors"
        );
        assert_eq!(
            pick("Who are the co-authors of Jane Doe?").unwrap(),
            "author_coauthors"
        );
        assert!(matches!(
            pick("What is the weather?"),
            Err(KgError::Unsupported { .. })
        ));
    }

    #[test]
    fn escaping_quotes_and_controls() {
        assert_eq!(
            escape_literal("name", "a \"b\"\\").unwrap(),
            "a \\\"b\\\"\\\\"
        );
        assert_eq!(escape_literal("name", "a\nb\tc").unwrap(), "a\\nb\\tc");
        assert!(matches!(
            escape_literal("name", "a\u{7}b"),
            Err(KgError::UnescapableChar { code: 7, .. })
        ));
    }

    #[test]
    fn missing_slot_is_named() {
        let c = TemplateCatalog::builtin();
        let t = c.get("author_h_index").unwrap();
        let err = build_query(t, &BTreeMap::new()).unwrap_err();
        assert_eq!(err.to_string(), "missing slot \"name\"");
        let blank = BTreeMap::from([("name".to_string(), "  ".to_string())]);
        assert!(matches!(
            build_query(t, &blank),
            Err(KgError::MissingSlot(_))
        ));
    }

    #[test]
    fn placeholder_must_be_declared() {
        let src = "# id: x\n# category: work\n# slots: title\n# columns: a:string\n# cues: a\nSELECT {{title}} {{doi}}";
        assert!(SparqlTemplate::parse("x", src).is_err());
        let src = "# id: x\n# category: work\n# slots: title, doi\n# columns: a:string\n# cues: a\nSELECT {{title}}";
        assert!(SparqlTemplate::parse("x", src).is_err());
    }

    #[test]
    fn results_are_typed_by_column() {
        let c = TemplateCatalog::builtin();
        let t = c.get("author_h_index").unwrap();
        let body = br#"{"head":{"vars":["author","hIndex","extra"]},"results":{"bindings":[
            {"author":{"type":"uri","value":"https://semopenalex.org/author/A1"},
             "hIndex":{"type":"literal","datatype":"http://www.w3.org/2001/XMLSchema#integer","value":"42"},
             "extra":{"type":"literal","value":"ignored"}}]}}"#;
        let (rows, truncated) = parse_results(t, body, 200).unwrap();
        assert!(!truncated);
        assert_eq!(rows[0]["hIndex"], KgValue::Integer(42));
        assert!(!rows[0].contains_key("extra"));
        let bad = br#"{"results":{"bindings":[{"hIndex":{"type":"literal","value":"many"}}]}}"#;
        assert!(matches!(
            parse_results(t, bad, 200),
            Err(KgError::Malformed(_))
        ));
        assert!(matches!(
            parse_results(t, b"<html>", 200),
            Err(KgError::Malformed(_))
        ));
    }

    #[test]
    fn row_cap_truncates() {
        let c = TemplateCatalog::builtin();
        let t = c.get("author_h_index").unwrap();
        let row = r#"{"hIndex":{"type":"literal","value":"1"}}"#;
        let body = format!(r#"{{"results":{{"bindings":[{}]}}}}"#, [row; 5].join(","));
        let (rows, truncated) = parse_results(t, body.as_bytes(), 3).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(truncated);
    }

    #[test]
    fn table_rendering_aligns_columns() {
        let answer = KgAnswer {
            template_id: "author_h_index".into(),
            columns: vec!["name".into(), "hIndex".into()],
            bindings: vec![
                KgRow::from([
                    ("name".into(), KgValue::String("Jane Doe".into())),
                    ("hIndex".into(), KgValue::Integer(42)),
                ]),
                KgRow::from([
                    ("name".into(), KgValue::String("J. Doe".into())),
                    ("hIndex".into(), KgValue::Integer(7)),
                ]),
            ],
            endpoint: "mock".into(),
            elapsed_ms: 0,
            sparql: String::new(),
            truncated: false,
        };
        assert_eq!(
            answer.render_table(1),
            "    name     | hIndex\n[1] Jane Doe | 42\n[2] J. Doe   | 7"
        );
        assert_eq!(answer.table_lines().1[0], "Jane Doe | 42");
    }
}
