//! Completion backends and citation extraction.
//!
//! [`HttpCompletionBackend`] talks to any chat-completions style server
//! (`POST <url>/v1/chat/completions`). [`ScriptedBackend`] replays canned
//! replies from a JSON-lines fixture and is what the offline tests run on.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::{Arc, LazyLock};
use std::time::Duration;

use async_trait::async_trait;
use regex::Regex;
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

use crate::compose::{BibEntry, EvidenceItem};
use crate::kgfact::KgAnswer;
use crate::router::{RoutingDecision, TaskLabel};

#[derive(Debug, thiserror::Error)]
pub enum GenerateError {
    #[error("completion endpoint unreachable after {attempts} attempt(s): {cause}")]
    Unreachable { attempts: u32, cause: String },
    #[error("completion endpoint returned HTTP {status} after {attempts} attempt(s)")]
    Http { status: u16, attempts: u32 },
    #[error("completion timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("completion endpoint returned an empty completion")]
    EmptyCompletion,
    #[error("malformed completion response: {0}")]
    Malformed(String),
    #[error("scripted backend: {0}")]
    Script(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub model_id: String,
    /// 0 selects greedy decoding.
    pub temperature: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    /// Number of HTTP attempts it took (1 when no retry happened).
    pub attempts: u32,
}

#[async_trait]
pub trait CompletionBackend: Send + Sync {
    fn model_id(&self) -> &str;

    async fn complete(&self, request: &GenerationRequest) -> Result<Completion, GenerateError>;
}

#[derive(Debug, Clone)]
pub struct HttpCompletionConfig {
    pub url: String,
    pub token: Option<String>,
    pub model: String,
    pub max_inflight: usize,
    pub timeout: Duration,
    pub max_attempts: u32,
    pub backoff: Duration,
}

impl HttpCompletionConfig {
    pub fn new(url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            token: None,
            model: model.into(),
            max_inflight: 4,
            timeout: Duration::from_secs(120),
            max_attempts: 3,
            backoff: Duration::from_millis(500),
        }
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReply,
}

#[derive(Deserialize)]
struct ChatReply {
    content: Option<String>,
}

pub struct HttpCompletionBackend {
    config: HttpCompletionConfig,
    endpoint: String,
    client: reqwest::Client,
    inflight: Arc<Semaphore>,
}

enum Attempt {
    Retry(GenerateError),
    Fatal(GenerateError),
}

impl HttpCompletionBackend {
    pub fn new(config: HttpCompletionConfig) -> Result<Self, GenerateError> {
        let client = reqwest::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| GenerateError::Unreachable {
                attempts: 0,
                cause: e.to_string(),
            })?;
        let endpoint = format!("{}/v1/chat/completions", config.url.trim_end_matches('/'));
        Ok(Self {
            inflight: Arc::new(Semaphore::new(config.max_inflight.max(1))),
            endpoint,
            client,
            config,
        })
    }

    async fn attempt(&self, request: &GenerationRequest, n: u32) -> Result<String, Attempt> {
        let body = ChatRequest {
            model: &request.model_id,
            messages: [ChatMessage {
                role: "user",
                content: &request.prompt,
            }],
            temperature: request.temperature,
            max_tokens: request.max_tokens,
        };
        let mut req = self.client.post(&self.endpoint).json(&body);
        if let Some(token) = &self.config.token {
            req = req.bearer_auth(token);
        }
        let resp = match req.send().await {
            Ok(r) => r,
            Err(e) if e.is_timeout() => {
                return Err(Attempt::Retry(GenerateError::Timeout { attempts: n }))
            }
            Err(e) => {
                return Err(Attempt::Retry(GenerateError::Unreachable {
                    attempts: n,
                    cause: e.to_string(),
                }))
            }
        };
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(Attempt::Retry(GenerateError::Http {
                status: status.as_u16(),
                attempts: n,
            }));
        }
        if !status.is_success() {
            return Err(Attempt::Fatal(GenerateError::Http {
                status: status.as_u16(),
                attempts: n,
            }));
        }
        let parsed: ChatResponse = match resp.json().await {
            Ok(p) => p,
            Err(e) if e.is_timeout() => {
                return Err(Attempt::Retry(GenerateError::Timeout { attempts: n }))
            }
            Err(e) => return Err(Attempt::Fatal(GenerateError::Malformed(e.to_string()))),
        };
        let text = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| Attempt::Fatal(GenerateError::Malformed("no choices".into())))?;
        if text.trim().is_empty() {
            return Err(Attempt::Fatal(GenerateError::EmptyCompletion));
        }
        Ok(text)
    }
}

#[async_trait]
impl CompletionBackend for HttpCompletionBackend {
    fn model_id(&self) -> &str {
        &self.config.model
    }

    /// Retries transport failures, timeouts, 429 and 5xx with exponential backoff.
    async fn complete(&self, request: &GenerationRequest) -> Result<Completion, GenerateError> {
        let _permit = self
            .inflight
            .acquire()
            .await
            .map_err(|e| GenerateError::Unreachable {
                attempts: 0,
                cause: e.to_string(),
            })?;
        let max = self.config.max_attempts.max(1);
        let mut last = None;
        for n in 1..=max {
            match self.attempt(request, n).await {
                Ok(text) => return Ok(Completion { text, attempts: n }),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(e)) => {
                    tracing::warn!(attempt = n, error = %e, "completion attempt failed");
                    last = Some(e);
                    if n < max {
                        tokio::time::sleep(self.config.backoff * 2u32.pow(n - 1)).await;
                    }
                }
            }
        }
        Err(last.expect("at least one attempt"))
    }
}

#[derive(Debug, Clone, Deserialize)]
struct ScriptRule {
    when: Option<String>,
    reply: String,
}

/// Replays scripted replies: the first rule whose `when` substring occurs in
/// the prompt wins; a rule without `when` is the default.
///
/// Fixture format, one JSON object per line:
/// `{"when": "aspirin", "reply": "yes [1]"}` or `{"reply": "fallback"}`.
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    model_id: String,
    rules: Vec<ScriptRule>,
}

impl ScriptedBackend {
    pub fn from_jsonl(src: &str) -> Result<Self, GenerateError> {
        let rules = src
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
            .map(|(i, l)| {
                serde_json::from_str::<ScriptRule>(l)
                    .map_err(|e| GenerateError::Script(format!("line {}: {e}", i + 1)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            model_id: "scripted".into(),
            rules,
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, GenerateError> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| GenerateError::Script(format!("{}: {e}", path.display())))?;
        Self::from_jsonl(&src)
    }

    /// A backend that always answers `reply`.
    pub fn constant(reply: impl Into<String>) -> Self {
        Self {
            model_id: "scripted".into(),
            rules: vec![ScriptRule {
                when: None,
                reply: reply.into(),
            }],
        }
    }

    pub fn push_rule(&mut self, when: impl Into<String>, reply: impl Into<String>) {
        self.rules.insert(
            0,
            ScriptRule {
                when: Some(when.into()),
                reply: reply.into(),
            },
        );
    }
}

#[async_trait]
impl CompletionBackend for ScriptedBackend {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    async fn complete(&self, request: &GenerationRequest) -> Result<Completion, GenerateError> {
        let hit = self
            .rules
            .iter()
            .find(|r| {
                r.when
                    .as_deref()
                    .is_some_and(|w| request.prompt.contains(w))
            })
            .or_else(|| self.rules.iter().find(|r| r.when.is_none()))
            .ok_or_else(|| GenerateError::Script("no scripted reply matches the prompt".into()))?;
        if hit.reply.trim().is_empty() {
            return Err(GenerateError::EmptyCompletion);
        }
        Ok(Completion {
            text: hit.reply.clone(),
            attempts: 1,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CitationExtraction {
    pub citations: BTreeSet<u32>,
    /// Out-of-range markers, unique, in order of first appearance.
    pub dropped: Vec<u32>,
}

static MARKER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\[\s*([0-9]{1,9}(?:\s*,\s*[0-9]{1,9})*)\s*\]").expect("marker regex")
});

/// Collects `[n]`, `[n, m]` and `[n][m]` markers. Numbers outside `1..=m` go to
/// `dropped`; anything else in the text is ignored.
pub fn extract_citations(text: &str, m: usize) -> CitationExtraction {
    let mut out = CitationExtraction::default();
    for cap in MARKER.captures_iter(text) {
        for num in cap[1].split(',') {
            let n: u32 = num.trim().parse().expect("1-9 digits fit u32");
            if n >= 1 && (n as usize) <= m {
                out.citations.insert(n);
            } else if !out.dropped.contains(&n) {
                out.dropped.push(n);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timings {
    pub route_ms: u64,
    pub retrieve_ms: u64,
    pub generate_ms: u64,
    pub total_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerProvenance {
    pub task: TaskLabel,
    pub routing: RoutingDecision,
    pub threshold: f64,
    pub k: usize,
    pub model_id: Option<String>,
    pub attempts: u32,
    /// Evidence ref numbers removed to fit the prompt budget.
    pub dropped_evidence: Vec<u32>,
    pub warnings: Vec<String>,
    pub timings: Timings,
}

/// The answer text with its verified citation set and bibliography.
///
/// `citations` only ever holds ref numbers of items in `evidence`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedAnswer {
    pub text: String,
    pub citations: BTreeSet<u32>,
    pub dropped_markers: Vec<u32>,
    pub evidence: Vec<EvidenceItem>,
    pub bibliography: Vec<BibEntry>,
    pub kg: Option<KgAnswer>,
    pub ungrounded: bool,
    pub provenance: AnswerProvenance,
}
