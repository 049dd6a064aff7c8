//! Service configuration.
//!
//! Resolution order, highest first: `--set section.key=value` flags,
//! `SCHOLARAG_SECTION__KEY` environment variables, then the TOML file named by
//! `--config` or `SCHOLARAG_CONFIG`. Every key has a default, so an empty
//! file is valid. Unknown sections and keys are rejected.

use std::path::{Path, PathBuf};

use scholarag_core::corpus::{IngestMode, DEFAULT_MIN_CHARS};
use serde::{Deserialize, Serialize};

pub const ENV_PREFIX: &str = "SCHOLARAG_";
pub const ENV_CONFIG: &str = "SCHOLARAG_CONFIG";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {cause}")]
    Read { path: String, cause: String },
    #[error("config {origin}: {message}")]
    Syntax { origin: String, message: String },
    #[error("unknown config section [{0}]")]
    UnknownSection(String),
    #[error("[{section}] {message}")]
    Invalid { section: String, message: String },
    #[error("{key} = {value} is out of range; expected {expected}")]
    OutOfRange {
        key: &'static str,
        value: String,
        expected: &'static str,
    },
    #[error("override {0:?} must look like section.key=value")]
    BadOverride(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServerConfig {
    pub listen: String,
    pub max_concurrency: usize,
    pub cors_origins: Vec<String>,
    pub shutdown_grace_ms: u64,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8080".into(),
            max_concurrency: 16,
            cors_origins: vec!["http://localhost:5173".into()],
            shutdown_grace_ms: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub path: Option<PathBuf>,
    pub mode: IngestMode,
    pub min_chars: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            path: None,
            mode: IngestMode::Strict,
            min_chars: DEFAULT_MIN_CHARS,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IndexConfig {
    /// When unset the index is built in memory at startup.
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalConfig {
    pub k: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            k: scholarag_core::pipeline::DEFAULT_K,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierKind {
    #[default]
    Keyword,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RouterConfig {
    pub threshold: f64,
    /// Extra identifier terms, one per line, added to the built-in list.
    pub rules: Option<PathBuf>,
    pub classifier: ClassifierKind,
}

impl Default for RouterConfig {
    fn default() -> Self {
        Self {
            threshold: scholarag_core::router::DEFAULT_THRESHOLD,
            rules: None,
            classifier: ClassifierKind::Keyword,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GroundingConfig {
    pub threshold: f64,
    pub context_chars: usize,
}

impl Default for GroundingConfig {
    fn default() -> Self {
        Self {
            threshold: scholarag_core::grounding::DEFAULT_THRESHOLD,
            context_chars: scholarag_core::grounding::DEFAULT_CONTEXT_CHARS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ComposeConfig {
    pub budget_chars: usize,
    pub prompts_dir: Option<PathBuf>,
    pub with_heading: bool,
}

impl Default for ComposeConfig {
    fn default() -> Self {
        Self {
            budget_chars: scholarag_core::compose::DEFAULT_BUDGET_CHARS,
            prompts_dir: None,
            with_heading: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LlmConfig {
    /// Base URL of an OpenAI-compatible server; `/v1/chat/completions` is appended.
    pub url: Option<String>,
    pub token: Option<String>,
    pub model: String,
    pub max_inflight: usize,
    pub timeout_ms: u64,
    pub max_attempts: u32,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Replays canned replies from a line-delimited script instead of
    /// calling a server. Takes precedence over `url`.
    pub script: Option<PathBuf>,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            url: None,
            token: None,
            model: "default".into(),
            max_inflight: 4,
            timeout_ms: 120_000,
            max_attempts: 3,
            temperature: 0.0,
            max_tokens: 1024,
            script: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingProvider {
    #[default]
    Hash,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbeddingConfig {
    pub provider: EmbeddingProvider,
    pub url: Option<String>,
    pub token: Option<String>,
    pub dim: usize,
    pub timeout_ms: u64,
    /// Embed `section_path` ahead of each chunk's text.
    pub embed_heading: bool,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            provider: EmbeddingProvider::Hash,
            url: None,
            token: None,
            dim: 384,
            timeout_ms: 30_000,
            embed_heading: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KgConfig {
    pub enabled: bool,
    pub endpoint: String,
    pub timeout_ms: u64,
    pub max_rows: usize,
    pub max_inflight: usize,
    pub templates_dir: Option<PathBuf>,
    /// Phrase KG tables through the LLM instead of returning them verbatim.
    pub gloss: bool,
}

impl Default for KgConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            endpoint: scholarag_core::kgfact::DEFAULT_ENDPOINT.into(),
            timeout_ms: scholarag_core::kgfact::DEFAULT_TIMEOUT_MS,
            max_rows: scholarag_core::kgfact::DEFAULT_MAX_ROWS,
            max_inflight: 4,
            templates_dir: None,
            gloss: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BiblioConfig {
    /// Base URL of a metadata API exposing `GET /search?title=`.
    pub url: Option<String>,
    pub token: Option<String>,
    pub timeout_ms: u64,
}

impl Default for BiblioConfig {
    fn default() -> Self {
        Self {
            url: None,
            token: None,
            timeout_ms: 5_000,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Config {
    pub server: ServerConfig,
    pub corpus: CorpusConfig,
    pub index: IndexConfig,
    pub retrieval: RetrievalConfig,
    pub router: RouterConfig,
    pub grounding: GroundingConfig,
    pub compose: ComposeConfig,
    pub llm: LlmConfig,
    pub embedding: EmbeddingConfig,
    pub kg: KgConfig,
    pub biblio: BiblioConfig,
}

fn section<T: serde::de::DeserializeOwned + Default>(
    tree: &mut toml::Table,
    name: &str,
) -> Result<T, ConfigError> {
    match tree.remove(name) {
        None => Ok(T::default()),
        Some(v) => v
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Invalid {
                section: name.into(),
                message: e.message().trim().to_string(),
            }),
    }
}

fn check<T: PartialOrd + std::fmt::Display>(
    key: &'static str,
    value: T,
    lo: T,
    hi: T,
    expected: &'static str,
) -> Result<(), ConfigError> {
    if value >= lo && value <= hi {
        Ok(())
    } else {
        Err(ConfigError::OutOfRange {
            key,
            value: value.to_string(),
            expected,
        })
    }
}

impl Config {
    pub fn from_tree(mut tree: toml::Table) -> Result<Self, ConfigError> {
        let config = Self {
            server: section(&mut tree, "server")?,
            corpus: section(&mut tree, "corpus")?,
            index: section(&mut tree, "index")?,
            retrieval: section(&mut tree, "retrieval")?,
            router: section(&mut tree, "router")?,
            grounding: section(&mut tree, "grounding")?,
            compose: section(&mut tree, "compose")?,
            llm: section(&mut tree, "llm")?,
            embedding: section(&mut tree, "embedding")?,
            kg: section(&mut tree, "kg")?,
            biblio: section(&mut tree, "biblio")?,
        };
        if let Some(unknown) = tree.keys().next() {
            return Err(ConfigError::UnknownSection(unknown.clone()));
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        check(
            "server.max_concurrency",
            self.server.max_concurrency,
            1,
            4096,
            "1..=4096",
        )?;
        check(
            "corpus.min_chars",
            self.corpus.min_chars,
            1,
            1_000_000,
            "1..=1000000",
        )?;
        check("retrieval.k", self.retrieval.k, 1, 1000, "1..=1000")?;
        check(
            "router.threshold",
            self.router.threshold,
            0.0,
            1.0,
            "0.0..=1.0",
        )?;
        check(
            "grounding.threshold",
            self.grounding.threshold,
            0.0,
            1.0,
            "0.0..=1.0",
        )?;
        check(
            "grounding.context_chars",
            self.grounding.context_chars,
            1,
            10_000_000,
            "1..=10000000",
        )?;
        check(
            "compose.budget_chars",
            self.compose.budget_chars,
            1,
            10_000_000,
            "1..=10000000",
        )?;
        check(
            "llm.max_inflight",
            self.llm.max_inflight,
            1,
            1024,
            "1..=1024",
        )?;
        check(
            "llm.timeout_ms",
            self.llm.timeout_ms,
            1,
            3_600_000,
            "1..=3600000",
        )?;
        check("llm.max_attempts", self.llm.max_attempts, 1, 20, "1..=20")?;
        check(
            "llm.temperature",
            self.llm.temperature,
            0.0,
            2.0,
            "0.0..=2.0",
        )?;
        check(
            "llm.max_tokens",
            self.llm.max_tokens,
            1,
            1_000_000,
            "1..=1000000",
        )?;
        check("embedding.dim", self.embedding.dim, 1, 65_536, "1..=65536")?;
        check(
            "embedding.timeout_ms",
            self.embedding.timeout_ms,
            1,
            3_600_000,
            "1..=3600000",
        )?;
        check(
            "kg.timeout_ms",
            self.kg.timeout_ms,
            1,
            3_600_000,
            "1..=3600000",
        )?;
        check("kg.max_rows", self.kg.max_rows, 1, 100_000, "1..=100000")?;
        check("kg.max_inflight", self.kg.max_inflight, 1, 1024, "1..=1024")?;
        check(
            "biblio.timeout_ms",
            self.biblio.timeout_ms,
            1,
            3_600_000,
            "1..=3600000",
        )?;
        if self.embedding.provider == EmbeddingProvider::Remote && self.embedding.url.is_none() {
            return Err(ConfigError::Invalid {
                section: "embedding".into(),
                message: "provider = \"remote\" needs embedding.url".into(),
            });
        }
        Ok(())
    }
}

/// Parses a raw value as a TOML scalar or array, falling back to a plain
/// string so `llm.url=http://x` needs no quoting.
fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(
    tree: &mut toml::Table,
    section: &str,
    key: &str,
    value: toml::Value,
) -> Result<(), ConfigError> {
    let entry = tree
        .entry(section.to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    match entry {
        toml::Value::Table(t) => {
            t.insert(key.to_string(), value);
            Ok(())
        }
        _ => Err(ConfigError::Invalid {
            section: section.into(),
            message: "is not a table".into(),
        }),
    }
}

/// Where configuration comes from, before merging.
#[derive(Debug, Clone, Default)]
pub struct Sources {
    pub file: Option<PathBuf>,
    pub env: Vec<(String, String)>,
    pub overrides: Vec<String>,
}

impl Sources {
    /// Reads `SCHOLARAG_CONFIG` and `SCHOLARAG_*__*` from the process environment.
    pub fn from_env(file: Option<PathBuf>, overrides: Vec<String>) -> Self {
        let env: Vec<(String, String)> = std::env::vars()
            .filter(|(k, _)| k.starts_with(ENV_PREFIX))
            .collect();
        let file = file.or_else(|| {
            env.iter()
                .find(|(k, _)| k == ENV_CONFIG)
                .map(|(_, v)| PathBuf::from(v))
        });
        Self {
            file,
            env,
            overrides,
        }
    }

    pub fn resolve(&self) -> Result<Config, ConfigError> {
        let mut tree = match &self.file {
            Some(path) => read_file(path)?,
            None => toml::Table::new(),
        };
        for (name, raw) in &self.env {
            let Some(rest) = name.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let Some((section, key)) = rest.split_once("__") else {
                continue;
            };
            set_path(
                &mut tree,
                &section.to_lowercase(),
                &key.to_lowercase(),
                parse_value(raw),
            )?;
        }
        for o in &self.overrides {
            let (path, raw) = o
                .split_once('=')
                .ok_or_else(|| ConfigError::BadOverride(o.clone()))?;
            let (section, key) = path
                .trim()
                .split_once('.')
                .ok_or_else(|| ConfigError::BadOverride(o.clone()))?;
            set_path(&mut tree, section, key, parse_value(raw.trim()))?;
        }
        Config::from_tree(tree)
    }
}

fn read_file(path: &Path) -> Result<toml::Table, ConfigError> {
    let src = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
        path: path.display().to_string(),
        cause: e.to_string(),
    })?;
    src.parse::<toml::Table>().map_err(|e| ConfigError::Syntax {
        origin: path.display().to_string(),
        message: e.message().to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sources(
        file: &str,
        env: &[(&str, &str)],
        overrides: &[&str],
    ) -> (tempfile::TempDir, Sources) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, file).unwrap();
        let s = Sources {
            file: Some(path),
            env: env
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
            overrides: overrides.iter().map(|s| s.to_string()).collect(),
        };
        (dir, s)
    }

    #[test]
    fn empty_config_is_all_defaults() {
        assert_eq!(
            Config::from_tree(toml::Table::new()).unwrap(),
            Config::default()
        );
    }

    #[test]
    fn flags_beat_env_beat_file() {
        let (_d, s) = sources(
            "[retrieval]\nk = 3\n[llm]\nmodel = \"file\"\n",
            &[("SCHOLARAG_RETRIEVAL__K", "5")],
            &[],
        );
        let c = s.resolve().unwrap();
        assert_eq!(c.retrieval.k, 5);
        assert_eq!(c.llm.model, "file");

        let (_d, s) = sources(
            "[retrieval]\nk = 3\n",
            &[("SCHOLARAG_RETRIEVAL__K", "5")],
            &["retrieval.k=7"],
        );
        assert_eq!(s.resolve().unwrap().retrieval.k, 7);
    }

    #[test]
    fn bare_strings_need_no_quotes() {
        let (_d, s) = sources(
            "",
            &[("SCHOLARAG_LLM__URL", "http://127.0.0.1:9/x")],
            &["kg.endpoint=http://h/sparql"],
        );
        let c = s.resolve().unwrap();
        assert_eq!(c.llm.url.as_deref(), Some("http://127.0.0.1:9/x"));
        assert_eq!(c.kg.endpoint, "http://h/sparql");
    }

    #[test]
    fn unknown_key_is_named() {
        let (_d, s) = sources("[llm]\nmodle = \"x\"\n", &[], &[]);
        let msg = s.resolve().unwrap_err().to_string();
        assert!(msg.contains("[llm]") && msg.contains("modle"), "{msg}");

        let (_d, s) = sources("[lmm]\nmodel = \"x\"\n", &[], &[]);
        assert!(s.resolve().unwrap_err().to_string().contains("[lmm]"));
    }

    #[test]
    fn ranges_are_enforced() {
        for (o, key) in [
            ("router.threshold=1.5", "router.threshold"),
            ("retrieval.k=0", "retrieval.k"),
            ("llm.temperature=-1.0", "llm.temperature"),
        ] {
            let (_d, s) = sources("", &[], &[o]);
            let msg = s.resolve().unwrap_err().to_string();
            assert!(msg.starts_with(key), "{msg}");
        }
    }

    #[test]
    fn malformed_override_rejected() {
        let (_d, s) = sources("", &[], &["retrieval"]);
        assert!(matches!(s.resolve(), Err(ConfigError::BadOverride(_))));
    }

    #[test]
    fn example_file_parses() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scholarag.example.toml");
        let tree = read_file(&path).unwrap();
        Config::from_tree(tree).unwrap();
    }
}
