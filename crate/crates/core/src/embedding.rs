//! Text embedding providers.
//!
//! [`HashEmbedder`] is the offline baseline: signed feature hashing of
//! lowercase alphanumeric tokens followed by L2 normalization. [`RemoteEmbedder`]
//! speaks a small JSON protocol so a real sentence-embedding model can be served
//! out of process.

use std::collections::HashMap;
use std::hash::Hasher;
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use fnv::FnvHasher;
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

/// Embedding dimension used by default.
pub const DEFAULT_DIM: usize = 384;

#[derive(Debug, thiserror::Error)]
pub enum EmbeddingError {
    #[error("text at index {index} is empty")]
    EmptyText { index: usize },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("zero-norm vector")]
    ZeroNorm,
    #[error("non-finite value in vector")]
    NonFinite,
    #[error("provider {provider_id} failed: {cause}")]
    Transport { provider_id: String, cause: String },
    #[error("provider id {0:?} already registered")]
    DuplicateProvider(String),
    #[error("invalid provider descriptor: {0}")]
    InvalidProvider(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector {
    values: Vec<f32>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self, EmbeddingError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite);
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }

    /// Returns a unit-norm copy. Fails on the zero vector.
    pub fn normalized(&self) -> Result<Self, EmbeddingError> {
        let n = self.norm();
        if n == 0.0 {
            return Err(EmbeddingError::ZeroNorm);
        }
        Ok(Self {
            values: self
                .values
                .iter()
                .map(|&v| (f64::from(v) / n) as f32)
                .collect(),
        })
    }
}

/// Cosine similarity clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbeddingError> {
    if a.dim() != b.dim() {
        return Err(EmbeddingError::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(EmbeddingError::ZeroNorm);
    }
    let dot: f64 = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Capability descriptor of an embedding provider.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderInfo {
    pub provider_id: String,
    pub dim: usize,
    pub normalized: bool,
}

#[async_trait]
pub trait Embedder: Send + Sync {
    fn info(&self) -> &ProviderInfo;

    /// Embeds every text, preserving order. The first empty text fails the
    /// whole batch with its index.
    async fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError>;

    async fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        let mut out = self.embed_batch(&[text.to_string()]).await?;
        Ok(out.pop().expect("one vector per text"))
    }
}

fn check_non_empty(texts: &[String]) -> Result<(), EmbeddingError> {
    match texts
        .iter()
        .position(|t| t.split_whitespace().next().is_none())
    {
        Some(index) => Err(EmbeddingError::EmptyText { index }),
        None => Ok(()),
    }
}

/// Deterministic signed feature-hashing embedder.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    info: ProviderInfo,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_DIM)
    }
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 1, "embedding dim must be at least 1");
        Self {
            info: ProviderInfo {
                provider_id: format!("hash-{dim}"),
                dim,
                normalized: true,
            },
        }
    }

    pub fn with_id(mut self, provider_id: impl Into<String>) -> Self {
        self.info.provider_id = provider_id.into();
        self
    }

    /// Synchronous form of [`Embedder::embed`].
    pub fn embed_text(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        if text.split_whitespace().next().is_none() {
            return Err(EmbeddingError::EmptyText { index: 0 });
        }
        let dim = self.info.dim;
        let mut acc = vec![0f64; dim];
        let lower = text.to_lowercase();
        let mut tokens: Vec<&str> = lower
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .collect();
        // Punctuation-only input still needs a non-zero vector.
        let fallback = lower.split_whitespace().collect::<Vec<_>>().join(" ");
        if tokens.is_empty() {
            tokens.push(&fallback);
        }
        for token in tokens {
            let mut h = FnvHasher::default();
            h.write(token.as_bytes());
            let hash = h.finish();
            let bucket = (hash % dim as u64) as usize;
            let sign = if hash >> 63 == 0 { 1.0 } else { -1.0 };
            acc[bucket] += sign;
        }
        let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            // Every token cancelled out; fall back to a single hashed bucket.
            let mut h = FnvHasher::default();
            h.write(fallback.as_bytes());
            acc[(h.finish() % dim as u64) as usize] = 1.0;
            return EmbeddingVector::new(acc.into_iter().map(|v| v as f32).collect());
        }
        EmbeddingVector::new(acc.into_iter().map(|v| (v / norm) as f32).collect())
    }
}

#[async_trait]
impl Embedder for HashEmbedder {
    fn info(&self) -> &ProviderInfo {
        &self.info
    }

    async fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        check_non_empty(texts)?;
        texts.iter().map(|t| self.embed_text(t)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct RemoteEmbedderConfig {
    pub url: String,
    pub token: Option<String>,
    pub dim: usize,
    pub normalized: bool,
    pub timeout: Duration,
    pub max_inflight: usize,
    pub batch_size: usize,
}

impl RemoteEmbedderConfig {
    pub fn new(url: impl Into<String>, dim: usize) -> Self {
        Self {
            url: url.into(),
            token: None,
            dim,
            normalized: true,
            timeout: Duration::from_secs(30),
            max_inflight: 4,
            batch_size: 64,
        }
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f32>>,
    dim: usize,
}

/// HTTP embedding provider: POST `{"texts": [...]}` returning
/// `{"vectors": [[...]], "dim": n}`.
pub struct RemoteEmbedder {
    info: ProviderInfo,
    config: RemoteEmbedderConfig,
    client: reqwest::Client,
    inflight: Arc<Semaphore>,
}

impl RemoteEmbedder {
    pub fn new(config: RemoteEmbedderConfig) -> Result<Self, EmbeddingError> {
        if config.dim == 0 || config.max_inflight == 0 || config.batch_size == 0 {
            return Err(EmbeddingError::InvalidProvider(
                "dim, max_inflight and batch_size must be positive".into(),
            ));
        }
        let client = reqwest::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| EmbeddingError::Transport {
                provider_id: "remote".into(),
                cause: e.to_string(),
            })?;
        Ok(Self {
            info: ProviderInfo {
                provider_id: format!("remote:{}", config.url),
                dim: config.dim,
                normalized: config.normalized,
            },
            inflight: Arc::new(Semaphore::new(config.max_inflight)),
            config,
            client,
        })
    }

    fn transport(&self, cause: impl ToString) -> EmbeddingError {
        EmbeddingError::Transport {
            provider_id: self.info.provider_id.clone(),
            cause: cause.to_string(),
        }
    }

    async fn post_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        let _permit = self
            .inflight
            .acquire()
            .await
            .map_err(|e| self.transport(e))?;
        let mut req = self
            .client
            .post(&self.config.url)
            .json(&EmbedRequest { texts });
        if let Some(token) = &self.config.token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().await.map_err(|e| self.transport(e))?;
        if !resp.status().is_success() {
            return Err(self.transport(format!("HTTP {}", resp.status())));
        }
        let body: EmbedResponse = resp.json().await.map_err(|e| self.transport(e))?;
        if body.vectors.len() != texts.len() {
            return Err(self.transport(format!(
                "expected {} vectors, got {}",
                texts.len(),
                body.vectors.len()
            )));
        }
        if body.dim != self.info.dim {
            return Err(EmbeddingError::DimensionMismatch {
                expected: self.info.dim,
                actual: body.dim,
            });
        }
        body.vectors
            .into_iter()
            .map(|v| {
                if v.len() != self.info.dim {
                    return Err(EmbeddingError::DimensionMismatch {
                        expected: self.info.dim,
                        actual: v.len(),
                    });
                }
                let v = EmbeddingVector::new(v)?;
                if self.info.normalized {
                    v.normalized()
                } else {
                    Ok(v)
                }
            })
            .collect()
    }
}

#[async_trait]
impl Embedder for RemoteEmbedder {
    fn info(&self) -> &ProviderInfo {
        &self.info
    }

    async fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        check_non_empty(texts)?;
        let batches = texts
            .chunks(self.config.batch_size)
            .map(|b| self.post_batch(b));
        let results = futures::future::try_join_all(batches).await?;
        Ok(results.into_iter().flatten().collect())
    }
}

/// Named embedding providers; ids are unique.
#[derive(Default, Clone)]
pub struct EmbedderRegistry {
    providers: HashMap<String, Arc<dyn Embedder>>,
}

impl EmbedderRegistry {
    pub fn register(&mut self, provider: Arc<dyn Embedder>) -> Result<(), EmbeddingError> {
        let info = provider.info();
        if info.dim == 0 {
            return Err(EmbeddingError::InvalidProvider(format!(
                "{} has dim 0",
                info.provider_id
            )));
        }
        let id = info.provider_id.clone();
        if self.providers.contains_key(&id) {
            return Err(EmbeddingError::DuplicateProvider(id));
        }
        self.providers.insert(id, provider);
        Ok(())
    }

    pub fn get(&self, provider_id: &str) -> Option<Arc<dyn Embedder>> {
        self.providers.get(provider_id).cloned()
    }

    pub fn ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.providers.keys().cloned().collect();
        ids.sort();
        ids
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(xs: &[f32]) -> EmbeddingVector {
        EmbeddingVector::new(xs.to_vec()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        let a = v(&[0.3, -1.2, 4.0]);
        assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(
            cosine_similarity(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(),
            0.0
        );
        // 32 / (sqrt(14) * sqrt(77))
        let c = cosine_similarity(&v(&[1.0, 2.0, 3.0]), &v(&[4.0, 5.0, 6.0])).unwrap();
        assert!((c - 0.974631846).abs() < 1e-6, "{c}");
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(
            cosine_similarity(&v(&[1.0]), &v(&[1.0, 2.0])),
            Err(EmbeddingError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            cosine_similarity(&v(&[0.0, 0.0]), &v(&[1.0, 2.0])),
            Err(EmbeddingError::ZeroNorm)
        ));
        assert!(EmbeddingVector::new(vec![f32::NAN]).is_err());
    }

    #[tokio::test]
    async fn hash_embedder_contract() {
        let e = HashEmbedder::default();
        let a = e.embed("Sparse retrieval for scholarly QA").await.unwrap();
        let b = e.embed("Sparse retrieval for scholarly QA").await.unwrap();
        assert_eq!(a.dim(), 384);
        assert_eq!(a.values(), b.values());
        assert!((a.norm() - 1.0).abs() < 1e-6);
        let p = e.embed("?!").await.unwrap();
        assert!((p.norm() - 1.0).abs() < 1e-6);
    }

    #[tokio::test]
    async fn batch_matches_singles_and_reports_index() {
        let e = HashEmbedder::new(64);
        let texts: Vec<String> = ["alpha beta", "gamma", "delta epsilon zeta"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let batch = e.embed_batch(&texts).await.unwrap();
        for (t, vec) in texts.iter().zip(&batch) {
            assert_eq!(&e.embed(t).await.unwrap(), vec);
        }
        assert!(e.embed_batch(&[]).await.unwrap().is_empty());
        let bad = vec!["ok".to_string(), "  ".to_string()];
        assert!(matches!(
            e.embed_batch(&bad).await,
            Err(EmbeddingError::EmptyText { index: 1 })
        ));
    }

    #[tokio::test]
    async fn related_texts_score_higher() {
        let e = HashEmbedder::default();
        let q = e.embed("transformer attention long context").await.unwrap();
        let near = e
            .embed("attention in transformer models with long context windows")
            .await
            .unwrap();
        let far = e
            .embed("protein folding with molecular dynamics")
            .await
            .unwrap();
        assert!(cosine_similarity(&q, &near).unwrap() > cosine_similarity(&q, &far).unwrap());
    }

    #[test]
    fn registry_rejects_duplicates() {
        let mut r = EmbedderRegistry::default();
        r.register(Arc::new(HashEmbedder::new(8))).unwrap();
        assert!(matches!(
            r.register(Arc::new(HashEmbedder::new(8))),
            Err(EmbeddingError::DuplicateProvider(_))
        ));
        r.register(Arc::new(HashEmbedder::new(16))).unwrap();
        assert_eq!(r.ids(), vec!["hash-16", "hash-8"]);
    }

    proptest! {
        #[test]
        fn cosine_symmetric_and_scale_invariant(
            a in prop::collection::vec(-10f32..10.0, 4),
            b in prop::collection::vec(-10f32..10.0, 4),
            c in 0.01f32..100.0,
        ) {
            let (va, vb) = (v(&a), v(&b));
            prop_assume!(va.norm() > 1e-3 && vb.norm() > 1e-3);
            let ab = cosine_similarity(&va, &vb).unwrap();
            prop_assert_eq!(ab, cosine_similarity(&vb, &va).unwrap());
            prop_assert!((-1.0..=1.0).contains(&ab));
            let scaled = v(&a.iter().map(|x| x * c).collect::<Vec<_>>());
            prop_assert!((cosine_similarity(&va, &scaled).unwrap() - 1.0).abs() < 1e-6);
        }

        #[test]
        fn registry_providers_honor_contract(dims in prop::collection::btree_set(1usize..512, 1..5), text in "[a-z]{1,8}( [a-z]{1,8}){0,6}") {
            let mut r = EmbedderRegistry::default();
            for d in &dims {
                r.register(Arc::new(HashEmbedder::new(*d))).unwrap();
            }
            let rt = tokio::runtime::Builder::new_current_thread().build().unwrap();
            for id in r.ids() {
                let p = r.get(&id).unwrap();
                let out = rt.block_on(p.embed(&text)).unwrap();
                prop_assert_eq!(out.dim(), p.info().dim);
                prop_assert!(out.values().iter().all(|x| x.is_finite()));
                if p.info().normalized {
                    prop_assert!((out.norm() - 1.0).abs() < 1e-6);
                }
            }
        }
    }
}
