//! Text embedding providers and cosine similarity.
//!
//! Two providers ship with the crate: [`HashingEmbedder`], a deterministic
//! offline bag-of-words hasher used by default and in every test, and
//! [`HttpEmbedder`], which talks to an OpenAI-style `/embeddings` endpoint.
//! [`CachedEmbedder`] wraps either with a shared in-memory cache so refine
//! passes do not re-embed unchanged bullets.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::retry::{self, RetryPolicy};

/// Dimension of the hashing embedder.
pub const HASHING_DIM: usize = 256;

/// Seed mixed into every token hash of the hashing embedder.
pub const HASHING_SEED: u64 = 0x00ac_e5ee_d000_0001;

#[derive(Debug, thiserror::Error)]
pub enum EmbeddingError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("non-finite embedding value")]
    NonFinite,
    #[error("embedding provider error: {0}")]
    Provider(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbeddingError> {
        if values.is_empty() {
            return Err(EmbeddingError::DimensionMismatch(0, 0));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite);
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Cosine similarity in `[-1, 1]`.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbeddingError> {
    if a.dim() != b.dim() {
        return Err(EmbeddingError::DimensionMismatch(a.dim(), b.dim()));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(EmbeddingError::ZeroVector);
    }
    // Summation is symmetric in (a, b) term by term, so the result is too.
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

pub trait Embedder: Send + Sync {
    /// Stable provider identity, used as part of cache keys.
    fn id(&self) -> &str;

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError>;

    fn embed_many(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

/// Feature-hashing bag of words: lowercase alphanumeric tokens, FNV-1a
/// hashed with [`HASHING_SEED`] into [`HASHING_DIM`] buckets, counts
/// L2-normalized.
#[derive(Debug, Clone, Default)]
pub struct HashingEmbedder;

impl HashingEmbedder {
    pub fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
        text.split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(str::to_lowercase)
    }

    pub fn bucket(token: &str) -> usize {
        (fnv1a_seeded(token.as_bytes(), HASHING_SEED) % HASHING_DIM as u64) as usize
    }
}

fn fnv1a_seeded(bytes: &[u8], seed: u64) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for b in seed.to_le_bytes().iter().chain(bytes) {
        h ^= *b as u64;
        h = h.wrapping_mul(PRIME);
    }
    h
}

impl Embedder for HashingEmbedder {
    fn id(&self) -> &str {
        "hashing-256"
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        if text.trim().is_empty() {
            return Err(EmbeddingError::EmptyText);
        }
        let mut counts = vec![0.0f64; HASHING_DIM];
        for tok in Self::tokens(text) {
            counts[Self::bucket(&tok)] += 1.0;
        }
        let norm = counts.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            // Text made only of punctuation: no tokens to hash.
            return Err(EmbeddingError::Provider(format!(
                "text {text:?} has no alphanumeric tokens"
            )));
        }
        counts.iter_mut().for_each(|v| *v /= norm);
        EmbeddingVector::new(counts)
    }
}

/// Shared `(provider, text) -> vector` cache. Values are deterministic per
/// key, so concurrent writers racing on one key are harmless.
#[derive(Debug, Default)]
pub struct EmbeddingCache {
    map: RwLock<HashMap<(String, String), Arc<EmbeddingVector>>>,
}

impl EmbeddingCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, provider: &str, text: &str) -> Option<Arc<EmbeddingVector>> {
        self.map
            .read()
            .expect("embedding cache poisoned")
            .get(&(provider.to_string(), text.to_string()))
            .cloned()
    }

    pub fn put(&self, provider: &str, text: &str, v: Arc<EmbeddingVector>) {
        self.map
            .write()
            .expect("embedding cache poisoned")
            .insert((provider.to_string(), text.to_string()), v);
    }

    pub fn len(&self) -> usize {
        self.map.read().expect("embedding cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub struct CachedEmbedder<E> {
    inner: E,
    cache: Arc<EmbeddingCache>,
}

impl<E: Embedder> CachedEmbedder<E> {
    pub fn new(inner: E) -> Self {
        Self::with_cache(inner, Arc::new(EmbeddingCache::new()))
    }

    pub fn with_cache(inner: E, cache: Arc<EmbeddingCache>) -> Self {
        Self { inner, cache }
    }

    pub fn cache(&self) -> &Arc<EmbeddingCache> {
        &self.cache
    }
}

impl<E: Embedder> Embedder for CachedEmbedder<E> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        if let Some(v) = self.cache.get(self.inner.id(), text) {
            return Ok((*v).clone());
        }
        let v = self.inner.embed(text)?;
        self.cache.put(self.inner.id(), text, Arc::new(v.clone()));
        Ok(v)
    }

    fn embed_many(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        let mut out: Vec<Option<EmbeddingVector>> = texts
            .iter()
            .map(|t| self.cache.get(self.inner.id(), t).map(|v| (*v).clone()))
            .collect();
        let missing: Vec<&str> = texts
            .iter()
            .zip(&out)
            .filter(|(_, v)| v.is_none())
            .map(|(t, _)| *t)
            .collect();
        if !missing.is_empty() {
            let fresh = self.inner.embed_many(&missing)?;
            let mut fresh = fresh.into_iter();
            for (t, slot) in texts.iter().zip(out.iter_mut()) {
                if slot.is_none() {
                    let v = fresh.next().ok_or_else(|| {
                        EmbeddingError::Provider("provider returned too few vectors".into())
                    })?;
                    self.cache.put(self.inner.id(), t, Arc::new(v.clone()));
                    *slot = Some(v);
                }
            }
        }
        Ok(out.into_iter().map(|v| v.expect("filled above")).collect())
    }
}

#[derive(Debug, Clone)]
pub struct HttpEmbedderConfig {
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub retry: RetryPolicy,
}

/// Client for an OpenAI-compatible `POST {base}/embeddings` endpoint.
pub struct HttpEmbedder {
    cfg: HttpEmbedderConfig,
    id: String,
    client: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct EmbeddingsRequest<'a> {
    model: &'a str,
    input: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbeddingsResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
    #[serde(default)]
    index: Option<usize>,
}

impl HttpEmbedder {
    pub fn new(cfg: HttpEmbedderConfig) -> Result<Self, EmbeddingError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(cfg.timeout)
            .build()
            .map_err(|e| EmbeddingError::Provider(e.to_string()))?;
        let id = format!("http:{}:{}", cfg.base_url, cfg.model);
        Ok(Self { cfg, id, client })
    }
}

impl Embedder for HttpEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        let mut v = self.embed_many(&[text])?;
        v.pop()
            .ok_or_else(|| EmbeddingError::Provider("empty embeddings response".into()))
    }

    fn embed_many(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        if texts.iter().any(|t| t.trim().is_empty()) {
            return Err(EmbeddingError::EmptyText);
        }
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let url = format!("{}/embeddings", self.cfg.base_url.trim_end_matches('/'));
        let body = EmbeddingsRequest {
            model: &self.cfg.model,
            input: texts,
        };
        let resp: EmbeddingsResponse = retry::post_json(
            &self.client,
            &url,
            self.cfg.api_key.as_deref(),
            &body,
            &self.cfg.retry,
        )
        .map_err(|e| EmbeddingError::Provider(e.to_string()))?;
        if resp.data.len() != texts.len() {
            return Err(EmbeddingError::Provider(format!(
                "expected {} vectors, got {}",
                texts.len(),
                resp.data.len()
            )));
        }
        let mut data = resp.data;
        if data.iter().all(|d| d.index.is_some()) {
            data.sort_by_key(|d| d.index);
        }
        data.into_iter()
            .map(|d| EmbeddingVector::new(d.embedding))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(values: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(values.to_vec()).unwrap()
    }

    #[test]
    fn hashing_is_deterministic() {
        let e = HashingEmbedder;
        assert_eq!(e.embed("x").unwrap(), e.embed("x").unwrap());
    }

    #[test]
    fn single_token_is_one_hot() {
        let e = HashingEmbedder.embed("retry").unwrap();
        assert_eq!(e.dim(), HASHING_DIM);
        assert_eq!(e.values().iter().filter(|&&x| x != 0.0).count(), 1);
        assert!((e.norm() - 1.0).abs() < 1e-6);
        assert_eq!(e.values()[HashingEmbedder::bucket("retry")], 1.0);
    }

    #[test]
    fn disjoint_tokens_are_orthogonal() {
        let (a, b) = ("alpha", "omega");
        assert_ne!(HashingEmbedder::bucket(a), HashingEmbedder::bucket(b));
        let sim = cosine(
            &HashingEmbedder.embed(a).unwrap(),
            &HashingEmbedder.embed(b).unwrap(),
        )
        .unwrap();
        assert_eq!(sim, 0.0);
    }

    #[test]
    fn repetition_does_not_change_direction() {
        let e = HashingEmbedder;
        let sim = cosine(&e.embed("x").unwrap(), &e.embed("x x").unwrap()).unwrap();
        assert!((sim - 1.0).abs() < 1e-12);
    }

    #[test]
    fn case_and_punctuation_are_ignored() {
        let e = HashingEmbedder;
        assert_eq!(e.embed("Check, codes!").unwrap(), e.embed("check codes").unwrap());
    }

    #[test]
    fn empty_text_rejected() {
        assert!(matches!(HashingEmbedder.embed("  "), Err(EmbeddingError::EmptyText)));
    }

    #[test]
    fn cosine_examples() {
        let e1 = v(&[1.0, 0.0]);
        let e2 = v(&[0.0, 1.0]);
        assert!((cosine(&e1, &e1).unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(cosine(&e1, &e2).unwrap(), 0.0);
        let diag = v(&[1.0, 1.0]);
        assert!((cosine(&e1, &diag).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(
            cosine(&v(&[1.0]), &v(&[1.0, 0.0])),
            Err(EmbeddingError::DimensionMismatch(1, 2))
        ));
        assert!(matches!(
            cosine(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])),
            Err(EmbeddingError::ZeroVector)
        ));
        assert!(matches!(
            EmbeddingVector::new(vec![f64::NAN]),
            Err(EmbeddingError::NonFinite)
        ));
    }

    #[test]
    fn cache_hits_after_first_embed() {
        let cached = CachedEmbedder::new(HashingEmbedder);
        let a = cached.embed("one two").unwrap();
        assert_eq!(cached.cache().len(), 1);
        let many = cached.embed_many(&["one two", "three"]).unwrap();
        assert_eq!(many[0], a);
        assert_eq!(cached.cache().len(), 2);
    }

    proptest::proptest! {
        #[test]
        fn cosine_is_symmetric(a in proptest::collection::vec(-10.0f64..10.0, 8),
                               b in proptest::collection::vec(-10.0f64..10.0, 8)) {
            let (a, b) = (v(&a), v(&b));
            if a.norm() > 0.0 && b.norm() > 0.0 {
                proptest::prop_assert_eq!(cosine(&a, &b).unwrap(), cosine(&b, &a).unwrap());
            }
        }
    }
}
