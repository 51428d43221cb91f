//! Multilingual sentence embeddings for answer strings.
//!
//! Vectors come from a pluggable [`EmbeddingProvider`] and are memoized in a
//! content-addressed [`EmbeddingCache`], so scoring can be replayed offline.
//!
//! The HTTP provider speaks a minimal protocol that any encoder can be
//! wrapped in:
//!
//! ```text
//! POST <endpoint>   {"texts": ["...", ...]}
//! 200               {"vectors": [[f32, ...], ...]}
//! ```
//!
//! A bearer token is sent when [`EMBED_TOKEN_ENV`] is set.

mod cache;

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use async_trait::async_trait;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tokio::sync::watch;

pub use cache::{cache_key, CacheError, CacheKey, EmbeddingCache, EmbeddingVector};

use crate::retry::RetryPolicy;
use crate::textmetrics::nfc;

/// Environment variable holding the bearer token for the HTTP provider.
pub const EMBED_TOKEN_ENV: &str = "XLINGUAL_EMBED_TOKEN";

#[derive(Debug, thiserror::Error)]
pub enum EmbeddingError {
    #[error("embedding provider unreachable after {attempts} attempt(s): {message}")]
    Unreachable { attempts: u32, message: String },
    #[error("embedding provider rejected credentials (HTTP {status})")]
    Auth { status: u16 },
    #[error("embedding provider returned HTTP {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("provider returned {got} dimensions, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("provider returned {got} vectors for {expected} texts")]
    CountMismatch { expected: usize, got: usize },
    #[error("{count} text(s) missing from cache in cache-only mode (first key {key})")]
    CacheMiss { key: String, count: usize },
    #[error("in-flight fetch for {key} failed: {message}")]
    InFlight { key: String, message: String },
    #[error("invalid provider config: {0}")]
    Config(String),
    #[error(transparent)]
    Cache(#[from] CacheError),
}

#[async_trait]
pub trait EmbeddingProvider: Send + Sync {
    /// Human-readable identity recorded in reports (endpoint or mock seed).
    fn describe(&self) -> String;

    /// Embeds `texts` in order. Implementations handle their own retries.
    async fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbeddingError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    Http,
    CacheOnly,
    #[default]
    Mock,
}

impl std::str::FromStr for ProviderKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "http" => Ok(Self::Http),
            "cache-only" => Ok(Self::CacheOnly),
            "mock" => Ok(Self::Mock),
            other => Err(format!("unknown provider kind {other:?} (http, cache-only, mock)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingProviderConfig {
    pub kind: ProviderKind,
    pub endpoint: Option<String>,
    pub expected_dims: usize,
    pub batch_size: usize,
    pub retry: RetryPolicy,
    pub timeout_secs: u64,
    /// Seed for the mock provider.
    pub mock_seed: u64,
    /// Groups of texts the mock provider maps to one shared vector.
    pub mock_synonyms: Vec<Vec<String>>,
}

impl Default for EmbeddingProviderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Mock,
            endpoint: None,
            expected_dims: 768,
            batch_size: 32,
            retry: RetryPolicy::default(),
            timeout_secs: 60,
            mock_seed: 0,
            mock_synonyms: Vec::new(),
        }
    }
}

impl EmbeddingProviderConfig {
    pub fn validate(&self) -> Result<(), EmbeddingError> {
        if self.expected_dims < 1 {
            return Err(EmbeddingError::Config("expected_dims must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(EmbeddingError::Config("batch_size must be >= 1".into()));
        }
        if self.kind == ProviderKind::Http && self.endpoint.is_none() {
            return Err(EmbeddingError::Config("http provider needs an endpoint".into()));
        }
        Ok(())
    }

    /// String recorded in report provenance for this provider.
    pub fn describe(&self) -> String {
        match self.kind {
            ProviderKind::Http => format!("http:{}", self.endpoint.as_deref().unwrap_or("")),
            ProviderKind::CacheOnly => "cache-only".to_owned(),
            ProviderKind::Mock => {
                format!("mock:seed={},dims={}", self.mock_seed, self.expected_dims)
            }
        }
    }
}

/// Deterministic provider for tests: every distinct text gets a seeded
/// pseudo-random unit vector. Synonym groups share a vector, and explicit
/// vectors can be pinned per text.
#[derive(Debug, Default)]
pub struct MockProvider {
    dims: usize,
    seed: u64,
    canonical: HashMap<String, String>,
    pinned: HashMap<String, Vec<f32>>,
    calls: AtomicUsize,
    texts_embedded: AtomicUsize,
}

impl MockProvider {
    pub fn new(dims: usize, seed: u64) -> Self {
        Self {
            dims,
            seed,
            ..Self::default()
        }
    }

    /// Makes every text in `group` embed to the vector of the first one.
    pub fn with_synonyms<I, S>(mut self, group: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut group = group.into_iter().map(|s| nfc(s.as_ref()));
        if let Some(head) = group.next() {
            for other in group {
                self.canonical.insert(other, head.clone());
            }
        }
        self
    }

    pub fn with_vector(mut self, text: &str, vector: Vec<f32>) -> Self {
        self.pinned.insert(nfc(text), vector);
        self
    }

    /// Number of `embed` calls served.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn texts_embedded(&self) -> usize {
        self.texts_embedded.load(Ordering::SeqCst)
    }

    pub fn vector_for(&self, text: &str) -> Vec<f32> {
        let text = nfc(text);
        let text = self.canonical.get(&text).unwrap_or(&text);
        if let Some(v) = self.pinned.get(text) {
            return v.clone();
        }
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(text.as_bytes());
        let mut rng = ChaCha8Rng::from_seed(hasher.finalize().into());
        let raw: Vec<f64> = (0..self.dims).map(|_| rng.sample(StandardNormal)).collect();
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        raw.iter().map(|x| (x / norm) as f32).collect()
    }
}

#[async_trait]
impl EmbeddingProvider for MockProvider {
    fn describe(&self) -> String {
        format!("mock:seed={},dims={}", self.seed, self.dims)
    }

    async fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbeddingError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.texts_embedded.fetch_add(texts.len(), Ordering::SeqCst);
        Ok(texts.iter().map(|t| self.vector_for(t)).collect())
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f32>>,
}

/// Provider that POSTs batches to an encoder sidecar.
#[derive(Debug)]
pub struct HttpProvider {
    client: reqwest::Client,
    endpoint: String,
    token: Option<String>,
    retry: RetryPolicy,
}

impl HttpProvider {
    pub fn new(
        endpoint: impl Into<String>,
        token: Option<String>,
        retry: RetryPolicy,
        timeout: Duration,
    ) -> Result<Self, EmbeddingError> {
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| EmbeddingError::Config(e.to_string()))?;
        Ok(Self {
            client,
            endpoint: endpoint.into(),
            token,
            retry,
        })
    }

    async fn attempt(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, (bool, EmbeddingError)> {
        let mut req = self.client.post(&self.endpoint).json(&EmbedRequest { texts });
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let transient = |message: String| {
            (
                true,
                EmbeddingError::Unreachable {
                    attempts: 0,
                    message,
                },
            )
        };
        let resp = req.send().await.map_err(|e| transient(e.to_string()))?;
        let status = resp.status();
        if status == reqwest::StatusCode::UNAUTHORIZED || status == reqwest::StatusCode::FORBIDDEN {
            return Err((false, EmbeddingError::Auth { status: status.as_u16() }));
        }
        if status == reqwest::StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
            return Err(transient(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let body = resp.text().await.unwrap_or_default();
            return Err((
                false,
                EmbeddingError::Rejected {
                    status: status.as_u16(),
                    body,
                },
            ));
        }
        let parsed: EmbedResponse = resp
            .json()
            .await
            .map_err(|e| transient(format!("malformed response: {e}")))?;
        Ok(parsed.vectors)
    }
}

#[async_trait]
impl EmbeddingProvider for HttpProvider {
    fn describe(&self) -> String {
        format!("http:{}", self.endpoint)
    }

    async fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbeddingError> {
        let attempts = self.retry.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 1..=attempts {
            match self.attempt(texts).await {
                Ok(v) => return Ok(v),
                Err((false, e)) => return Err(e),
                Err((true, e)) => {
                    last = match e {
                        EmbeddingError::Unreachable { message, .. } => message,
                        other => other.to_string(),
                    };
                    log::debug!("embedding attempt {attempt}/{attempts} failed: {last}");
                    if attempt < attempts {
                        let delay = self.retry.backoff(attempt, &mut rand::rng());
                        tokio::time::sleep(delay).await;
                    }
                }
            }
        }
        Err(EmbeddingError::Unreachable {
            attempts,
            message: last,
        })
    }
}

type InFlightResult = Option<Result<Arc<EmbeddingVector>, String>>;

/// Removes owned in-flight entries on every exit path. Waiters on an entry
/// whose sender was dropped without a value see a closed channel.
struct InFlightGuard<'a> {
    map: &'a Mutex<HashMap<CacheKey, watch::Receiver<InFlightResult>>>,
    keys: Vec<CacheKey>,
}

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        let mut map = self.map.lock().unwrap();
        for key in &self.keys {
            map.remove(key);
        }
    }
}

/// Cache-fronted embedding client. `embed_batch` may be called
/// concurrently; a text that is already being fetched is awaited rather
/// than fetched again.
pub struct Embedder {
    provider: Option<Arc<dyn EmbeddingProvider>>,
    cache: Arc<EmbeddingCache>,
    expected_dims: usize,
    batch_size: usize,
    description: String,
    in_flight: Mutex<HashMap<CacheKey, watch::Receiver<InFlightResult>>>,
}

impl std::fmt::Debug for Embedder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Embedder")
            .field("provider", &self.description)
            .field("expected_dims", &self.expected_dims)
            .finish()
    }
}

impl Embedder {
    pub fn new(
        provider: Arc<dyn EmbeddingProvider>,
        cache: Arc<EmbeddingCache>,
        expected_dims: usize,
        batch_size: usize,
    ) -> Self {
        Self {
            description: provider.describe(),
            provider: Some(provider),
            cache,
            expected_dims,
            batch_size: batch_size.max(1),
            in_flight: Mutex::new(HashMap::new()),
        }
    }

    /// Serves only what is already cached; any miss is an error.
    pub fn cache_only(cache: Arc<EmbeddingCache>, expected_dims: usize) -> Self {
        Self {
            provider: None,
            cache,
            expected_dims,
            batch_size: 1,
            description: "cache-only".to_owned(),
            in_flight: Mutex::new(HashMap::new()),
        }
    }

    pub fn from_config(
        cfg: &EmbeddingProviderConfig,
        cache: Arc<EmbeddingCache>,
    ) -> Result<Self, EmbeddingError> {
        cfg.validate()?;
        let mut embedder = match cfg.kind {
            ProviderKind::CacheOnly => Self::cache_only(cache, cfg.expected_dims),
            ProviderKind::Mock => {
                let mut mock = MockProvider::new(cfg.expected_dims, cfg.mock_seed);
                for group in &cfg.mock_synonyms {
                    mock = mock.with_synonyms(group);
                }
                Self::new(Arc::new(mock), cache, cfg.expected_dims, cfg.batch_size)
            }
            ProviderKind::Http => {
                let endpoint = cfg.endpoint.clone().unwrap_or_default();
                let token = std::env::var(EMBED_TOKEN_ENV).ok().filter(|t| !t.is_empty());
                let http = HttpProvider::new(
                    endpoint,
                    token,
                    cfg.retry,
                    Duration::from_secs(cfg.timeout_secs.max(1)),
                )?;
                Self::new(Arc::new(http), cache, cfg.expected_dims, cfg.batch_size)
            }
        };
        embedder.description = cfg.describe();
        Ok(embedder)
    }

    pub fn describe(&self) -> &str {
        &self.description
    }

    pub fn expected_dims(&self) -> usize {
        self.expected_dims
    }

    pub fn cache(&self) -> &Arc<EmbeddingCache> {
        &self.cache
    }

    fn check(&self, values: Vec<f32>) -> Result<EmbeddingVector, EmbeddingError> {
        if values.len() != self.expected_dims {
            return Err(EmbeddingError::DimensionMismatch {
                expected: self.expected_dims,
                got: values.len(),
            });
        }
        Ok(EmbeddingVector::new(values)?)
    }

    /// One vector per input text, in order. Cache hits are never
    /// re-fetched; fetched vectors are checked and persisted before return.
    pub async fn embed_batch(&self, texts: &[String]) -> Result<Vec<Arc<EmbeddingVector>>, EmbeddingError> {
        let texts: Vec<String> = texts.iter().map(|t| nfc(t)).collect();
        let keys: Vec<CacheKey> = texts.iter().map(|t| cache_key(t)).collect();
        let mut found: HashMap<CacheKey, Arc<EmbeddingVector>> = HashMap::new();

        let mut missing: Vec<(CacheKey, &str)> = Vec::new();
        for (key, text) in keys.iter().zip(&texts) {
            if found.contains_key(key) || missing.iter().any(|(k, _)| k == key) {
                continue;
            }
            match self.cache.get(key)? {
                Some(v) => {
                    found.insert(*key, v);
                }
                None => missing.push((*key, text)),
            }
        }

        let mut owned: Vec<(CacheKey, &str, watch::Sender<InFlightResult>)> = Vec::new();
        let mut waiting: Vec<(CacheKey, watch::Receiver<InFlightResult>)> = Vec::new();
        {
            let mut map = self.in_flight.lock().unwrap();
            for (key, text) in missing {
                // another caller may have finished it since the cache check
                if let Some(v) = self.cache.get(&key)? {
                    found.insert(key, v);
                } else if let Some(rx) = map.get(&key) {
                    waiting.push((key, rx.clone()));
                } else {
                    let (tx, rx) = watch::channel(None);
                    map.insert(key, rx);
                    owned.push((key, text, tx));
                }
            }
        }
        let _guard = InFlightGuard {
            map: &self.in_flight,
            keys: owned.iter().map(|(k, _, _)| *k).collect(),
        };

        if !owned.is_empty() {
            let Some(provider) = &self.provider else {
                return Err(EmbeddingError::CacheMiss {
                    key: owned[0].0.to_hex(),
                    count: owned.len(),
                });
            };
            for (ci, chunk) in owned.chunks(self.batch_size).enumerate() {
                let batch: Vec<String> = chunk.iter().map(|(_, t, _)| (*t).to_owned()).collect();
                let result = provider.embed(&batch).await.and_then(|vectors| {
                    if vectors.len() != batch.len() {
                        return Err(EmbeddingError::CountMismatch {
                            expected: batch.len(),
                            got: vectors.len(),
                        });
                    }
                    vectors.into_iter().map(|v| self.check(v)).collect::<Result<Vec<_>, _>>()
                });
                let vectors = match result {
                    Ok(v) => v,
                    Err(e) => {
                        let message = e.to_string();
                        for (_, _, tx) in &owned[ci * self.batch_size..] {
                            tx.send_replace(Some(Err(message.clone())));
                        }
                        return Err(e);
                    }
                };
                for ((key, _, tx), vector) in chunk.iter().zip(vectors) {
                    let stored = self.cache.insert(*key, vector)?;
                    tx.send_replace(Some(Ok(Arc::clone(&stored))));
                    found.insert(*key, stored);
                }
            }
        }

        for (key, mut rx) in waiting {
            let outcome = rx.wait_for(Option::is_some).await.map(|v| v.clone());
            match outcome {
                Ok(Some(Ok(v))) => {
                    found.insert(key, v);
                }
                Ok(Some(Err(message))) => {
                    return Err(EmbeddingError::InFlight {
                        key: key.to_hex(),
                        message,
                    })
                }
                Ok(None) | Err(_) => match self.cache.get(&key)? {
                    Some(v) => {
                        found.insert(key, v);
                    }
                    None => {
                        return Err(EmbeddingError::InFlight {
                            key: key.to_hex(),
                            message: "fetch abandoned".into(),
                        })
                    }
                },
            }
        }

        Ok(keys.iter().map(|k| Arc::clone(&found[k])).collect())
    }

    /// Embeds every distinct text and returns a lookup keyed by NFC text.
    pub async fn embed_all<'a, I>(&self, texts: I) -> Result<EmbeddingTable, EmbeddingError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut unique: Vec<String> = texts.into_iter().map(nfc).collect();
        unique.sort();
        unique.dedup();
        let mut table = EmbeddingTable::default();
        for chunk in unique.chunks(self.batch_size.max(1) * 8) {
            let vectors = self.embed_batch(chunk).await?;
            for (text, v) in chunk.iter().zip(vectors) {
                table.vectors.insert(text.clone(), v);
            }
        }
        Ok(table)
    }
}

/// Text → vector lookup used by the scoring code.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingTable {
    vectors: HashMap<String, Arc<EmbeddingVector>>,
}

impl EmbeddingTable {
    pub fn insert(&mut self, text: &str, vector: Arc<EmbeddingVector>) {
        self.vectors.insert(nfc(text), vector);
    }

    pub fn get(&self, text: &str) -> Option<&EmbeddingVector> {
        match self.vectors.get(text) {
            Some(v) => Some(v),
            None => self.vectors.get(&nfc(text)).map(Arc::as_ref),
        }
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}
