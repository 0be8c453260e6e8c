//! Text embedding providers.
//!
//! Two providers share one contract: every returned vector is L2-normalized
//! and all vectors from one provider have the same dimension.
//!
//! * [`HashEmbedder`] is a signed feature-hashing embedder. It is pure and
//!   bit-exact across processes and platforms, so the whole engine can be
//!   exercised without any model.
//! * [`RemoteEncoder`] speaks the `/encode` sidecar protocol to a service that
//!   wraps a pretrained sentence encoder.

use std::collections::BTreeSet;
use std::sync::OnceLock;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_HASH_DIM: usize = 64;
pub const MIN_HASH_DIM: usize = 8;
/// Largest batch the sidecar accepts in one request.
pub const MAX_REMOTE_BATCH: usize = 64;
pub const REMOTE_TIMEOUT: Duration = Duration::from_secs(5);

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbedError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("embedding collapsed to the zero vector")]
    DegenerateEmbedding,
    #[error("encoder returned dimension {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("remote encoder unavailable: {0}")]
    RemoteUnavailable(String),
    #[error("remote encoder rejected request ({status}): {message}")]
    RemoteRejected { status: u16, message: String },
    #[error("invalid embedder configuration: {0}")]
    InvalidConfig(String),
    #[error("batch element {index}: {source}")]
    Batch {
        index: usize,
        #[source]
        source: Box<EmbedError>,
    },
    #[error("cannot embed an empty batch")]
    EmptyBatch,
}

/// A unit-norm vector in the shared semantic space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
    provider_id: String,
}

impl EmbeddingVector {
    /// L2-normalizes `values`. Fails on an all-zero or non-finite input.
    pub fn normalized(mut values: Vec<f64>, provider_id: impl Into<String>) -> Result<Self, EmbedError> {
        let norm = l2_norm(&values);
        if norm == 0.0 || !norm.is_finite() {
            return Err(EmbedError::DegenerateEmbedding);
        }
        values.iter_mut().for_each(|v| *v /= norm);
        Ok(EmbeddingVector {
            values,
            provider_id: provider_id.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn provider_id(&self) -> &str {
        &self.provider_id
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

impl AsRef<[f64]> for EmbeddingVector {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let denom = l2_norm(a) * l2_norm(b);
    if denom == 0.0 {
        0.0
    } else {
        dot(a, b) / denom
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Lowercased alphanumeric tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Unigrams plus adjacent-word bigrams joined by `_`, as a set.
pub fn hash_features(text: &str) -> BTreeSet<String> {
    let tokens = tokenize(text);
    let mut features: BTreeSet<String> = tokens.iter().cloned().collect();
    for pair in tokens.windows(2) {
        features.insert(format!("{}_{}", pair[0], pair[1]));
    }
    features
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Result<Self, EmbedError> {
        if dim < MIN_HASH_DIM {
            return Err(EmbedError::InvalidConfig(format!(
                "hash dimension must be >= {MIN_HASH_DIM}, got {dim}"
            )));
        }
        Ok(HashEmbedder { dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn provider_id(&self) -> String {
        format!("hash-fnv1a-d{}", self.dim)
    }

    pub fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let mut buckets = vec![0i64; self.dim];
        for feature in hash_features(text) {
            let h = fnv1a64(feature.as_bytes());
            let bucket = (h % self.dim as u64) as usize;
            buckets[bucket] += if h >> 63 == 0 { 1 } else { -1 };
        }
        EmbeddingVector::normalized(
            buckets.into_iter().map(|c| c as f64).collect(),
            self.provider_id(),
        )
    }
}

#[derive(Debug, Serialize)]
struct EncodeRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Debug, Deserialize)]
struct EncodeResponse {
    model: String,
    dim: usize,
    vectors: Vec<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
struct ErrorBody {
    error: String,
}

/// Client for the `/encode` sidecar. The dimension is pinned by the first
/// successful response.
#[derive(Debug)]
pub struct RemoteEncoder {
    url: String,
    agent: ureq::Agent,
    timeout: Duration,
    pinned_dim: OnceLock<usize>,
}

impl RemoteEncoder {
    pub fn new(endpoint: &str) -> Self {
        Self::with_timeout(endpoint, REMOTE_TIMEOUT)
    }

    pub fn with_timeout(endpoint: &str, timeout: Duration) -> Self {
        let base = endpoint.trim_end_matches('/');
        let base = if base.contains("://") {
            base.to_string()
        } else {
            format!("http://{base}")
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        RemoteEncoder {
            url: format!("{base}/encode"),
            agent,
            timeout,
            pinned_dim: OnceLock::new(),
        }
    }

    pub fn dim(&self) -> Option<usize> {
        self.pinned_dim.get().copied()
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    fn post_once(&self, texts: &[&str]) -> Result<EncodeResponse, EmbedError> {
        let mut resp = self
            .agent
            .post(&self.url)
            .send_json(EncodeRequest { texts })
            .map_err(|e| EmbedError::RemoteUnavailable(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let message = resp
                .body_mut()
                .read_json::<ErrorBody>()
                .map(|b| b.error)
                .unwrap_or_else(|_| status.to_string());
            return Err(EmbedError::RemoteRejected {
                status: status.as_u16(),
                message,
            });
        }
        resp.body_mut()
            .read_json::<EncodeResponse>()
            .map_err(|e| EmbedError::RemoteUnavailable(format!("bad response body: {e}")))
    }

    fn post_chunk(&self, texts: &[&str]) -> Result<EncodeResponse, EmbedError> {
        // One retry on transport failure; explicit rejections are final.
        match self.post_once(texts) {
            Err(EmbedError::RemoteUnavailable(first)) => {
                log::warn!("encoder request failed, retrying: {first}");
                self.post_once(texts)
            }
            other => other,
        }
    }

    /// Encodes `texts` in chunks of at most [`MAX_REMOTE_BATCH`].
    pub fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let mut out = Vec::with_capacity(texts.len());
        for (chunk_no, chunk) in texts.chunks(MAX_REMOTE_BATCH).enumerate() {
            let offset = chunk_no * MAX_REMOTE_BATCH;
            let resp = self.post_chunk(chunk)?;
            if resp.vectors.len() != chunk.len() {
                return Err(EmbedError::RemoteUnavailable(format!(
                    "sent {} texts, received {} vectors",
                    chunk.len(),
                    resp.vectors.len()
                )));
            }
            let expected = *self.pinned_dim.get_or_init(|| resp.dim);
            if resp.dim != expected {
                return Err(EmbedError::DimensionMismatch {
                    expected,
                    got: resp.dim,
                });
            }
            let provider = format!("remote:{}", resp.model);
            for (i, v) in resp.vectors.into_iter().enumerate() {
                let wrap = |e: EmbedError| EmbedError::Batch {
                    index: offset + i,
                    source: Box::new(e),
                };
                if v.len() != expected {
                    return Err(wrap(EmbedError::DimensionMismatch {
                        expected,
                        got: v.len(),
                    }));
                }
                out.push(EmbeddingVector::normalized(v, provider.clone()).map_err(wrap)?);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    #[default]
    Hash,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderConfig {
    pub kind: EmbedderKind,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
}

fn default_dim() -> usize {
    DEFAULT_HASH_DIM
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig::hash(DEFAULT_HASH_DIM)
    }
}

impl EmbedderConfig {
    pub fn hash(dim: usize) -> Self {
        EmbedderConfig {
            kind: EmbedderKind::Hash,
            dim,
            endpoint: None,
        }
    }

    pub fn remote(endpoint: impl Into<String>) -> Self {
        EmbedderConfig {
            kind: EmbedderKind::Remote,
            dim: DEFAULT_HASH_DIM,
            endpoint: Some(endpoint.into()),
        }
    }
}

#[derive(Debug)]
pub enum Embedder {
    Hash(HashEmbedder),
    Remote(RemoteEncoder),
}

impl Embedder {
    pub fn from_config(cfg: &EmbedderConfig) -> Result<Self, EmbedError> {
        match cfg.kind {
            EmbedderKind::Hash => HashEmbedder::new(cfg.dim).map(Embedder::Hash),
            EmbedderKind::Remote => {
                let endpoint = cfg.endpoint.as_deref().ok_or_else(|| {
                    EmbedError::InvalidConfig("remote embedder needs an endpoint".into())
                })?;
                Ok(Embedder::Remote(RemoteEncoder::new(endpoint)))
            }
        }
    }

    /// Known dimension; `None` for a remote encoder that has not answered yet.
    pub fn dim(&self) -> Option<usize> {
        match self {
            Embedder::Hash(h) => Some(h.dim()),
            Embedder::Remote(r) => r.dim(),
        }
    }

    pub fn embed_text(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        match self {
            Embedder::Hash(h) => h.embed(text),
            Embedder::Remote(r) => {
                if text.trim().is_empty() {
                    return Err(EmbedError::EmptyText);
                }
                let mut v = r.embed_batch(&[text]).map_err(unwrap_batch)?;
                Ok(v.remove(0))
            }
        }
    }

    pub fn embed_batch<S: AsRef<str>>(&self, texts: &[S]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        if texts.is_empty() {
            return Err(EmbedError::EmptyBatch);
        }
        let texts: Vec<&str> = texts.iter().map(AsRef::as_ref).collect();
        if let Some(index) = texts.iter().position(|t| t.trim().is_empty()) {
            return Err(EmbedError::Batch {
                index,
                source: Box::new(EmbedError::EmptyText),
            });
        }
        match self {
            Embedder::Hash(h) => texts
                .iter()
                .enumerate()
                .map(|(index, t)| {
                    h.embed(t).map_err(|e| EmbedError::Batch {
                        index,
                        source: Box::new(e),
                    })
                })
                .collect(),
            Embedder::Remote(r) => r.embed_batch(&texts),
        }
    }
}

fn unwrap_batch(e: EmbedError) -> EmbedError {
    match e {
        EmbedError::Batch { source, .. } => *source,
        other => other,
    }
}
