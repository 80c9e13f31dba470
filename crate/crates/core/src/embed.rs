//! Text embedding providers.

use std::time::Duration;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, thiserror::Error)]
pub enum EmbedError {
    #[error("cannot embed empty text")]
    EmptyInput,
    #[error("embedding provider failed: {message}")]
    Provider { message: String, retryable: bool },
}

impl EmbedError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, EmbedError::Provider { retryable: true, .. })
    }
}

/// An L2-normalized embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UnitVector(Vec<f32>);

impl UnitVector {
    /// Normalize `raw`; `None` for the zero vector.
    pub fn normalize(raw: Vec<f32>) -> Option<Self> {
        let norm = raw.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return None;
        }
        Some(Self(
            raw.into_iter().map(|x| (f64::from(x) / norm) as f32).collect(),
        ))
    }

    /// Wrap a vector already known to be unit length (e.g. read from disk).
    /// Re-normalizes to absorb serialization rounding.
    pub fn from_stored(raw: Vec<f32>) -> Option<Self> {
        Self::normalize(raw)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    /// Cosine similarity, which for unit vectors is the dot product.
    pub fn cosine(&self, other: &UnitVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| f64::from(*a) * f64::from(*b))
            .sum()
    }

    /// `normalize(self + weight * other)`, used to mix context into a vector.
    pub fn blend(&self, other: &UnitVector, weight: f32) -> UnitVector {
        let raw = self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| a + weight * b)
            .collect();
        UnitVector::normalize(raw).unwrap_or_else(|| self.clone())
    }
}

pub trait Embedder: Send + Sync {
    /// Stable identifier, recorded in persisted indexes.
    fn id(&self) -> String;
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Result<UnitVector, EmbedError>;
}

impl<E: Embedder + ?Sized> Embedder for &E {
    fn id(&self) -> String {
        (**self).id()
    }
    fn dimension(&self) -> usize {
        (**self).dimension()
    }
    fn embed(&self, text: &str) -> Result<UnitVector, EmbedError> {
        (**self).embed(text)
    }
}

impl<E: Embedder + ?Sized> Embedder for std::sync::Arc<E> {
    fn id(&self) -> String {
        (**self).id()
    }
    fn dimension(&self) -> usize {
        (**self).dimension()
    }
    fn embed(&self, text: &str) -> Result<UnitVector, EmbedError> {
        (**self).embed(text)
    }
}

pub const TRIGRAM_DIMENSION: usize = 512;

/// Offline embedder: case-folded character trigrams hashed into a fixed
/// bag, L2-normalized. Deterministic and tolerant of small typos.
#[derive(Debug, Clone, Copy, Default)]
pub struct TrigramEmbedder;

impl TrigramEmbedder {
    pub fn raw_counts(text: &str) -> Vec<f32> {
        let folded = text.to_lowercase();
        let words: Vec<&str> = folded.split_whitespace().collect();
        let padded: Vec<char> = format!(" {} ", words.join(" ")).chars().collect();
        let mut bag = vec![0f32; TRIGRAM_DIMENSION];
        for w in padded.windows(3) {
            let mut buf = [0u8; 12];
            let mut len = 0;
            for c in w {
                len += c.encode_utf8(&mut buf[len..]).len();
            }
            bag[(fnv1a(&buf[..len]) % TRIGRAM_DIMENSION as u64) as usize] += 1.0;
        }
        bag
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl Embedder for TrigramEmbedder {
    fn id(&self) -> String {
        format!("trigram-{TRIGRAM_DIMENSION}")
    }

    fn dimension(&self) -> usize {
        TRIGRAM_DIMENSION
    }

    fn embed(&self, text: &str) -> Result<UnitVector, EmbedError> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyInput);
        }
        UnitVector::normalize(Self::raw_counts(text)).ok_or(EmbedError::EmptyInput)
    }
}

/// Client for an OpenAI-compatible `/embeddings` endpoint.
#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    endpoint: String,
    api_key: Option<String>,
    model: String,
    dimension: usize,
    client: reqwest::blocking::Client,
}

impl HttpEmbedder {
    pub fn new(
        endpoint: impl Into<String>,
        api_key: Option<String>,
        model: impl Into<String>,
        dimension: usize,
        timeout: Duration,
    ) -> Result<Self, EmbedError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| EmbedError::Provider {
                message: e.to_string(),
                retryable: false,
            })?;
        let mut endpoint = endpoint.into();
        if !endpoint.ends_with("/embeddings") {
            endpoint = format!("{}/embeddings", endpoint.trim_end_matches('/'));
        }
        Ok(Self {
            endpoint,
            api_key,
            model: model.into(),
            dimension,
            client,
        })
    }

    /// Configure from `T2S_EMBED_ENDPOINT`, `T2S_EMBED_KEY` (falls back to
    /// `T2S_LLM_KEY`), `T2S_EMBED_MODEL` and `T2S_EMBED_DIM`.
    pub fn from_env() -> Option<Result<Self, EmbedError>> {
        let endpoint = std::env::var("T2S_EMBED_ENDPOINT").ok()?;
        let key = std::env::var("T2S_EMBED_KEY")
            .or_else(|_| std::env::var("T2S_LLM_KEY"))
            .ok();
        let model =
            std::env::var("T2S_EMBED_MODEL").unwrap_or_else(|_| "bge-large-en-v1.5".into());
        let dim = std::env::var("T2S_EMBED_DIM")
            .ok()
            .and_then(|d| d.parse().ok())
            .unwrap_or(1024);
        Some(Self::new(endpoint, key, model, dim, Duration::from_secs(30)))
    }
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f32>,
}

impl Embedder for HttpEmbedder {
    fn id(&self) -> String {
        format!("http:{}", self.model)
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<UnitVector, EmbedError> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyInput);
        }
        let mut req = self
            .client
            .post(&self.endpoint)
            .json(&serde_json::json!({ "model": self.model, "input": text }));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| EmbedError::Provider {
            message: e.to_string(),
            retryable: true,
        })?;
        let status = resp.status();
        if !status.is_success() {
            return Err(EmbedError::Provider {
                message: format!("HTTP {status}"),
                retryable: status.is_server_error() || status.as_u16() == 429,
            });
        }
        let body: EmbeddingResponse = resp.json().map_err(|e| EmbedError::Provider {
            message: e.to_string(),
            retryable: false,
        })?;
        let raw = body
            .data
            .into_iter()
            .next()
            .map(|d| d.embedding)
            .ok_or_else(|| EmbedError::Provider {
                message: "empty embedding response".into(),
                retryable: false,
            })?;
        UnitVector::normalize(raw).ok_or(EmbedError::Provider {
            message: "zero embedding".into(),
            retryable: false,
        })
    }
}
