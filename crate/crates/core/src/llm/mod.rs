//! Chat-completion gateway shared by every agent stage.

mod live;
mod scripted;

use std::fmt;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use live::{OpenAiGateway, SamplingMode};
pub use scripted::{RecordingGateway, ScriptedGateway, TranscriptRecord, CONTAINS_PREFIX, WILDCARD_KEY};

/// Which agent is calling. Scripted transcripts can key replies on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    FewshotAugment,
    Entity,
    Extraction,
    InfoAlign,
    Generation,
    Correction,
    AlignAssist,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::FewshotAugment => "fewshot_augment",
            Stage::Entity => "entity",
            Stage::Extraction => "extraction",
            Stage::InfoAlign => "info_align",
            Stage::Generation => "generation",
            Stage::Correction => "correction",
            Stage::AlignAssist => "align_assist",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub(crate) mod duration_secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        if !(secs.is_finite() && secs >= 0.0) {
            return Err(serde::de::Error::custom("duration must be a non-negative number"));
        }
        Ok(Duration::from_secs_f64(secs))
    }
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    pub model_name: String,
    pub temperature: f64,
    pub n_samples: usize,
    pub max_tokens: usize,
    #[serde(with = "duration_secs")]
    pub timeout: Duration,
    pub max_retries: u32,
    #[serde(with = "duration_secs")]
    pub backoff: Duration,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            model_name: "gpt-4o-2024-05-13".into(),
            temperature: 0.0,
            n_samples: 1,
            max_tokens: 2048,
            timeout: Duration::from_secs(120),
            max_retries: 3,
            backoff: Duration::from_millis(500),
        }
    }
}

impl LlmConfig {
    pub fn with_temperature(&self, temperature: f64) -> Self {
        Self {
            temperature,
            ..self.clone()
        }
    }

    pub fn with_samples(&self, n_samples: usize) -> Self {
        Self {
            n_samples: n_samples.max(1),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub texts: Vec<String>,
    pub usage: Usage,
}

#[derive(Debug, Clone, Copy)]
pub struct LlmRequest<'a> {
    pub stage: Stage,
    pub prompt: &'a str,
    pub config: &'a LlmConfig,
}

impl<'a> LlmRequest<'a> {
    pub fn new(stage: Stage, prompt: &'a str, config: &'a LlmConfig) -> Self {
        Self {
            stage,
            prompt,
            config,
        }
    }
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum LlmError {
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("no recorded reply for {stage} prompt {key}")]
    MissingTranscript { stage: Stage, key: String },
    #[error("transient provider failure: {0}")]
    Transient(String),
    #[error("provider rejected the request: {0}")]
    Fatal(String),
    #[error("gave up after {attempts} attempts: {diagnostics}")]
    Exhausted { attempts: u32, diagnostics: String },
    #[error("transcript: {0}")]
    Transcript(String),
}

pub trait LlmGateway: Send + Sync {
    fn complete(&self, request: &LlmRequest<'_>) -> Result<Completion, LlmError>;
}

impl<G: LlmGateway + ?Sized> LlmGateway for &G {
    fn complete(&self, request: &LlmRequest<'_>) -> Result<Completion, LlmError> {
        (**self).complete(request)
    }
}

impl<G: LlmGateway + ?Sized> LlmGateway for std::sync::Arc<G> {
    fn complete(&self, request: &LlmRequest<'_>) -> Result<Completion, LlmError> {
        (**self).complete(request)
    }
}

impl<G: LlmGateway + ?Sized> LlmGateway for Box<G> {
    fn complete(&self, request: &LlmRequest<'_>) -> Result<Completion, LlmError> {
        (**self).complete(request)
    }
}

/// Whitespace-collapsed prompt, the basis of transcript keys.
pub fn normalize_prompt(prompt: &str) -> String {
    prompt.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Hex SHA-256 of the normalized prompt.
pub fn prompt_key(prompt: &str) -> String {
    hex::encode(Sha256::digest(normalize_prompt(prompt).as_bytes()))
}

/// Run `op`, retrying transient failures with exponential backoff.
pub fn retry_with_backoff<T>(
    max_retries: u32,
    base: Duration,
    mut op: impl FnMut() -> Result<T, LlmError>,
) -> Result<T, LlmError> {
    let mut attempt = 0u32;
    loop {
        attempt += 1;
        match op() {
            Ok(v) => return Ok(v),
            Err(LlmError::Transient(msg)) => {
                if attempt > max_retries {
                    return Err(LlmError::Exhausted {
                        attempts: attempt,
                        diagnostics: msg,
                    });
                }
                let wait = base.saturating_mul(1u32 << (attempt - 1).min(16));
                tracing::debug!(attempt, ?wait, "retrying transient LLM failure: {msg}");
                std::thread::sleep(wait);
            }
            Err(e) => return Err(e),
        }
    }
}

/// Bounds the number of in-flight requests across all pipelines.
pub struct Limited<G> {
    inner: G,
    capacity: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

impl<G> Limited<G> {
    pub fn new(inner: G, capacity: usize) -> Self {
        Self {
            inner,
            capacity: capacity.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn in_flight(&self) -> usize {
        *self.in_flight.lock().unwrap_or_else(|e| e.into_inner())
    }
}

struct Permit<'a> {
    count: &'a Mutex<usize>,
    freed: &'a Condvar,
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.count.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.freed.notify_one();
    }
}

impl<G: LlmGateway> LlmGateway for Limited<G> {
    fn complete(&self, request: &LlmRequest<'_>) -> Result<Completion, LlmError> {
        let _permit = {
            let mut n = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
            while *n >= self.capacity {
                n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
            }
            *n += 1;
            Permit {
                count: &self.in_flight,
                freed: &self.freed,
            }
        };
        self.inner.complete(request)
    }
}
