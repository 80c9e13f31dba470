use serde::{Deserialize, Serialize};

use super::{retry_with_backoff, Completion, LlmError, LlmGateway, LlmRequest, Usage};

/// How multiple samples are obtained from a provider.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// One request with `n`; any shortfall is topped up sequentially.
    #[default]
    Native,
    /// `n` independent single-sample requests.
    Sequential,
}

/// OpenAI-compatible chat-completions client.
pub struct OpenAiGateway {
    url: String,
    api_key: Option<String>,
    sampling: SamplingMode,
    client: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct ChatResponse {
    #[serde(default)]
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<ApiUsage>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct ApiUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl OpenAiGateway {
    pub fn new(endpoint: &str, api_key: Option<String>, sampling: SamplingMode) -> Result<Self, LlmError> {
        let url = if endpoint.ends_with("/chat/completions") {
            endpoint.to_string()
        } else {
            format!("{}/chat/completions", endpoint.trim_end_matches('/'))
        };
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| LlmError::Fatal(e.to_string()))?;
        Ok(Self {
            url,
            api_key,
            sampling,
            client,
        })
    }

    /// Configure from `T2S_LLM_ENDPOINT` and `T2S_LLM_KEY`.
    pub fn from_env(sampling: SamplingMode) -> Option<Result<Self, LlmError>> {
        let endpoint = std::env::var("T2S_LLM_ENDPOINT").ok()?;
        let key = std::env::var("T2S_LLM_KEY").ok();
        Some(Self::new(&endpoint, key, sampling))
    }

    fn call(&self, request: &LlmRequest<'_>, n: usize) -> Result<(Vec<String>, Usage), LlmError> {
        let cfg = request.config;
        let body = serde_json::json!({
            "model": cfg.model_name,
            "messages": [{ "role": "user", "content": request.prompt }],
            "temperature": cfg.temperature,
            "max_tokens": cfg.max_tokens,
            "n": n,
        });
        let mut req = self.client.post(&self.url).timeout(cfg.timeout).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| LlmError::Transient(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            let msg = format!("HTTP {status}: {}", text.chars().take(500).collect::<String>());
            return Err(if status.is_server_error() || status.as_u16() == 429 {
                LlmError::Transient(msg)
            } else {
                LlmError::Fatal(msg)
            });
        }
        let parsed: ChatResponse = resp
            .json()
            .map_err(|e| LlmError::Transient(format!("malformed response: {e}")))?;
        let usage = parsed
            .usage
            .map(|u| Usage {
                prompt_tokens: u.prompt_tokens,
                completion_tokens: u.completion_tokens,
            })
            .unwrap_or_default();
        let texts = parsed
            .choices
            .into_iter()
            .map(|c| c.message.content.unwrap_or_default())
            .collect();
        Ok((texts, usage))
    }
}

impl LlmGateway for OpenAiGateway {
    fn complete(&self, request: &LlmRequest<'_>) -> Result<Completion, LlmError> {
        if request.prompt.trim().is_empty() {
            return Err(LlmError::EmptyPrompt);
        }
        let cfg = request.config;
        let n = cfg.n_samples.max(1);
        let mut texts = Vec::with_capacity(n);
        let mut usage = Usage::default();
        let once = |k: usize| retry_with_backoff(cfg.max_retries, cfg.backoff, || self.call(request, k));
        if self.sampling == SamplingMode::Native {
            let (t, u) = once(n)?;
            texts.extend(t.into_iter().take(n));
            usage.prompt_tokens += u.prompt_tokens;
            usage.completion_tokens += u.completion_tokens;
        }
        while texts.len() < n {
            let (t, u) = once(1)?;
            if t.is_empty() {
                return Err(LlmError::Exhausted {
                    attempts: 1,
                    diagnostics: "provider returned no choices".into(),
                });
            }
            texts.extend(t.into_iter().take(n - texts.len()));
            usage.prompt_tokens += u.prompt_tokens;
            usage.completion_tokens += u.completion_tokens;
        }
        Ok(Completion { texts, usage })
    }
}
