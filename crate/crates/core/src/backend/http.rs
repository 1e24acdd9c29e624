use std::path::Path;
use std::time::{Duration, Instant};

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{count_tokens_fallback, Backend, BackendError, BackendRequest, BackendResponse, FailureKind};

/// Connection settings for an OpenAI-compatible chat endpoint. The credential
/// itself is never stored here, only the name of the variable holding it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LiveConfig {
    /// Base URL up to and including the API version, e.g. `https://host/v1`.
    pub endpoint: String,
    pub model: String,
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    /// Delay before retry k is `backoff_ms[min(k, len - 1)]`.
    pub backoff_ms: Vec<u64>,
}

impl Default for LiveConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1".into(),
            model: "gpt-4o-mini".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            timeout_secs: 60,
            max_retries: 3,
            backoff_ms: vec![500, 1000, 2000],
        }
    }
}

/// Blocking chat-completion client with bounded retries.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    config: LiveConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

enum Attempt {
    Retry(FailureKind, String),
    Fatal(FailureKind, String),
}

impl HttpBackend {
    /// Reads the credential from the configured environment variable. An unset
    /// or empty variable is an error unless the variable name is empty, which
    /// means the endpoint needs no credential.
    pub fn new(config: LiveConfig) -> Result<Self, BackendError> {
        let api_key = if config.api_key_env.is_empty() {
            None
        } else {
            match std::env::var(&config.api_key_env) {
                Ok(k) if !k.is_empty() => Some(k),
                _ => {
                    return Err(BackendError::Config(format!(
                        "environment variable {} is not set",
                        config.api_key_env
                    )))
                }
            }
        };
        Self::with_key(config, api_key)
    }

    pub(crate) fn with_key(config: LiveConfig, api_key: Option<String>) -> Result<Self, BackendError> {
        if config.backoff_ms.is_empty() && config.max_retries > 0 {
            return Err(BackendError::Config("retries need at least one backoff delay".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Self { config, api_key, client })
    }

    pub fn config(&self) -> &LiveConfig {
        &self.config
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.config.endpoint.trim_end_matches('/'))
    }

    fn body(&self, request: &BackendRequest) -> Result<Value, BackendError> {
        let content = match &request.image_ref {
            None => json!(request.prompt),
            Some(image) => json!([
                {"type": "text", "text": request.prompt},
                {"type": "image_url", "image_url": {"url": image_url(&image.0)?}},
            ]),
        };
        Ok(json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": content}],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }))
    }

    fn attempt(&self, body: &Value) -> Result<(String, Option<(u64, u64)>), Attempt> {
        let mut call = self.client.post(self.url()).json(body);
        if let Some(key) = &self.api_key {
            call = call.bearer_auth(key);
        }
        let resp = call.send().map_err(|e| {
            let kind = if e.is_timeout() { FailureKind::Timeout } else { FailureKind::Transport };
            Attempt::Retry(kind, e.to_string())
        })?;
        let status = resp.status();
        let text = resp.text().map_err(|e| {
            let kind = if e.is_timeout() { FailureKind::Timeout } else { FailureKind::Transport };
            Attempt::Retry(kind, e.to_string())
        })?;
        if status.as_u16() == 429 {
            return Err(Attempt::Retry(FailureKind::Quota, format!("HTTP 429: {}", snippet(&text))));
        }
        if status.is_server_error() {
            return Err(Attempt::Retry(FailureKind::Transport, format!("HTTP {status}: {}", snippet(&text))));
        }
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(Attempt::Fatal(FailureKind::Auth, format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(Attempt::Fatal(FailureKind::BadResponse, format!("HTTP {status}: {}", snippet(&text))));
        }
        parse_completion(&text).map_err(|d| Attempt::Fatal(FailureKind::BadResponse, d))
    }
}

impl Backend for HttpBackend {
    fn complete(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        request.validate()?;
        let body = self.body(request)?;
        let start = Instant::now();
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&body) {
                Ok((text, usage)) => {
                    let latency_ms = start.elapsed().as_millis() as u64;
                    return Ok(match usage {
                        Some((input_tokens, output_tokens)) => BackendResponse {
                            text,
                            input_tokens,
                            output_tokens,
                            latency_ms,
                            approximate: false,
                        },
                        None => BackendResponse {
                            input_tokens: count_tokens_fallback(&request.prompt),
                            output_tokens: count_tokens_fallback(&text),
                            text,
                            latency_ms,
                            approximate: true,
                        },
                    });
                }
                Err(Attempt::Fatal(kind, detail)) => return Err(BackendError::Failure { kind, attempts, detail }),
                Err(Attempt::Retry(kind, detail)) => {
                    let retry = attempts - 1;
                    if retry >= self.config.max_retries {
                        return Err(BackendError::Failure { kind, attempts, detail });
                    }
                    let delays = &self.config.backoff_ms;
                    let delay = delays[(retry as usize).min(delays.len() - 1)];
                    tracing::warn!(role = %request.role, attempt = attempts, %kind, delay_ms = delay, "retrying: {detail}");
                    std::thread::sleep(Duration::from_millis(delay));
                }
            }
        }
    }
}

fn snippet(text: &str) -> String {
    text.chars().take(200).collect()
}

/// Reply text and, when reported, (prompt, completion) token counts.
fn parse_completion(body: &str) -> Result<(String, Option<(u64, u64)>), String> {
    let v: Value = serde_json::from_str(body).map_err(|e| format!("response is not JSON: {e}"))?;
    let content = &v["choices"][0]["message"]["content"];
    let text = match content {
        Value::String(s) => s.clone(),
        Value::Array(parts) => parts.iter().filter_map(|p| p["text"].as_str()).collect::<Vec<_>>().join(""),
        _ => return Err("response has no message content".into()),
    };
    let usage = &v["usage"];
    let counts = usage["prompt_tokens"].as_u64().zip(usage["completion_tokens"].as_u64());
    Ok((text, counts))
}

/// URLs pass through; local files become base64 data URLs.
fn image_url(image: &str) -> Result<String, BackendError> {
    if image.starts_with("http://") || image.starts_with("https://") || image.starts_with("data:") {
        return Ok(image.to_string());
    }
    let path = Path::new(image);
    let bytes = std::fs::read(path).map_err(|e| BackendError::InvalidRequest(format!("image {image}: {e}")))?;
    let mime = match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => "image/png",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        _ => "image/jpeg",
    };
    Ok(format!("data:{mime};base64,{}", base64::engine::general_purpose::STANDARD.encode(bytes)))
}
