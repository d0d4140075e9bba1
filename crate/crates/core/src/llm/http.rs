use std::time::Duration;

use serde_json::{json, Value};

use super::{ChatRequest, LlmError};

/// OpenAI-style chat-completion endpoint: `POST {base}/v1/chat/completions`.
#[derive(Debug, Clone, PartialEq)]
pub struct HttpBackend {
    pub base_url: String,
    /// Environment variable holding the bearer token, if any.
    pub token_env: Option<String>,
    /// Extra attempts after a transport failure, timeout, 429 or 5xx.
    pub retries: u32,
    pub backoff: Duration,
    /// Replaces the model name of every request when set.
    pub model: Option<String>,
}

const EXCERPT_CHARS: usize = 200;

impl HttpBackend {
    pub fn new(base_url: impl Into<String>) -> Self {
        HttpBackend {
            base_url: base_url.into(),
            token_env: None,
            retries: 2,
            backoff: Duration::from_millis(500),
            model: None,
        }
    }

    pub fn endpoint(&self) -> String {
        format!("{}/v1/chat/completions", self.base_url.trim_end_matches('/'))
    }

    pub fn wire_body(request: &ChatRequest) -> Value {
        json!({
            "model": request.model,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        })
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let mut attempt = 0;
        loop {
            match self.attempt(request) {
                Ok(text) => return Ok(text),
                Err(e) if attempt < self.retries && retryable(&e) => {
                    let wait = self.backoff * 2u32.saturating_pow(attempt);
                    log::warn!("chat completion failed ({e}); retrying in {wait:?}");
                    std::thread::sleep(wait);
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn attempt(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(request.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let mut call = agent.post(&self.endpoint()).header("Content-Type", "application/json");
        if let Some(var) = &self.token_env {
            if let Ok(token) = std::env::var(var) {
                call = call.header("Authorization", &format!("Bearer {token}"));
            }
        }
        let mut body = Self::wire_body(request);
        if let Some(m) = &self.model {
            body["model"] = Value::String(m.clone());
        }
        let mut response = call
            .send(body.to_string())
            .map_err(|e| transport(e, request.timeout_secs))?;
        let status = response.status().as_u16();
        let body = response
            .body_mut()
            .read_to_string()
            .map_err(|e| transport(e, request.timeout_secs))?;
        if !(200..300).contains(&status) {
            return Err(LlmError::Status {
                status,
                excerpt: body.chars().take(EXCERPT_CHARS).collect(),
            });
        }
        let value: Value =
            serde_json::from_str(&body).map_err(|e| LlmError::Response(format!("body is not JSON: {e}")))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| LlmError::Response("missing choices[0].message.content".into()))
    }
}

fn transport(e: ureq::Error, secs: f64) -> LlmError {
    match e {
        ureq::Error::Timeout(_) => LlmError::Timeout { secs },
        other => LlmError::Transport(other.to_string()),
    }
}

fn retryable(e: &LlmError) -> bool {
    match e {
        LlmError::Transport(_) | LlmError::Timeout { .. } => true,
        LlmError::Status { status, .. } => *status == 429 || *status >= 500,
        _ => false,
    }
}
