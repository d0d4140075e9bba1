//! Chat-completion access: HTTP client, scripted mock, prompt templates,
//! JSON extraction and a JSONL audit trail.

mod audit;
mod http;
mod json;
mod mock;
mod template;

pub use audit::{AuditLog, AuditRecord};
pub use http::HttpBackend;
pub use json::{extract_json, extract_json_array};
pub use mock::{MockScript, ScriptedMock};
pub use template::{render_prompt, template_names, template_variables};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("request timed out after {secs} s")]
    Timeout { secs: f64 },
    #[error("endpoint returned HTTP {status}: {excerpt}")]
    Status { status: u16, excerpt: String },
    #[error("malformed completion response: {0}")]
    Response(String),
    #[error("scripted mock exhausted after {served} replies")]
    MockExhausted { served: usize },
    #[error("scripted mock has no reply for prompt hash {hash}")]
    MockUnknownPrompt { hash: String },
    #[error("no complete JSON value in model output")]
    Extraction { raw: String },
    #[error("model output rejected after re-prompt: {reason}")]
    Invalid { reason: String, raw: String },
    #[error("template error: {0}")]
    Template(String),
    #[error("template '{template}' needs variable '{variable}'")]
    UnboundVariable { template: String, variable: String },
    #[error("audit log: {0}")]
    Audit(String),
    #[error("invalid request: {0}")]
    Request(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_secs: f64,
    /// Template the request was rendered from, for the audit trail.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<String>,
}

impl ChatRequest {
    pub fn new(messages: Vec<ChatMessage>) -> Self {
        ChatRequest {
            model: "default".into(),
            messages,
            temperature: 0.7,
            max_tokens: 1024,
            timeout_secs: 60.0,
            template: None,
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.messages.is_empty() {
            return Err(LlmError::Request("at least one message is required".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(LlmError::Request("temperature must be >= 0".into()));
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(LlmError::Request("timeout must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 over the role/content sequence, hex encoded.
    pub fn prompt_hash(&self) -> String {
        let mut h = Sha256::new();
        for m in &self.messages {
            h.update(serde_json::to_string(&m.role).unwrap_or_default());
            h.update([0u8]);
            h.update(&m.content);
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }
}

pub enum LlmBackend {
    Http(HttpBackend),
    Mock(ScriptedMock),
}

impl LlmBackend {
    pub fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        request.validate()?;
        match self {
            LlmBackend::Http(h) => h.complete(request),
            LlmBackend::Mock(m) => m.complete(request),
        }
    }
}

/// A backend plus optional audit log. Shareable across threads.
pub struct LlmClient {
    backend: LlmBackend,
    audit: Option<AuditLog>,
}

impl LlmClient {
    pub fn new(backend: LlmBackend) -> Self {
        LlmClient { backend, audit: None }
    }

    pub fn mock(script: MockScript) -> Self {
        Self::new(LlmBackend::Mock(ScriptedMock::new(script)))
    }

    pub fn with_audit(mut self, audit: AuditLog) -> Self {
        self.audit = Some(audit);
        self
    }

    pub fn backend(&self) -> &LlmBackend {
        &self.backend
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let result = self.backend.complete(request);
        if let Some(log) = &self.audit {
            log.record(request, &result)?;
        }
        result
    }

    /// Completes and parses. If `parse` rejects the reply, the reply and the
    /// rejection reason are appended to the conversation and the model is
    /// asked once more; a second rejection is an [`LlmError::Invalid`].
    pub fn complete_parsed<T>(
        &self,
        request: &ChatRequest,
        parse: impl Fn(&str) -> Result<T, String>,
    ) -> Result<T, LlmError> {
        let first = self.complete(request)?;
        let reason = match parse(&first) {
            Ok(v) => return Ok(v),
            Err(reason) => reason,
        };
        log::warn!("model reply rejected ({reason}); re-prompting once");
        let mut retry = request.clone();
        retry.messages.push(ChatMessage {
            role: ChatRole::Assistant,
            content: first,
        });
        retry.messages.push(ChatMessage {
            role: ChatRole::User,
            content: format!(
                "Your previous reply was rejected: {reason}. Reply again with only the requested JSON."
            ),
        });
        let second = self.complete(&retry)?;
        parse(&second).map_err(|reason| LlmError::Invalid { reason, raw: second })
    }
}
