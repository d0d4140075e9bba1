use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{ChatRequest, LlmError};

const RESPONSE_CHARS: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub timestamp: String,
    pub template: Option<String>,
    pub prompt_hash: String,
    /// First characters of the reply, or of the error.
    pub response: String,
    pub ok: bool,
}

/// Append-only JSONL file with one record per backend call.
pub struct AuditLog {
    path: PathBuf,
    file: Mutex<File>,
}

impl AuditLog {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| LlmError::Audit(format!("{}: {e}", path.display())))?;
        Ok(AuditLog {
            path,
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn record(&self, request: &ChatRequest, result: &Result<String, LlmError>) -> Result<(), LlmError> {
        let (text, ok) = match result {
            Ok(t) => (t.clone(), true),
            Err(e) => (e.to_string(), false),
        };
        let record = AuditRecord {
            timestamp: chrono::Utc::now().to_rfc3339(),
            template: request.template.clone(),
            prompt_hash: request.prompt_hash(),
            response: text.chars().take(RESPONSE_CHARS).collect(),
            ok,
        };
        let line = serde_json::to_string(&record).map_err(|e| LlmError::Audit(e.to_string()))?;
        let mut f = self.file.lock().unwrap_or_else(|e| e.into_inner());
        writeln!(f, "{line}").map_err(|e| LlmError::Audit(e.to_string()))
    }
}
