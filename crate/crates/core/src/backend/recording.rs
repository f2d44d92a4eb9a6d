use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{AgentBackend, BackendError, Completion, CompletionRequest};
use crate::prompts::Vars;

/// One backend call: prompt id, substitutions, rendered text and raw output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceRecord {
    /// RFC 3339 wall-clock time of the call.
    #[serde(default)]
    pub at: String,
    pub prompt: String,
    pub vars: Vars,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<String>,
    pub user: String,
    pub nonce: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_probability: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Logs every `complete` call of the wrapped backend. Only calls routed
/// through `complete` are seen, so the inner backend should rely on the
/// provided trait methods.
pub struct RecordingBackend<B> {
    inner: B,
    log: Mutex<Vec<ProvenanceRecord>>,
}

impl<B: AgentBackend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self { inner, log: Mutex::new(Vec::new()) }
    }

    pub fn take(&self) -> Vec<ProvenanceRecord> {
        std::mem::take(&mut *self.log.lock().expect("log lock"))
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: AgentBackend> AgentBackend for RecordingBackend<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        let result = self.inner.complete(request);
        let (output, token_probability, error) = match &result {
            Ok(c) => (Some(c.text.clone()), c.token_probability, None),
            Err(e) => (None, None, Some(e.to_string())),
        };
        self.log.lock().expect("log lock").push(ProvenanceRecord {
            at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            prompt: request.prompt.clone(),
            vars: request.vars.clone(),
            system: request.system.clone(),
            user: request.user.clone(),
            nonce: request.nonce,
            output,
            token_probability,
            error,
        });
        result
    }

    fn reports_token_probability(&self) -> bool {
        self.inner.reports_token_probability()
    }
}
