//! Backend selection from configuration files.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    AgentBackend, BackendError, DeterministicEmbedder, Embedder, RemoteBackend, RemoteConfig, RemoteEmbedder, Script,
    ScriptedBackend, DEFAULT_DIM,
};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Scripted,
    Remote,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    #[default]
    Det,
    Remote,
}

/// Which agent backend and embedder to build.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendSpec {
    pub kind: BackendKind,
    /// Script file for the scripted backend; synthesised defaults otherwise.
    pub script: Option<PathBuf>,
    pub remote: Option<RemoteConfig>,
    pub embedder: EmbedderKind,
    /// Dimension of the deterministic embedder.
    pub dim: usize,
}

impl Default for BackendSpec {
    fn default() -> Self {
        Self { kind: BackendKind::Scripted, script: None, remote: None, embedder: EmbedderKind::Det, dim: DEFAULT_DIM }
    }
}

impl BackendSpec {
    /// Reads a `[backend]` table from TOML (or JSON for `.json` files). A file
    /// holding only remote settings selects the remote backend.
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path).map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
        let value: serde_json::Value = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            serde_json::from_str(&text).map_err(|e| BackendError::Config(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| BackendError::Config(e.to_string()))?
        };
        Self::from_value(value.get("backend").cloned().unwrap_or(value))
    }

    pub fn from_value(value: serde_json::Value) -> Result<Self, BackendError> {
        if value.get("endpoint").is_some() {
            let remote: RemoteConfig = serde_json::from_value(value).map_err(|e| BackendError::Config(e.to_string()))?;
            return Ok(Self { kind: BackendKind::Remote, remote: Some(remote), ..Self::default() });
        }
        serde_json::from_value(value).map_err(|e| BackendError::Config(e.to_string()))
    }

    fn remote_config(&self) -> Result<RemoteConfig, BackendError> {
        let mut cfg = self.remote.clone().ok_or_else(|| BackendError::Config("remote settings missing".into()))?;
        if let Ok(key) = std::env::var(super::KEY_ENV) {
            if !key.is_empty() {
                cfg.api_key = Some(key);
            }
        }
        Ok(cfg)
    }

    pub fn agent(&self, seed: u64) -> Result<Arc<dyn AgentBackend>, BackendError> {
        match self.kind {
            BackendKind::Scripted => {
                let script = match &self.script {
                    Some(path) => {
                        let text = std::fs::read_to_string(path)
                            .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
                        Script::from_json(&text)?
                    }
                    None => Script::default(),
                };
                Ok(Arc::new(ScriptedBackend::new(script, seed)))
            }
            BackendKind::Remote => Ok(Arc::new(RemoteBackend::new(self.remote_config()?)?)),
        }
    }

    pub fn embedder(&self) -> Result<Arc<dyn Embedder>, BackendError> {
        match self.embedder {
            EmbedderKind::Det => Ok(Arc::new(DeterministicEmbedder::new(self.dim))),
            EmbedderKind::Remote => Ok(Arc::new(RemoteEmbedder::new(&self.remote_config()?)?)),
        }
    }
}
