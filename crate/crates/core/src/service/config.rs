//! Deployment configuration: one TOML file plus environment overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub const ENV_LISTEN: &str = "FIELDLAB_LISTEN";
pub const ENV_SECRET_KEY: &str = "FIELDLAB_SECRET_KEY";
pub const ENV_DATA_DIR: &str = "FIELDLAB_DATA_DIR";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid configuration: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// ```toml
/// listen = "127.0.0.1:8080"
/// secret_key = "change-me"
/// data_dir = "./data"        # optional; in-memory when absent
/// snapshot_every = 1000
///
/// [designers]               # name = bearer token
/// alice = "alice-token"
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_listen")]
    pub listen: String,
    pub secret_key: String,
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    #[serde(default = "default_snapshot_every")]
    pub snapshot_every: u64,
    #[serde(default)]
    pub designers: BTreeMap<String, String>,
}

fn default_listen() -> String {
    "127.0.0.1:8080".into()
}

fn default_snapshot_every() -> u64 {
    1000
}

impl ServiceConfig {
    /// In-memory configuration with one designer.
    pub fn ephemeral(secret_key: &str, designer: &str, token: &str) -> Self {
        ServiceConfig {
            listen: default_listen(),
            secret_key: secret_key.into(),
            data_dir: None,
            snapshot_every: default_snapshot_every(),
            designers: BTreeMap::from([(designer.to_string(), token.to_string())]),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let c: ServiceConfig = toml::from_str(text)?;
        c.check()?;
        Ok(c)
    }

    /// Reads `path` and applies the `FIELDLAB_*` environment overrides.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        let mut c: ServiceConfig = toml::from_str(&text)?;
        c.apply_overrides(|k| std::env::var(k).ok());
        c.check()?;
        Ok(c)
    }

    pub fn apply_overrides(&mut self, var: impl Fn(&str) -> Option<String>) {
        if let Some(v) = var(ENV_LISTEN) {
            self.listen = v;
        }
        if let Some(v) = var(ENV_SECRET_KEY) {
            self.secret_key = v;
        }
        if let Some(v) = var(ENV_DATA_DIR) {
            self.data_dir = Some(v.into());
        }
    }

    fn check(&self) -> Result<(), ConfigError> {
        if self.secret_key.is_empty() {
            return Err(ConfigError::Invalid("secret_key must not be empty".into()));
        }
        if self.snapshot_every == 0 {
            return Err(ConfigError::Invalid("snapshot_every must be positive".into()));
        }
        if self.designers.values().any(|t| t.is_empty()) {
            return Err(ConfigError::Invalid("designer tokens must not be empty".into()));
        }
        Ok(())
    }

    pub fn designer_for_token(&self, token: &str) -> Option<&str> {
        self.designers.iter().find(|(_, t)| t.as_str() == token).map(|(n, _)| n.as_str())
    }
}
