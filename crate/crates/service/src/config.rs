//! Server configuration file plus environment overrides.

use std::path::{Path, PathBuf};

use mastery_core::QueuePolicy;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ENV_PORT: &str = "MASTERY_PORT";
pub const ENV_LEDGER: &str = "MASTERY_LEDGER";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("bad config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("bad value for {var}: {value:?}")]
    Env { var: &'static str, value: String },
    #[error("missing setting `{0}`")]
    Missing(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    pub port: u16,
    pub ledger: Option<PathBuf>,
    pub catalog: Option<PathBuf>,
    pub schedule: Option<PathBuf>,
    pub tokens: Option<PathBuf>,
    /// Mutations waiting for the writer before new ones get `RETRY_LATER`.
    pub write_queue: usize,
    /// Seed for re-check draws; drawn from the OS when absent.
    pub recheck_seed: Option<u64>,
    pub policy: QueuePolicy,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1".into(),
            port: 8080,
            ledger: None,
            catalog: None,
            schedule: None,
            tokens: None,
            write_queue: 64,
            recheck_seed: None,
            policy: QueuePolicy::default(),
        }
    }
}

impl ServiceConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    /// Loads `path` and resolves relative file paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let Some(dir) = path.parent() {
            for p in [&mut cfg.ledger, &mut cfg.catalog, &mut cfg.schedule, &mut cfg.tokens].into_iter().flatten() {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    /// Applies `MASTERY_PORT` and `MASTERY_LEDGER` from `lookup`.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(v) = lookup(ENV_PORT) {
            self.port = v.trim().parse().map_err(|_| ConfigError::Env { var: ENV_PORT, value: v })?;
        }
        if let Some(v) = lookup(ENV_LEDGER) {
            if v.is_empty() {
                return Err(ConfigError::Env { var: ENV_LEDGER, value: v });
            }
            self.ledger = Some(v.into());
        }
        Ok(())
    }

    pub fn ledger_path(&self) -> Result<&Path, ConfigError> {
        self.ledger.as_deref().ok_or(ConfigError::Missing("ledger"))
    }

    pub fn catalog_path(&self) -> Result<&Path, ConfigError> {
        self.catalog.as_deref().ok_or(ConfigError::Missing("catalog"))
    }

    pub fn tokens_path(&self) -> Result<&Path, ConfigError> {
        self.tokens.as_deref().ok_or(ConfigError::Missing("tokens"))
    }
}
