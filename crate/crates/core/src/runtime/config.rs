use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use super::MigrationPolicy;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {reason}")]
    Read { path: String, reason: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub workers: usize,
    /// Event log and control records live here when set.
    pub data_dir: Option<PathBuf>,
    pub diagnostics_stream: String,
    pub migration_policy: MigrationPolicy,
    pub max_cascade_steps: usize,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            workers: 1,
            data_dir: None,
            diagnostics_stream: crate::schema::DIAGNOSTICS.into(),
            migration_policy: MigrationPolicy::Cutover,
            max_cascade_steps: 100_000,
        }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let c: Config = toml::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if c.workers == 0 {
            return Err(ConfigError::Invalid("workers must be at least 1".into()));
        }
        if c.max_cascade_steps == 0 {
            return Err(ConfigError::Invalid("max_cascade_steps must be positive".into()));
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::parse(&text)
    }
}
