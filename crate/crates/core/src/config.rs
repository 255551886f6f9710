//! TOML configuration with environment overrides.
//!
//! ```toml
//! [service]
//! port = 8080
//! graph_path = "line.dkg"
//!
//! [embedder]
//! kind = "local"
//!
//! [retrieval]
//! k = 10
//! dedup = false
//! scoring = "chunk_score"
//!
//! [chunking]
//! include_ancestor_path = false
//! ```
//!
//! `PORT`, `GRAPH_PATH` and `EMBED_KEY_ENV` override the matching keys.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::chunker::ChunkOptions;
use crate::diagnose::DiagnoseOptions;
use crate::embed::EmbedderConfig;

pub const DEFAULT_PORT: u16 = 8080;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub port: u16,
    pub bind: String,
    pub graph_path: PathBuf,
    /// Directory of static UI files served at `/`, if any.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ui_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            port: DEFAULT_PORT,
            bind: "127.0.0.1".into(),
            graph_path: PathBuf::from("line.dkg"),
            ui_dir: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub service: ServiceConfig,
    pub embedder: EmbedderConfig,
    pub retrieval: DiagnoseOptions,
    pub chunking: ChunkOptions,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("environment variable {var}: {message}")]
    Env { var: &'static str, message: String },
}

impl ConfigError {
    pub fn code(&self) -> &'static str {
        match self {
            ConfigError::Io { .. } => "io-error",
            ConfigError::Parse { .. } | ConfigError::Env { .. } => "config-error",
        }
    }
}

impl Config {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn read(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_toml(&text, path)
    }

    /// Applies `PORT`, `GRAPH_PATH` and `EMBED_KEY_ENV` as looked up by `var`.
    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(port) = var("PORT") {
            self.service.port = port.trim().parse().map_err(|_| ConfigError::Env {
                var: "PORT",
                message: format!("`{port}` is not a port number"),
            })?;
        }
        if let Some(path) = var("GRAPH_PATH") {
            self.service.graph_path = PathBuf::from(path);
        }
        if let Some(key_env) = var("EMBED_KEY_ENV") {
            self.embedder.key_env = Some(key_env);
        }
        Ok(())
    }

    /// File (when given) overlaid with the process environment.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut cfg = match path {
            Some(p) => Self::read(p)?,
            None => Config::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        Ok(cfg)
    }
}
