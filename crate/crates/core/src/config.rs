//! Service configuration.
//!
//! Precedence, lowest first: built-in defaults, the TOML file, `ANCHORNAV_*`
//! environment variables, command-line flags (applied by the binary).
//!
//! | variable                   | field                         |
//! |----------------------------|-------------------------------|
//! | `ANCHORNAV_HOST`           | `server.host`                 |
//! | `ANCHORNAV_PORT`           | `server.port`                 |
//! | `ANCHORNAV_AUDIT_PATH`     | `server.audit_path`           |
//! | `ANCHORNAV_CONFIRM_ALL`    | `server.confirm_all`          |
//! | `ANCHORNAV_ALPHA`          | `retrieval.fusion.alpha`      |
//! | `ANCHORNAV_TAU`            | `retrieval.fusion.tau`        |
//! | `ANCHORNAV_DELTA`          | `retrieval.fusion.delta`      |
//! | `ANCHORNAV_TOP_K`          | `retrieval.fusion.top_k`      |
//! | `ANCHORNAV_WINDOW`         | `retrieval.window.width`      |
//! | `ANCHORNAV_STRIDE`         | `retrieval.window.stride`     |
//! | `ANCHORNAV_BACKOFF_URL`    | `router.backoff_url`          |
//! | `ANCHORNAV_EMBEDDING_URL`  | `embedding.provider_url`      |
//! | `ANCHORNAV_SCOPES_PATH`    | `scopes_path`                 |

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dense::{DEFAULT_DIM, DEFAULT_SEED};
use crate::engine::EngineConfig;
use crate::router::DEFAULT_BACKOFF_THRESHOLD;
use crate::synopsis::ScopeConfig;

pub const ENV_PREFIX: &str = "ANCHORNAV_";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parsing config: {0}")]
    Parse(String),
    #[error("environment variable {name}: cannot parse {value:?}")]
    Env { name: String, value: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub host: String,
    pub port: u16,
    pub audit_path: PathBuf,
    pub session_ttl_secs: u64,
    pub breadcrumb_cap: usize,
    /// Require confirmation for every intent, not only absolute jumps.
    pub confirm_all: bool,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8750,
            audit_path: PathBuf::from("anchornav-audit.ndjson"),
            session_ttl_secs: 4 * 60 * 60,
            breadcrumb_cap: 50,
            confirm_all: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RouterConfig {
    /// `None` selects the built-in stub.
    pub backoff_url: Option<String>,
    pub threshold: f64,
    pub deadline_ms: u64,
}

impl Default for RouterConfig {
    fn default() -> Self {
        Self { backoff_url: None, threshold: DEFAULT_BACKOFF_THRESHOLD, deadline_ms: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    /// `None` selects the built-in hashed 3-gram provider.
    pub provider_url: Option<String>,
    pub dim: usize,
    pub seed: u64,
    pub timeout_ms: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self { provider_url: None, dim: DEFAULT_DIM, seed: DEFAULT_SEED, timeout_ms: 2000 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub server: ServerConfig,
    pub retrieval: EngineConfig,
    pub router: RouterConfig,
    pub embedding: EmbeddingConfig,
    pub scopes_path: Option<PathBuf>,
}

impl AppConfig {
    pub fn from_toml(src: &str) -> Result<Self, ConfigError> {
        toml::from_str(src).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Defaults, then `path` if given, then the process environment.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut cfg = match path {
            Some(p) => {
                let src = std::fs::read_to_string(p).map_err(|source| ConfigError::Io { path: p.to_path_buf(), source })?;
                Self::from_toml(&src)?
            }
            None => Self::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        fn parse<T: FromStr>(name: &str, value: String) -> Result<T, ConfigError> {
            value.trim().parse().map_err(|_| ConfigError::Env { name: name.to_string(), value })
        }
        let get = |suffix: &str| {
            let name = format!("{ENV_PREFIX}{suffix}");
            lookup(&name).map(|v| (name, v))
        };
        if let Some((_, v)) = get("HOST") {
            self.server.host = v;
        }
        if let Some((n, v)) = get("PORT") {
            self.server.port = parse(&n, v)?;
        }
        if let Some((_, v)) = get("AUDIT_PATH") {
            self.server.audit_path = PathBuf::from(v);
        }
        if let Some((n, v)) = get("CONFIRM_ALL") {
            self.server.confirm_all = parse(&n, v)?;
        }
        let fusion = &mut self.retrieval.fusion;
        if let Some((n, v)) = get("ALPHA") {
            fusion.alpha = parse(&n, v)?;
        }
        if let Some((n, v)) = get("TAU") {
            fusion.tau = parse(&n, v)?;
        }
        if let Some((n, v)) = get("DELTA") {
            fusion.delta = parse(&n, v)?;
        }
        if let Some((n, v)) = get("TOP_K") {
            fusion.top_k = parse(&n, v)?;
        }
        if let Some((n, v)) = get("WINDOW") {
            self.retrieval.window.width = parse(&n, v)?;
        }
        if let Some((n, v)) = get("STRIDE") {
            self.retrieval.window.stride = parse(&n, v)?;
        }
        if let Some((_, v)) = get("BACKOFF_URL") {
            self.router.backoff_url = Some(v).filter(|s| !s.is_empty());
        }
        if let Some((_, v)) = get("EMBEDDING_URL") {
            self.embedding.provider_url = Some(v).filter(|s| !s.is_empty());
        }
        if let Some((_, v)) = get("SCOPES_PATH") {
            self.scopes_path = Some(PathBuf::from(v));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.retrieval.fusion.validate().map_err(ConfigError::Invalid)?;
        let w = self.retrieval.window;
        if w.width == 0 || w.stride == 0 || w.stride > w.width {
            return Err(ConfigError::Invalid(format!("window width {} / stride {}", w.width, w.stride)));
        }
        if !(0.0..=1.0).contains(&self.router.threshold) {
            return Err(ConfigError::Invalid(format!("router threshold {}", self.router.threshold)));
        }
        if !(0.0..=1.0).contains(&self.retrieval.tolerance) {
            return Err(ConfigError::Invalid(format!("alignment tolerance {}", self.retrieval.tolerance)));
        }
        if self.embedding.dim == 0 {
            return Err(ConfigError::Invalid("embedding dim must be >= 1".into()));
        }
        if self.server.breadcrumb_cap == 0 {
            return Err(ConfigError::Invalid("breadcrumb_cap must be >= 1".into()));
        }
        Ok(())
    }

    pub fn scopes(&self) -> Result<ScopeConfig, ConfigError> {
        match &self.scopes_path {
            None => Ok(ScopeConfig::default()),
            Some(p) => {
                let src = std::fs::read_to_string(p).map_err(|source| ConfigError::Io { path: p.clone(), source })?;
                ScopeConfig::from_toml(&src).map_err(|e| ConfigError::Parse(e.to_string()))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn defaults_are_valid() {
        let cfg = AppConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.retrieval.fusion.alpha, 0.7);
        assert_eq!(cfg.retrieval.window.width, 3);
        assert_eq!(cfg.server.session_ttl_secs, 14_400);
    }

    #[test]
    fn file_then_env_precedence() {
        let mut cfg = AppConfig::from_toml(
            "[server]\nport = 9000\n[retrieval.fusion]\nalpha = 0.5\ntau = 0.4\n",
        )
        .unwrap();
        assert_eq!(cfg.server.port, 9000);
        assert_eq!(cfg.retrieval.fusion.delta, 0.05);
        let env: HashMap<&str, &str> = [("ANCHORNAV_ALPHA", "0.9"), ("ANCHORNAV_WINDOW", "1"), ("ANCHORNAV_STRIDE", "1")].into();
        cfg.apply_env(|k| env.get(k).map(|v| v.to_string())).unwrap();
        assert_eq!(cfg.retrieval.fusion.alpha, 0.9);
        assert_eq!(cfg.retrieval.fusion.tau, 0.4);
        assert_eq!(cfg.retrieval.window.width, 1);
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        assert!(AppConfig::from_toml("[server]\nbogus = 1\n").is_err());
        let mut cfg = AppConfig::default();
        let err = cfg.apply_env(|k| (k == "ANCHORNAV_PORT").then(|| "eighty".to_string()));
        assert!(matches!(err, Err(ConfigError::Env { .. })));
        cfg.retrieval.fusion.alpha = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = AppConfig::default();
        cfg.retrieval.window.stride = 4;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn bundled_example_config_parses() {
        let src = include_str!("../../../config/anchornav.toml");
        let cfg = AppConfig::from_toml(src).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.retrieval.fusion, crate::fusion::FusionConfig::default());
    }
}
