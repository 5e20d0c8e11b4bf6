//! Application configuration, read from a TOML file. Every section and field
//! is optional; missing values take their defaults.
//!
//! ```toml
//! [router]
//! t_faq = 0.9
//! t_doc = 0.8
//!
//! [embedder]
//! dimension = 384
//!
//! [providers]
//! mock = true
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::enrich::EnrichConfig;
use crate::eval::SweepRange;
use crate::model::RouterConfig;
use crate::providers::{EmbedderSpec, GeneratorSpec, DEFAULT_IN_FLIGHT};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProvidersConfig {
    /// Use the deterministic offline providers instead of HTTP endpoints.
    pub mock: bool,
    /// Process-wide cap on concurrent provider calls.
    pub in_flight: usize,
    pub timeout_secs: f64,
    pub retries: u32,
}

impl Default for ProvidersConfig {
    fn default() -> Self {
        Self { mock: false, in_flight: DEFAULT_IN_FLIGHT, timeout_secs: 30.0, retries: 1 }
    }
}

impl ProvidersConfig {
    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuningConfig {
    pub seed: u64,
    /// Upper bound on sampled sweep queries per tier.
    pub max_queries: usize,
    pub range: SweepRange,
}

impl Default for TuningConfig {
    fn default() -> Self {
        Self { seed: 42, max_queries: 500, range: SweepRange::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub bind: String,
    pub port: u16,
    /// Largest number of queued searches answered by one matrix pass.
    pub max_batch: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self { bind: "127.0.0.1".into(), port: 8080, max_batch: crate::batcher::DEFAULT_MAX_BATCH }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AppConfig {
    pub router: RouterConfig,
    pub embedder: EmbedderSpec,
    pub generator: GeneratorSpec,
    pub augment: AugmentConfig,
    pub enrich: EnrichConfig,
    pub providers: ProvidersConfig,
    pub tuning: TuningConfig,
    pub service: ServiceConfig,
}

impl AppConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    /// Reads `path`, or returns the defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_owned(), source })?;
        let config = Self::from_toml(&text).map_err(|source| ConfigError::Parse { path: path.to_owned(), source })?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serializes to TOML")
    }

    /// Writes the configuration atomically.
    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        let io = |source| ConfigError::Io { path: path.to_owned(), source };
        let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
        fs::create_dir_all(dir).map_err(io)?;
        let tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
        fs::write(tmp.path(), self.to_toml()).map_err(io)?;
        tmp.persist(path).map_err(|e| io(e.error))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut problems = Vec::new();
        if let Err(e) = self.router.validate() {
            problems.push(e.to_string());
        }
        if let Err(e) = self.embedder.validate() {
            problems.push(e);
        }
        if let Err(e) = self.generator.validate() {
            problems.push(e);
        }
        if let Err(e) = self.augment.chunker.validate() {
            problems.push(e.to_string());
        }
        if self.providers.in_flight == 0 {
            problems.push("providers.in_flight must be at least 1".into());
        }
        if !(self.providers.timeout_secs > 0.0) {
            problems.push("providers.timeout_secs must be positive".into());
        }
        if let Err(e) = self.tuning.range.thresholds() {
            problems.push(e.to_string());
        }
        if self.service.max_batch == 0 {
            problems.push("service.max_batch must be at least 1".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(problems.join("; ")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = AppConfig::from_toml("").unwrap();
        assert_eq!(c, AppConfig::default());
        assert_eq!(c.router.t_faq, 0.9);
        assert_eq!(c.router.k_faq, 20);
        assert_eq!(c.enrich.n_variants, 19);
        assert_eq!(c.tuning.seed, 42);
        c.validate().unwrap();
    }

    #[test]
    fn partial_sections_override_fields() {
        let c = AppConfig::from_toml("[router]\nt_faq = 0.87\n[embedder]\ndimension = 768\n").unwrap();
        assert_eq!(c.router.t_faq, 0.87);
        assert_eq!(c.router.t_doc, 0.8);
        assert_eq!(c.embedder.dimension, 768);
    }

    #[test]
    fn toml_round_trip() {
        let mut c = AppConfig::default();
        c.router.t_faq = 0.91;
        c.providers.mock = true;
        assert_eq!(AppConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("urag.toml");
        let mut c = AppConfig::default();
        c.router.t_doc = 0.83;
        c.save(&path).unwrap();
        assert_eq!(AppConfig::load(Some(&path)).unwrap(), c);
    }

    #[test]
    fn invalid_values_are_listed() {
        let c = AppConfig::from_toml("[router]\nt_faq = 1.5\nk_doc = 0\n[providers]\nin_flight = 0\n").unwrap();
        let ConfigError::Invalid(msg) = c.validate().unwrap_err() else { panic!() };
        assert!(msg.contains("t_faq") && msg.contains("k_doc") && msg.contains("in_flight"), "{msg}");
    }
}
