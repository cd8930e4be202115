//! Pipeline configuration.
//!
//! Override order, lowest to highest: built-in defaults, config file,
//! command-line flags, environment variables. Secrets (the hashing domain
//! key, remote auth tokens) are read from the environment only and never
//! from config files.

use anyhow::{bail, Context, Result};
use deid_core::audio::AudioConfig;
use deid_core::extraction::ExtractionConfig;
use deid_core::relex::RelexConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Environment variable overriding the agent backend name.
pub const ENV_AGENT_BACKEND: &str = "DEID_AGENT_BACKEND";
/// Environment variable holding the identifier-hashing domain key.
pub const ENV_HASH_KEY: &str = "DEID_HASH_KEY";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Agent backend name in the registry (`scripted`, `remote`, ...).
    pub agent_backend: String,
    /// Backend-specific settings passed to the factory (e.g. a script path
    /// for `scripted`, endpoint settings for `remote`). Never secrets.
    pub agent_settings: serde_json::Value,
    pub extraction: ExtractionConfig,
    pub relex: RelexConfig,
    pub audio: AudioConfig,
    /// Replacement-index domain; records of one domain share surrogates.
    pub domain: String,
    /// Replacement index file (JSON lines); in-memory only when unset.
    pub index_path: Option<PathBuf>,
    /// Records processed per merged-schema batch.
    pub batch_size: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            agent_backend: "scripted".into(),
            agent_settings: serde_json::Value::Null,
            extraction: ExtractionConfig::default(),
            relex: RelexConfig::default(),
            audio: AudioConfig::default(),
            domain: "default".into(),
            index_path: None,
            batch_size: 1,
        }
    }
}

/// Flags shared by every subcommand; each maps onto a config field.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct ConfigOverrides {
    /// Configuration file (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Agent backend name.
    #[arg(long, global = true)]
    pub backend: Option<String>,
    /// Backend settings: inline JSON, or @path to a JSON file.
    #[arg(long, global = true)]
    pub agent_settings: Option<String>,
    /// Chunk size in words (omega).
    #[arg(long, global = true)]
    pub chunk_size: Option<usize>,
    /// Number of extraction passes (p).
    #[arg(long, global = true)]
    pub passes: Option<usize>,
    /// Chunk overlap in words.
    #[arg(long, global = true)]
    pub overlap: Option<usize>,
    /// Audio muting margin in seconds.
    #[arg(long, global = true)]
    pub margin: Option<f64>,
    /// Replacement-index domain.
    #[arg(long, global = true)]
    pub domain: Option<String>,
    /// Replacement index file.
    #[arg(long, global = true)]
    pub index: Option<PathBuf>,
    /// Records per merged-schema batch.
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
}

impl PipelineConfig {
    /// Defaults, then file, then flags, then environment.
    pub fn resolve(overrides: &ConfigOverrides) -> Result<Self> {
        let mut config = match &overrides.config {
            Some(path) => Self::from_file(path)?,
            None => PipelineConfig::default(),
        };

        if let Some(backend) = &overrides.backend {
            config.agent_backend = backend.clone();
        }
        if let Some(raw) = &overrides.agent_settings {
            config.agent_settings = parse_settings_arg(raw)?;
        }
        if let Some(v) = overrides.chunk_size {
            config.extraction.chunk_size_words = v;
        }
        if let Some(v) = overrides.passes {
            config.extraction.passes = v;
        }
        if let Some(v) = overrides.overlap {
            config.extraction.overlap_words = v;
        }
        if let Some(v) = overrides.margin {
            config.audio.margin_secs = v;
        }
        if let Some(v) = &overrides.domain {
            config.domain = v.clone();
        }
        if let Some(v) = &overrides.index {
            config.index_path = Some(v.clone());
        }
        if let Some(v) = overrides.batch_size {
            config.batch_size = v;
        }

        if let Ok(backend) = std::env::var(ENV_AGENT_BACKEND) {
            if !backend.is_empty() {
                config.agent_backend = backend;
            }
        }

        config.extraction.validate()?;
        if config.batch_size == 0 {
            bail!("batch size must be at least 1");
        }
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        serde_json::from_str(&raw).with_context(|| format!("parsing config file {}", path.display()))
    }
}

fn parse_settings_arg(raw: &str) -> Result<serde_json::Value> {
    let text = match raw.strip_prefix('@') {
        Some(path) => std::fs::read_to_string(path)
            .with_context(|| format!("reading agent settings file {path}"))?,
        None => raw.to_string(),
    };
    serde_json::from_str(&text).context("parsing agent settings JSON")
}

/// Domain key for identifier hashing, from the environment only.
pub fn hash_key_from_env() -> Result<Vec<u8>> {
    match std::env::var(ENV_HASH_KEY) {
        Ok(key) if !key.is_empty() => Ok(key.into_bytes()),
        _ => bail!(
            "identifier hashing requires the {ENV_HASH_KEY} environment variable \
             (secrets are never read from config files)"
        ),
    }
}
