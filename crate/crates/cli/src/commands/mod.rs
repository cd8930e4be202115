pub mod audio;
pub mod deid;
pub mod eval;
pub mod relex;

use crate::config::PipelineConfig;
use crate::remote::RemoteFactory;
use anyhow::{Context, Result};
use deid_core::agents::{AgentRegistry, AgentSet};
use std::path::Path;

/// Build the configured agent backend from the full registry.
pub fn build_agents(config: &PipelineConfig) -> Result<AgentSet> {
    let mut registry = AgentRegistry::builtin();
    registry.register("remote", Box::new(RemoteFactory));
    registry
        .build(&config.agent_backend, &config.agent_settings)
        .context("building agent backend")
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let raw = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&raw).with_context(|| format!("parsing {}", path.display()))
}

/// Sorted *.json entries of a directory.
pub fn json_files(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "json") && p.is_file())
        .collect();
    files.sort();
    Ok(files)
}

pub fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "record".into())
}
