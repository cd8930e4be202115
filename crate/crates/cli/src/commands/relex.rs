//! `relex` subcommand: replace redacted entities with consistent surrogates.
//!
//! Consumes a `deid` output directory (original task texts plus fact
//! dictionaries), relexicalizes each free-text field from the original text,
//! and carries cluster surrogates into masked structured fields: when a
//! field was masked to `[TYPE]` and the record produced exactly one distinct
//! surrogate of that entity type, the surrogate stands in for the mask.
//! The replacement index is shared across records (and persisted when an
//! index path is configured), so recurring entities keep their surrogates.

use super::{build_agents, read_json, write_json};
use crate::config::PipelineConfig;
use anyhow::{bail, Context, Result};
use deid_core::extraction::FactDictionary;
use deid_core::relex::{relexicalize, ClusterReplacement, InMemoryIndex, RelexIndex, TrigramEmbedder};
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::PathBuf;

#[derive(Debug, clap::Args)]
pub struct RelexArgs {
    /// A `deid` output directory.
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory (one subdirectory per record).
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Serialize)]
struct RelexReport {
    status: String,
    replacements: Vec<ClusterReplacement>,
    unresolved_mentions: usize,
    /// Masked structured fields rewritten with a cluster surrogate.
    substituted_fields: Vec<String>,
}

fn mask_token_type(value: &serde_json::Value) -> Option<&str> {
    let s = value.as_str()?;
    let inner = s.strip_prefix('[')?.strip_suffix(']')?;
    (!inner.is_empty()
        && inner
            .chars()
            .all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == '_'))
    .then_some(inner)
}

pub fn run(args: &RelexArgs, config: &PipelineConfig) -> Result<()> {
    let agents = build_agents(config)?;
    let mut index: InMemoryIndex = match &config.index_path {
        Some(path) => InMemoryIndex::open(path)?,
        None => InMemoryIndex::new(),
    };
    std::fs::create_dir_all(&args.output)?;

    let mut record_dirs: Vec<PathBuf> = std::fs::read_dir(&args.input)
        .with_context(|| format!("listing {}", args.input.display()))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.join("deid.json").is_file())
        .collect();
    record_dirs.sort();

    let mut failed: Vec<String> = Vec::new();
    for dir in &record_dirs {
        let stem = super::file_stem(dir);
        match relex_record(dir, &stem, config, &agents, &mut index, &args.output) {
            Ok(()) => {}
            Err(e) => {
                log::error!("relexicalization failed for record `{stem}`: {e}");
                failed.push(stem);
            }
        }
    }

    if !failed.is_empty() {
        bail!(
            "{} record(s) failed relexicalization: {}",
            failed.len(),
            failed.join(", ")
        );
    }
    log::info!("relexicalized {} record(s)", record_dirs.len());
    Ok(())
}

fn relex_record(
    dir: &std::path::Path,
    stem: &str,
    config: &PipelineConfig,
    agents: &deid_core::agents::AgentSet,
    index: &mut dyn RelexIndex,
    output: &std::path::Path,
) -> Result<()> {
    let deid: serde_json::Value = read_json(&dir.join("deid.json"))?;
    let tasks: BTreeMap<String, String> = read_json(&dir.join("tasks.json"))?;
    let facts: BTreeMap<String, FactDictionary> = read_json(&dir.join("facts.json"))?;

    let mut values = deid
        .get("values")
        .and_then(|v| v.as_object())
        .cloned()
        .unwrap_or_default();
    let mut replacements: Vec<ClusterReplacement> = Vec::new();
    let mut unresolved = 0usize;

    for (field, text) in &tasks {
        let dict = facts.get(field).cloned().unwrap_or_default();
        let outcome = relexicalize(
            text,
            &dict,
            &config.domain,
            index,
            agents.cluster.as_ref(),
            agents.decision.as_ref(),
            agents.generator.as_ref(),
            &TrigramEmbedder,
            &config.relex,
        )?;
        unresolved += outcome.failures.len();
        values.insert(field.clone(), outcome.text.into());
        replacements.extend(outcome.replacements);
    }

    // Surrogates by entity type, for masked-field substitution.
    let mut by_type: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for r in &replacements {
        let list = by_type.entry(r.entity_type.as_str()).or_default();
        if !list.contains(&r.replacement.as_str()) {
            list.push(&r.replacement);
        }
    }
    let mut substituted = Vec::new();
    for (field, value) in values.clone() {
        if let Some(entity_type) = mask_token_type(&value) {
            match by_type.get(entity_type).map(Vec::as_slice) {
                Some([only]) => {
                    values.insert(field.clone(), (*only).into());
                    substituted.push(field);
                }
                _ => log::warn!(
                    "masked field `{field}` has no unambiguous {entity_type} surrogate; mask kept"
                ),
            }
        }
    }

    let out_dir = output.join(stem);
    std::fs::create_dir_all(&out_dir)?;
    write_json(
        &out_dir.join("relex.json"),
        &serde_json::json!({
            "data_type": deid.get("data_type"),
            "values": values,
        }),
    )?;
    write_json(
        &out_dir.join("relex_report.json"),
        &RelexReport {
            status: "ok".into(),
            replacements,
            unresolved_mentions: unresolved,
            substituted_fields: substituted,
        },
    )?;
    Ok(())
}
