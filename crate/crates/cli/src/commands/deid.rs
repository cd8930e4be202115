//! `deid` subcommand: schema-driven record de-identification.
//!
//! Records are processed in merged-schema batches: the batch's schemas are
//! merged into one composite schema (fields prefixed `r<i>.`), the records
//! merged likewise, rules applied once, and the results split back per
//! record. Free-text fields go through multi-pass extraction and redaction;
//! extraction requests stay per-field, so batch size never changes outputs.
//!
//! Per input record `<name>.json` the output directory gains `<name>/` with
//! `deid.json` (processed record), `tasks.json` (original free-text fields),
//! `facts.json` (extracted mentions), `spans.json` (resolved spans and
//! unresolved mentions), and `report.json`. A record whose extraction fails
//! gets no output files at all (fail closed) and the command exits nonzero.

use super::{build_agents, file_stem, json_files, read_json, write_json};
use crate::config::{hash_key_from_env, PipelineConfig};
use anyhow::{bail, Context, Result};
use deid_core::extraction::run_autodeid;
use deid_core::redaction::redact;
use deid_core::schema::{
    identify_schema, merge_records, merge_schemas, process_record, split_field_name, split_values,
    RecordInstance, Schema, SchemaFile, SchemaRegistry,
};
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, clap::Args)]
pub struct DeidArgs {
    /// Directory of record JSON files ({"data_type": ..., "values": {...}}).
    #[arg(long)]
    pub input: PathBuf,
    /// Directory of reviewed schema JSON files.
    #[arg(long)]
    pub schemas: PathBuf,
    /// Output directory (one subdirectory per record).
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Serialize)]
struct RecordReport {
    status: String,
    warnings: Vec<deid_core::schema::FieldWarning>,
    unresolved_mentions: usize,
    entity_counts: BTreeMap<String, usize>,
}

pub fn load_registry(dir: &Path, domain_key: Vec<u8>) -> Result<SchemaRegistry> {
    let mut registry = SchemaRegistry::new(domain_key);
    for path in json_files(dir)? {
        let file: SchemaFile = read_json(&path)?;
        let schema = Schema::from_file(file)
            .with_context(|| format!("loading schema {}", path.display()))?;
        registry.insert(schema)?;
    }
    Ok(registry)
}

pub fn run(args: &DeidArgs, config: &PipelineConfig) -> Result<()> {
    let registry = load_registry(&args.schemas, hash_key_from_env()?)?;
    let agents = build_agents(config)?;
    std::fs::create_dir_all(&args.output)?;

    let record_files = json_files(&args.input)?;
    let mut failed_records: Vec<String> = Vec::new();

    for batch in record_files.chunks(config.batch_size) {
        let stems: Vec<String> = batch.iter().map(|p| file_stem(p)).collect();
        let records: Vec<RecordInstance> = batch
            .iter()
            .map(|p| read_json(p))
            .collect::<Result<_>>()?;
        let schemas: Vec<Schema> = records
            .iter()
            .map(|r| identify_schema(r, &registry).cloned())
            .collect::<Result<_, _>>()?;

        let merged_schema = merge_schemas(&schemas, config.batch_size)?;
        let merged_record = merge_records(&records);
        let processed = process_record(&merged_record, &merged_schema, registry.domain_key())?;

        // Run extraction per free-text field; collect results per record.
        let n = records.len();
        let mut values = split_values(&processed.structured, n);
        let mut tasks: Vec<BTreeMap<String, String>> = vec![BTreeMap::new(); n];
        let mut facts: Vec<BTreeMap<String, deid_core::extraction::FactDictionary>> =
            vec![BTreeMap::new(); n];
        let mut spans: Vec<BTreeMap<String, serde_json::Value>> = vec![BTreeMap::new(); n];
        let mut unresolved = vec![0usize; n];
        let mut entity_counts: Vec<BTreeMap<String, usize>> = vec![BTreeMap::new(); n];
        let mut record_failed = vec![false; n];

        for task in &processed.deid_tasks {
            let (i, field) = split_field_name(&task.field_name)
                .with_context(|| format!("unexpected composite field `{}`", task.field_name))?;
            match run_autodeid(&task.text, &config.extraction, agents.extractor.as_ref()) {
                Ok(dict) => {
                    let outcome = redact(&task.text, &dict);
                    unresolved[i] += outcome.failures.len();
                    for span in &outcome.spans {
                        *entity_counts[i].entry(span.entity_type.clone()).or_default() += 1;
                    }
                    values[i].insert(field.to_string(), outcome.redacted.clone().into());
                    tasks[i].insert(field.to_string(), task.text.clone());
                    spans[i].insert(
                        field.to_string(),
                        serde_json::json!({
                            "spans": outcome.spans,
                            "failures": outcome.failures,
                        }),
                    );
                    facts[i].insert(field.to_string(), dict);
                }
                Err(e) => {
                    // PHI-safe: field name and error kind only.
                    log::error!("extraction failed for record `{}` field `{field}`: {e}", stems[i]);
                    record_failed[i] = true;
                }
            }
        }

        for i in 0..n {
            if record_failed[i] {
                failed_records.push(stems[i].clone());
                continue;
            }
            let dir = args.output.join(&stems[i]);
            std::fs::create_dir_all(&dir)?;
            write_json(
                &dir.join("deid.json"),
                &serde_json::json!({
                    "data_type": records[i].data_type,
                    "values": values[i],
                }),
            )?;
            write_json(&dir.join("tasks.json"), &tasks[i])?;
            write_json(&dir.join("facts.json"), &facts[i])?;
            write_json(&dir.join("spans.json"), &spans[i])?;
            let warnings = processed
                .warnings
                .iter()
                .filter_map(|w| {
                    split_field_name(&w.field_name).and_then(|(wi, field)| {
                        (wi == i).then(|| deid_core::schema::FieldWarning {
                            field_name: field.to_string(),
                            message: w.message.clone(),
                        })
                    })
                })
                .collect();
            write_json(
                &dir.join("report.json"),
                &RecordReport {
                    status: "ok".into(),
                    warnings,
                    unresolved_mentions: unresolved[i],
                    entity_counts: entity_counts[i].clone(),
                },
            )?;
        }
    }

    if !failed_records.is_empty() {
        bail!(
            "{} record(s) failed de-identification: {}",
            failed_records.len(),
            failed_records.join(", ")
        );
    }
    log::info!("de-identified {} record(s)", record_files.len());
    Ok(())
}
