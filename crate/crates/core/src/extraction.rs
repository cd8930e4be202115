//! Multi-pass entity extraction over chunked text.
//!
//! A document is split into word chunks of at most `chunk_size_words` plus a
//! trailing-context overlap, and each chunk is submitted to an
//! [`Extractor`](crate::agents::Extractor) for `passes` rounds. From the
//! second pass on, mentions already in the fact dictionary are masked in the
//! chunk text so the model attends to previously missed entities. The
//! dictionary grows monotonically: the final result is the union over all
//! chunks and passes.

use crate::agents::{AgentError, Extractor};
use crate::textnorm::normalize;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExtractionError {
    #[error("invalid extraction config: {0}")]
    InvalidConfig(String),
    #[error("extractor failed on chunk {chunk} of pass {pass} after {attempts} attempts: {source}")]
    ExtractorFailure {
        pass: usize,
        chunk: usize,
        attempts: usize,
        source: AgentError,
    },
}

/// One extracted PHI/PII mention: the surface string plus surrounding words
/// that uniquely locate it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityMention {
    pub entity_type: String,
    pub surface: String,
    pub context_hint: String,
}

impl EntityMention {
    /// Case-folded, whitespace-collapsed dedup key.
    pub fn dedup_key(&self) -> (String, String, String) {
        (
            self.entity_type.clone(),
            normalize(&self.surface),
            normalize(&self.context_hint),
        )
    }
}

/// Aggregated mention set for one document, keyed by entity type.
///
/// Insertion order within a type is preserved; duplicate
/// (type, surface, hint) triples are ignored, so merging is idempotent and
/// the dictionary only ever grows.
#[derive(Debug, Clone, Default)]
pub struct FactDictionary {
    mentions: BTreeMap<String, Vec<EntityMention>>,
    seen: HashSet<(String, String, String)>,
}

impl FactDictionary {
    pub fn insert(&mut self, mention: EntityMention) -> bool {
        if !self.seen.insert(mention.dedup_key()) {
            return false;
        }
        self.mentions
            .entry(mention.entity_type.clone())
            .or_default()
            .push(mention);
        true
    }

    pub fn merge(&mut self, other: &FactDictionary) {
        for mention in other.iter_mentions() {
            self.insert(mention.clone());
        }
    }

    pub fn len(&self) -> usize {
        self.mentions.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.mentions.is_empty()
    }

    pub fn contains(&self, mention: &EntityMention) -> bool {
        self.seen.contains(&mention.dedup_key())
    }

    /// Mentions in deterministic order: entity types alphabetically,
    /// insertion order within a type.
    pub fn iter_mentions(&self) -> impl Iterator<Item = &EntityMention> {
        self.mentions.values().flatten()
    }

    pub fn entity_types(&self) -> impl Iterator<Item = &String> {
        self.mentions.keys()
    }

    pub fn mentions_of(&self, entity_type: &str) -> &[EntityMention] {
        self.mentions
            .get(entity_type)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn to_wire(&self) -> BTreeMap<String, Vec<MentionPayload>> {
        self.mentions
            .iter()
            .map(|(t, ms)| {
                (
                    t.clone(),
                    ms.iter()
                        .map(|m| MentionPayload {
                            surface: m.surface.clone(),
                            context_hint: m.context_hint.clone(),
                        })
                        .collect(),
                )
            })
            .collect()
    }

    pub fn from_wire(wire: BTreeMap<String, Vec<MentionPayload>>) -> Self {
        let mut dict = FactDictionary::default();
        for (entity_type, mentions) in wire {
            for m in mentions {
                dict.insert(EntityMention {
                    entity_type: entity_type.clone(),
                    surface: m.surface,
                    context_hint: m.context_hint,
                });
            }
        }
        dict
    }
}

impl Serialize for FactDictionary {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_wire().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for FactDictionary {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        Ok(FactDictionary::from_wire(BTreeMap::deserialize(
            deserializer,
        )?))
    }
}

/// Wire form of a mention. The extraction response carries only entities and
/// hints, never rewritten text; unknown fields are rejected.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MentionPayload {
    pub surface: String,
    pub context_hint: String,
}

/// Request submitted to an extractor realization for one chunk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtractionRequest {
    pub chunk_text: String,
    pub entity_types: Vec<String>,
    pub pass_index: usize,
}

/// Extractor response: entity type to mention payloads.
pub type ExtractionResponse = BTreeMap<String, Vec<MentionPayload>>;

/// Word chunk of the source token stream. `words` includes `overlap_len`
/// words of trailing context from the previous chunk; `word_offset` points at
/// the first word (overlap included) in the source stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chunk {
    pub index: usize,
    pub words: Vec<String>,
    pub word_offset: usize,
    pub overlap_len: usize,
}

impl Chunk {
    pub fn text(&self) -> String {
        self.words.join(" ")
    }

    /// Words owned by this chunk, overlap stripped.
    pub fn primary_words(&self) -> &[String] {
        &self.words[self.overlap_len..]
    }
}

/// Retry policy for extractor calls: exponential backoff, then hard failure.
/// Silently skipped chunks would leak PHI, so partial results are never kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: usize,
    pub backoff_base_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            backoff_base_ms: 200,
        }
    }
}

impl RetryPolicy {
    pub fn backoff(&self, attempt: usize) -> Duration {
        Duration::from_millis(self.backoff_base_ms.saturating_mul(1 << attempt.min(16)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractionConfig {
    /// Chunk size in words.
    pub chunk_size_words: usize,
    /// Number of extraction passes per chunk.
    pub passes: usize,
    /// Trailing-context words carried over from the previous chunk so
    /// boundary-spanning entities are seen whole.
    pub overlap_words: usize,
    /// Entity-type vocabulary submitted with each request.
    pub entity_types: Vec<String>,
    pub retry: RetryPolicy,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        ExtractionConfig {
            chunk_size_words: 256,
            passes: 2,
            overlap_words: 16,
            entity_types: default_entity_types(),
            retry: RetryPolicy::default(),
        }
    }
}

impl ExtractionConfig {
    pub fn validate(&self) -> Result<(), ExtractionError> {
        if self.chunk_size_words < 1 {
            return Err(ExtractionError::InvalidConfig(
                "chunk_size_words must be >= 1".into(),
            ));
        }
        if self.passes < 1 {
            return Err(ExtractionError::InvalidConfig("passes must be >= 1".into()));
        }
        if self.overlap_words >= self.chunk_size_words {
            return Err(ExtractionError::InvalidConfig(
                "overlap_words must be < chunk_size_words".into(),
            ));
        }
        Ok(())
    }
}

/// The 33 entity types enabled by default.
pub fn default_entity_types() -> Vec<String> {
    [
        "ACCOUNT_NUMBER",
        "ADDRESS",
        "AGE",
        "BIOMETRIC_ID",
        "BIRTH_DATE_TIME",
        "CERTIFICATE_NUMBER",
        "COUNTRY",
        "DATE",
        "DEVICE_ID",
        "DIAGNOSTIC_LABS",
        "EMAIL",
        "FAX_NUMBER",
        "FIN",
        "GUID",
        "HEALTH_PLAN_ID",
        "HOSPITAL",
        "IP_ADDRESS",
        "LICENSE_NUMBER",
        "LOCATION",
        "MARITAL_STATUS",
        "MRN",
        "OCCUPATION",
        "ORGANIZATION",
        "PARENTHOOD",
        "PATIENT_ID",
        "PERSON",
        "PHARMACY",
        "SSN_OR_TAXPAYER",
        "STATE",
        "TELEPHONE_NUMBER",
        "URL",
        "VEHICLE_ID",
        "ZIP_CODE",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

/// Split `text` into ⌈W/ω⌉ primary chunks of at most `chunk_size_words`
/// words; every chunk after the first is prefixed with up to `overlap_words`
/// trailing words of the previous chunk.
pub fn chunk_text(text: &str, config: &ExtractionConfig) -> Vec<Chunk> {
    let words: Vec<String> = text.split_whitespace().map(str::to_string).collect();
    if words.is_empty() {
        return Vec::new();
    }
    let omega = config.chunk_size_words;
    let mut chunks = Vec::with_capacity(words.len().div_ceil(omega));
    let mut index = 0;
    let mut start = 0;
    while start < words.len() {
        let end = (start + omega).min(words.len());
        let overlap_len = config.overlap_words.min(start);
        chunks.push(Chunk {
            index,
            words: words[start - overlap_len..end].to_vec(),
            word_offset: start - overlap_len,
            overlap_len,
        });
        index += 1;
        start = end;
    }
    chunks
}

/// Mask every resolvable mention from `facts` in `text` with its
/// `[ENTITY_TYPE]` placeholder. Unresolvable mentions are left untouched
/// (and logged by the redaction layer).
pub fn mask_known(text: &str, facts: &FactDictionary) -> String {
    crate::redaction::redact(text, facts).redacted
}

fn extract_with_retry(
    extractor: &dyn Extractor,
    request: &ExtractionRequest,
    policy: &RetryPolicy,
    pass: usize,
    chunk: usize,
) -> Result<ExtractionResponse, ExtractionError> {
    let mut last_err = None;
    for attempt in 0..policy.max_attempts.max(1) {
        if attempt > 0 {
            std::thread::sleep(policy.backoff(attempt - 1));
        }
        match extractor.extract(request) {
            Ok(response) => return Ok(response),
            Err(err) => {
                log::warn!(
                    "extractor attempt {} failed on chunk {} of pass {}: {}",
                    attempt + 1,
                    chunk,
                    pass,
                    err
                );
                last_err = Some(err);
            }
        }
    }
    Err(ExtractionError::ExtractorFailure {
        pass,
        chunk,
        attempts: policy.max_attempts.max(1),
        source: last_err.unwrap_or(AgentError::Unavailable("no attempt made".into())),
    })
}

/// Run the multi-pass extraction loop and return the aggregated fact
/// dictionary.
///
/// Passes are sequential; pass `j + 1` masks each chunk with the cumulative
/// dictionary of pass `j` (across all chunks) before resubmitting it.
/// Returned mentions are validated: the entity type must be in the
/// configured vocabulary, the surface must occur in the hint, and the hint
/// must occur in the submitted chunk text; violations are dropped with a
/// warning.
pub fn run_autodeid(
    text: &str,
    config: &ExtractionConfig,
    extractor: &dyn Extractor,
) -> Result<FactDictionary, ExtractionError> {
    config.validate()?;
    let chunks = chunk_text(text, config);
    let vocab: HashSet<&str> = config.entity_types.iter().map(String::as_str).collect();
    let mut dict = FactDictionary::default();

    for pass in 1..=config.passes {
        // Snapshot so masking within one pass is uniform.
        let mask_with = dict.clone();
        for chunk in &chunks {
            let raw = chunk.text();
            let chunk_input = if pass > 1 {
                mask_known(&raw, &mask_with)
            } else {
                raw.clone()
            };
            let request = ExtractionRequest {
                chunk_text: chunk_input.clone(),
                entity_types: config.entity_types.clone(),
                pass_index: pass,
            };
            let response =
                extract_with_retry(extractor, &request, &config.retry, pass, chunk.index)?;
            for (entity_type, mentions) in response {
                if !vocab.contains(entity_type.as_str()) {
                    log::warn!(
                        "dropping {} mention(s) of unknown entity type `{}`",
                        mentions.len(),
                        entity_type
                    );
                    continue;
                }
                for payload in mentions {
                    let mention = EntityMention {
                        entity_type: entity_type.clone(),
                        surface: payload.surface,
                        context_hint: payload.context_hint,
                    };
                    let norm_hint = normalize(&mention.context_hint);
                    if !norm_hint.contains(&normalize(&mention.surface)) {
                        log::warn!(
                            "dropping a {} mention whose surface is not in its hint",
                            mention.entity_type
                        );
                        continue;
                    }
                    // The hint must point into text the extractor actually
                    // saw; check against the raw chunk so mentions of
                    // already-masked text also validate.
                    if !normalize(&raw).contains(&norm_hint)
                        && !normalize(&chunk_input).contains(&norm_hint)
                    {
                        log::warn!(
                            "dropping a {} mention whose hint is absent from its chunk",
                            mention.entity_type
                        );
                        continue;
                    }
                    dict.insert(mention);
                }
            }
        }
    }
    Ok(dict)
}
