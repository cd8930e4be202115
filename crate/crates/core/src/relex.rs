//! Consistent entity relexicalization.
//!
//! Mentions of the same real-world entity are clustered, a surrogate is
//! retrieved from the replacement index (or generated when retrieval misses
//! or fails validation), and every member of the cluster is rewritten to a
//! morphologically adjusted form of that one surrogate. New surrogates are
//! ingested into the index so the same entity gets the same replacement in
//! every later document of the domain.

use crate::agents::{AgentError, ClusterAgent, DecisionAgent, GenerationAgent};
use crate::extraction::{EntityMention, FactDictionary};
use crate::redaction::{splice, ResolvedSpan, SpanResolver, UnresolvedMention};
use crate::textnorm::normalize;
use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RelexError {
    #[error("entity clustering failed: {0}")]
    ClusterFailure(AgentError),
    #[error("replacement validation failed: {0}")]
    DecisionFailure(AgentError),
    #[error("replacement generation failed for a {entity_type} entity: {source}")]
    GenerationFailure {
        entity_type: String,
        source: AgentError,
    },
    #[error("generated surrogate for a {entity_type} entity violates the original's format pattern")]
    FormatMismatch { entity_type: String },
    #[error("generated surrogate for a {entity_type} entity equals the original")]
    IdentityReplacement { entity_type: String },
    #[error("replacement index unavailable: {0}")]
    IndexUnavailable(String),
}

/// Mentions judged to denote one real-world entity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityCluster {
    pub cluster_id: usize,
    pub entity_type: String,
    pub members: Vec<EntityMention>,
    /// Most specific member surface (longest, first on ties).
    pub canonical: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplacementQuery {
    pub canonical: String,
    pub entity_type: String,
    pub domain: String,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
}

/// Canonical entity mapped to its surrogate, with the embedding of the
/// original for similarity retrieval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplacementRecord {
    pub original_canonical: String,
    pub replacement: String,
    pub entity_type: String,
    pub domain: String,
    pub embedding: Vec<f32>,
    pub created_at: DateTime<Utc>,
}

/// Text to fixed-dimension vector, for replacement retrieval.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Vec<f32>;
}

/// Deterministic character-trigram hashing embedder (256 dimensions,
/// L2-normalized). Fully offline and reproducible; a sentence-embedding
/// service can replace it behind the same trait.
#[derive(Debug, Clone, Default)]
pub struct TrigramEmbedder;

pub const TRIGRAM_DIM: usize = 256;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

impl Embedder for TrigramEmbedder {
    fn dim(&self) -> usize {
        TRIGRAM_DIM
    }

    fn embed(&self, text: &str) -> Vec<f32> {
        let padded: Vec<char> = format!("\u{2}{}\u{3}", normalize(text)).chars().collect();
        let mut v = vec![0.0f32; TRIGRAM_DIM];
        if padded.len() < 3 {
            return v;
        }
        for tri in padded.windows(3) {
            let key: String = tri.iter().collect();
            v[(fnv1a(key.as_bytes()) % TRIGRAM_DIM as u64) as usize] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        if norm > 0.0 {
            for x in &mut v {
                *x /= norm;
            }
        }
        v
    }
}

pub fn cosine(a: &[f32], b: &[f32]) -> f32 {
    let dot: f32 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f32 = a.iter().map(|x| x * x).sum::<f32>().sqrt();
    let nb: f32 = b.iter().map(|x| x * x).sum::<f32>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Replacement store: similarity search with hard metadata filters.
pub trait RelexIndex: Send {
    fn ingest(&mut self, record: ReplacementRecord) -> Result<(), RelexError>;

    /// Top-k records matching the entity type and domain filters, best
    /// similarity first. Never returns records failing the filters.
    fn search(
        &self,
        embedding: &[f32],
        entity_type: &str,
        domain: &str,
        k: usize,
    ) -> Result<Vec<(f32, ReplacementRecord)>, RelexError>;
}

/// Exact nearest-neighbor index over the full record set, optionally
/// persisted as an append-only JSON-lines file.
#[derive(Default)]
pub struct InMemoryIndex {
    records: Vec<ReplacementRecord>,
    persist: Option<PathBuf>,
}

impl InMemoryIndex {
    pub fn new() -> Self {
        Self::default()
    }

    /// Open (or create) a persistent index backed by `path`.
    pub fn open(path: &Path) -> Result<Self, RelexError> {
        let mut records = Vec::new();
        match std::fs::read_to_string(path) {
            Ok(contents) => {
                for (lineno, line) in contents.lines().enumerate() {
                    if line.trim().is_empty() {
                        continue;
                    }
                    let record: ReplacementRecord = serde_json::from_str(line).map_err(|e| {
                        RelexError::IndexUnavailable(format!(
                            "{}:{}: {e}",
                            path.display(),
                            lineno + 1
                        ))
                    })?;
                    records.push(record);
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => {
                return Err(RelexError::IndexUnavailable(format!(
                    "{}: {e}",
                    path.display()
                )))
            }
        }
        Ok(InMemoryIndex {
            records,
            persist: Some(path.to_path_buf()),
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

impl RelexIndex for InMemoryIndex {
    fn ingest(&mut self, record: ReplacementRecord) -> Result<(), RelexError> {
        if let Some(path) = &self.persist {
            let line = serde_json::to_string(&record)
                .map_err(|e| RelexError::IndexUnavailable(e.to_string()))?;
            let mut file = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| RelexError::IndexUnavailable(format!("{}: {e}", path.display())))?;
            writeln!(file, "{line}")
                .map_err(|e| RelexError::IndexUnavailable(format!("{}: {e}", path.display())))?;
        }
        self.records.push(record);
        Ok(())
    }

    fn search(
        &self,
        embedding: &[f32],
        entity_type: &str,
        domain: &str,
        k: usize,
    ) -> Result<Vec<(f32, ReplacementRecord)>, RelexError> {
        let mut hits: Vec<(f32, ReplacementRecord)> = self
            .records
            .iter()
            .filter(|r| r.entity_type == entity_type && r.domain == domain)
            .map(|r| (cosine(embedding, &r.embedding), r.clone()))
            .collect();
        hits.sort_by(|a, b| b.0.total_cmp(&a.0));
        hits.truncate(k);
        Ok(hits)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RelexConfig {
    /// Minimum cosine similarity for accepting a retrieved replacement.
    pub similarity_threshold: f32,
    /// Words of context on each side of the first member mention shown to
    /// the validation agent.
    pub window_words: usize,
    /// Entity types whose surrogates must preserve the original's
    /// digit/letter class pattern exactly.
    pub pattern_typed: Vec<String>,
    /// Maximum magnitude, in days, of the per-domain date shift.
    pub date_shift_days: i64,
}

impl Default for RelexConfig {
    fn default() -> Self {
        RelexConfig {
            similarity_threshold: 0.85,
            window_words: 50,
            pattern_typed: [
                "TELEPHONE_NUMBER",
                "FAX_NUMBER",
                "SSN_OR_TAXPAYER",
                "GUID",
                "FIN",
                "MRN",
                "PATIENT_ID",
                "ACCOUNT_NUMBER",
                "LICENSE_NUMBER",
                "HEALTH_PLAN_ID",
                "CERTIFICATE_NUMBER",
                "DEVICE_ID",
                "VEHICLE_ID",
                "ZIP_CODE",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
            date_shift_days: 30,
        }
    }
}

/// Group the dictionary's mentions into entity clusters via the clustering
/// agent. The result is always a partition: proposals are applied where they
/// match, and every unassigned mention becomes a singleton cluster.
pub fn cluster_entities(
    text: &str,
    facts: &FactDictionary,
    agent: &dyn ClusterAgent,
) -> Result<Vec<EntityCluster>, RelexError> {
    let per_type: Vec<(String, Vec<String>)> = facts
        .entity_types()
        .map(|t| {
            (
                t.clone(),
                facts.mentions_of(t).iter().map(|m| m.surface.clone()).collect(),
            )
        })
        .collect();
    let proposals = agent
        .cluster(text, &per_type)
        .map_err(RelexError::ClusterFailure)?;

    let mut clusters: Vec<EntityCluster> = Vec::new();
    let mut assigned: Vec<(String, String)> = Vec::new(); // (type, norm surface)

    for proposal in &proposals {
        let mut members: Vec<EntityMention> = Vec::new();
        for surface in &proposal.member_surfaces {
            let key = (proposal.entity_type.clone(), normalize(surface));
            if assigned.contains(&key) {
                continue;
            }
            let matched: Vec<EntityMention> = facts
                .mentions_of(&proposal.entity_type)
                .iter()
                .filter(|m| normalize(&m.surface) == key.1)
                .cloned()
                .collect();
            if matched.is_empty() {
                log::warn!(
                    "cluster proposal references an unknown {} mention; ignored",
                    proposal.entity_type
                );
                continue;
            }
            assigned.push(key);
            members.extend(matched);
        }
        if !members.is_empty() {
            clusters.push(new_cluster(clusters.len(), proposal.entity_type.clone(), members));
        }
    }

    // Singletons for everything the agent did not place.
    for mention in facts.iter_mentions() {
        let key = (mention.entity_type.clone(), normalize(&mention.surface));
        if !assigned.contains(&key) {
            assigned.push(key);
            let members: Vec<EntityMention> = facts
                .mentions_of(&mention.entity_type)
                .iter()
                .filter(|m| normalize(&m.surface) == normalize(&mention.surface))
                .cloned()
                .collect();
            clusters.push(new_cluster(
                clusters.len(),
                mention.entity_type.clone(),
                members,
            ));
        }
    }
    Ok(clusters)
}

fn new_cluster(id: usize, entity_type: String, members: Vec<EntityMention>) -> EntityCluster {
    let canonical = members
        .iter()
        .map(|m| m.surface.clone())
        .max_by_key(|s| s.chars().count())
        .unwrap_or_default();
    EntityCluster {
        cluster_id: id,
        entity_type,
        members,
        canonical,
    }
}

/// Top-1 index hit passing the type and domain filters, if it clears the
/// similarity threshold.
pub fn retrieve_replacement(
    query: &ReplacementQuery,
    index: &dyn RelexIndex,
    embedder: &dyn Embedder,
    threshold: f32,
) -> Result<Option<ReplacementRecord>, RelexError> {
    let embedding = embedder.embed(&query.canonical);
    let hits = index.search(&embedding, &query.entity_type, &query.domain, 1)?;
    Ok(hits
        .into_iter()
        .next()
        .filter(|(sim, _)| *sim >= threshold)
        .map(|(_, record)| record))
}

/// Ask the decision agent whether `candidate` preserves the entity's role in
/// context. A candidate equal to the original is always invalid.
pub fn validate_replacement(
    query: &ReplacementQuery,
    candidate: &str,
    context_window: &str,
    decider: &dyn DecisionAgent,
) -> Result<bool, RelexError> {
    if normalize(candidate) == normalize(&query.canonical) {
        return Ok(false);
    }
    decider
        .validate(query, candidate, context_window)
        .map_err(RelexError::DecisionFailure)
}

/// Digit/letter class pattern: digits to `d`, letters to `a`, everything
/// else kept literally.
pub fn char_class_pattern(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_digit() {
                'd'
            } else if c.is_alphabetic() {
                'a'
            } else {
                c
            }
        })
        .collect()
}

/// Generate a fresh surrogate and wrap it into a record carrying the
/// original's embedding.
pub fn generate_replacement(
    query: &ReplacementQuery,
    context_window: &str,
    generator: &dyn GenerationAgent,
    embedder: &dyn Embedder,
    config: &RelexConfig,
) -> Result<ReplacementRecord, RelexError> {
    let replacement =
        generator
            .generate(query, context_window)
            .map_err(|e| RelexError::GenerationFailure {
                entity_type: query.entity_type.clone(),
                source: e,
            })?;
    if normalize(&replacement) == normalize(&query.canonical) {
        return Err(RelexError::IdentityReplacement {
            entity_type: query.entity_type.clone(),
        });
    }
    if config.pattern_typed.contains(&query.entity_type)
        && char_class_pattern(&replacement) != char_class_pattern(&query.canonical)
    {
        return Err(RelexError::FormatMismatch {
            entity_type: query.entity_type.clone(),
        });
    }
    Ok(ReplacementRecord {
        original_canonical: query.canonical.clone(),
        replacement,
        entity_type: query.entity_type.clone(),
        domain: query.domain.clone(),
        embedding: embedder.embed(&query.canonical),
        created_at: Utc::now(),
    })
}

const DATE_FORMATS: &[&str] = &["%m/%d/%Y", "%Y-%m-%d", "%m-%d-%Y", "%B %d, %Y", "%d %B %Y"];
const DATE_OFFSET_KEY: &str = "__date_offset__";
const DATE_OFFSET_TYPE: &str = "__DATE_OFFSET__";

fn parse_date(s: &str) -> Option<(NaiveDate, &'static str)> {
    DATE_FORMATS
        .iter()
        .find_map(|fmt| NaiveDate::parse_from_str(s.trim(), fmt).ok().map(|d| (d, *fmt)))
}

/// Deterministic per-domain day shift in [-date_shift_days, +date_shift_days],
/// never zero, persisted in the index so later documents of the domain shift
/// identically and chronology is preserved.
fn date_offset_days(
    domain: &str,
    index: &mut dyn RelexIndex,
    embedder: &dyn Embedder,
    config: &RelexConfig,
) -> Result<i64, RelexError> {
    let embedding = embedder.embed(DATE_OFFSET_KEY);
    if let Some((sim, record)) = index
        .search(&embedding, DATE_OFFSET_TYPE, domain, 1)?
        .into_iter()
        .next()
    {
        if sim > 0.999 {
            if let Ok(days) = record.replacement.parse::<i64>() {
                return Ok(days);
            }
        }
    }
    let span = 2 * config.date_shift_days.max(1);
    let mut days = (fnv1a(domain.as_bytes()) % span as u64) as i64 - config.date_shift_days;
    if days == 0 {
        days = 7;
    }
    index.ingest(ReplacementRecord {
        original_canonical: DATE_OFFSET_KEY.to_string(),
        replacement: days.to_string(),
        entity_type: DATE_OFFSET_TYPE.to_string(),
        domain: domain.to_string(),
        embedding,
        created_at: Utc::now(),
    })?;
    Ok(days)
}

/// Map a member surface onto the cluster surrogate.
///
/// When the member is a prefix or suffix of the canonical's tokens (for
/// example the bare family name of a full name), the aligned tokens of the
/// surrogate are used; otherwise the full surrogate stands in.
pub fn adjust_member(member: &str, canonical: &str, surrogate: &str) -> String {
    let member_tokens: Vec<String> = normalize(member).split(' ').map(String::from).collect();
    let canon_tokens: Vec<String> = normalize(canonical).split(' ').map(String::from).collect();
    let surrogate_tokens: Vec<&str> = surrogate.split_whitespace().collect();
    let k = member_tokens.len();
    if k == 0 || k >= canon_tokens.len() || surrogate_tokens.len() < k {
        return surrogate.to_string();
    }
    let window = canon_tokens
        .windows(k)
        .position(|w| w == member_tokens.as_slice());
    match window {
        Some(pos) if pos + k == canon_tokens.len() => {
            surrogate_tokens[surrogate_tokens.len() - k..].join(" ")
        }
        Some(0) => surrogate_tokens[..k].join(" "),
        _ => surrogate.to_string(),
    }
}

fn context_window(text: &str, span: Option<&ResolvedSpan>, window_words: usize) -> String {
    let span = match span {
        Some(s) => s,
        None => return text.to_string(),
    };
    let chars: Vec<char> = text.chars().collect();
    let before: String = chars[..span.start].iter().collect();
    let after: String = chars[span.end.min(chars.len())..].iter().collect();
    let lead: Vec<&str> = before.split_whitespace().collect();
    let mut parts: Vec<String> = lead
        .iter()
        .skip(lead.len().saturating_sub(window_words))
        .map(|s| s.to_string())
        .collect();
    parts.push(chars[span.start..span.end].iter().collect());
    parts.extend(after.split_whitespace().take(window_words).map(String::from));
    parts.join(" ")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterReplacement {
    pub cluster_id: usize,
    pub entity_type: String,
    pub canonical: String,
    pub replacement: String,
    /// Whether the surrogate came from the index or was freshly generated.
    pub retrieved: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RelexOutcome {
    pub text: String,
    pub replacements: Vec<ClusterReplacement>,
    /// Spans actually rewritten, with the member-level replacement applied.
    pub spans: Vec<(ResolvedSpan, String)>,
    pub failures: Vec<UnresolvedMention>,
}

/// Replace every cluster in `text` with a consistent surrogate, consulting
/// and updating the replacement index.
#[allow(clippy::too_many_arguments)]
pub fn relexicalize(
    text: &str,
    facts: &FactDictionary,
    domain: &str,
    index: &mut dyn RelexIndex,
    cluster_agent: &dyn ClusterAgent,
    decider: &dyn DecisionAgent,
    generator: &dyn GenerationAgent,
    embedder: &dyn Embedder,
    config: &RelexConfig,
) -> Result<RelexOutcome, RelexError> {
    let clusters = cluster_entities(text, facts, cluster_agent)?;
    let mut resolver = SpanResolver::new(text);
    let mut outcome = RelexOutcome::default();
    // (span, member replacement, resolution order)
    let mut pending: Vec<(ResolvedSpan, String)> = Vec::new();

    for cluster in &clusters {
        // Resolve member spans first; the first resolvable member anchors
        // the validation context window.
        let mut member_spans: Vec<(ResolvedSpan, &EntityMention)> = Vec::new();
        for member in &cluster.members {
            match resolver.resolve(member) {
                Ok(span) => member_spans.push((span, member)),
                Err(reason) => {
                    log::warn!(
                        "could not resolve a {} cluster member: {}",
                        cluster.entity_type,
                        reason
                    );
                    outcome.failures.push(UnresolvedMention {
                        mention: member.clone(),
                        reason,
                    });
                }
            }
        }
        if member_spans.is_empty() {
            continue;
        }

        let query = ReplacementQuery {
            canonical: cluster.canonical.clone(),
            entity_type: cluster.entity_type.clone(),
            domain: domain.to_string(),
            attributes: BTreeMap::new(),
        };
        let window = context_window(
            text,
            member_spans.first().map(|(s, _)| s),
            config.window_words,
        );

        let (replacement, retrieved) = if cluster.entity_type.contains("DATE") {
            match parse_date(&cluster.canonical) {
                Some((date, fmt)) => {
                    let days = date_offset_days(domain, index, embedder, config)?;
                    let shifted = date + chrono::Duration::days(days);
                    (shifted.format(fmt).to_string(), false)
                }
                None => resolve_surrogate(&query, &window, index, decider, generator, embedder, config)?,
            }
        } else {
            resolve_surrogate(&query, &window, index, decider, generator, embedder, config)?
        };

        for (span, member) in member_spans {
            let adjusted = adjust_member(&member.surface, &cluster.canonical, &replacement);
            pending.push((span, adjusted));
        }
        outcome.replacements.push(ClusterReplacement {
            cluster_id: cluster.cluster_id,
            entity_type: cluster.entity_type.clone(),
            canonical: cluster.canonical.clone(),
            replacement,
            retrieved,
        });
    }

    // Same overlap policy as redaction: longer spans win, earlier
    // resolution breaks ties.
    let mut order: Vec<usize> = (0..pending.len()).collect();
    order.sort_by(|&a, &b| {
        pending[b]
            .0
            .len()
            .cmp(&pending[a].0.len())
            .then(a.cmp(&b))
    });
    let mut kept: Vec<(ResolvedSpan, String)> = Vec::new();
    for i in order {
        let (span, replacement) = &pending[i];
        if kept.iter().any(|(k, _)| k.overlaps(span)) {
            log::warn!(
                "dropping a {} replacement overlapped by a longer or earlier span",
                span.entity_type
            );
            continue;
        }
        kept.push((span.clone(), replacement.clone()));
    }
    kept.sort_by_key(|(s, _)| s.start);

    let spans_only: Vec<ResolvedSpan> = kept.iter().map(|(s, _)| s.clone()).collect();
    let lookup: BTreeMap<(usize, usize), &str> = kept
        .iter()
        .map(|(s, r)| ((s.start, s.end), r.as_str()))
        .collect();
    outcome.text = splice(text, &spans_only, |span| {
        lookup[&(span.start, span.end)].to_string()
    });
    outcome.spans = kept;
    Ok(outcome)
}

fn resolve_surrogate(
    query: &ReplacementQuery,
    window: &str,
    index: &mut dyn RelexIndex,
    decider: &dyn DecisionAgent,
    generator: &dyn GenerationAgent,
    embedder: &dyn Embedder,
    config: &RelexConfig,
) -> Result<(String, bool), RelexError> {
    if let Some(record) =
        retrieve_replacement(query, index, embedder, config.similarity_threshold)?
    {
        if validate_replacement(query, &record.replacement, window, decider)? {
            return Ok((record.replacement, true));
        }
    }
    let record = generate_replacement(query, window, generator, embedder, config)?;
    let replacement = record.replacement.clone();
    index.ingest(record)?;
    Ok((replacement, false))
}

/// Fraction of original canonical entities whose surrogate is identical in
/// every document where they appear. Each document is a list of
/// (original, replacement) pairs; an empty corpus scores 1.0.
pub fn replacement_consistency_score(documents: &[Vec<(String, String)>]) -> f64 {
    let mut surrogates: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for doc in documents {
        for (original, replacement) in doc {
            surrogates
                .entry(normalize(original))
                .or_default()
                .push(replacement.clone());
        }
    }
    if surrogates.is_empty() {
        return 1.0;
    }
    let consistent = surrogates
        .values()
        .filter(|reps| reps.windows(2).all(|w| w[0] == w[1]))
        .count();
    consistent as f64 / surrogates.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::scripted::{Script, ScriptedAgents};

    fn mention(entity_type: &str, surface: &str, hint: &str) -> EntityMention {
        EntityMention {
            entity_type: entity_type.into(),
            surface: surface.into(),
            context_hint: hint.into(),
        }
    }

    fn record(original: &str, replacement: &str, entity_type: &str, domain: &str) -> ReplacementRecord {
        ReplacementRecord {
            original_canonical: original.into(),
            replacement: replacement.into(),
            entity_type: entity_type.into(),
            domain: domain.into(),
            embedding: TrigramEmbedder.embed(original),
            created_at: Utc::now(),
        }
    }

    #[test]
    fn embedder_is_deterministic_and_normalized() {
        let e = TrigramEmbedder;
        let a = e.embed("John Doe");
        assert_eq!(a, e.embed("john   doe"));
        let norm: f32 = a.iter().map(|x| x * x).sum::<f32>().sqrt();
        assert!((norm - 1.0).abs() < 1e-5);
        assert!(cosine(&a, &e.embed("John Doe")) > 0.999);
        assert!(cosine(&a, &e.embed("completely different")) < 0.85);
    }

    #[test]
    fn index_round_trip_and_filters() {
        let mut index = InMemoryIndex::new();
        assert!(retrieve_replacement(
            &query("John Doe", "PERSON", "d"),
            &index,
            &TrigramEmbedder,
            0.85
        )
        .unwrap()
        .is_none());

        index
            .ingest(record("John Doe", "Michael Johnson", "PERSON", "d"))
            .unwrap();
        let hit = retrieve_replacement(&query("John Doe", "PERSON", "d"), &index, &TrigramEmbedder, 0.85)
            .unwrap()
            .unwrap();
        assert_eq!(hit.replacement, "Michael Johnson");
        // Filters are hard: other domain or type finds nothing.
        assert!(retrieve_replacement(&query("John Doe", "PERSON", "other"), &index, &TrigramEmbedder, 0.85)
            .unwrap()
            .is_none());
        assert!(retrieve_replacement(&query("John Doe", "ORGANIZATION", "d"), &index, &TrigramEmbedder, 0.85)
            .unwrap()
            .is_none());
    }

    #[test]
    fn index_persists_append_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.jsonl");
        {
            let mut index = InMemoryIndex::open(&path).unwrap();
            index.ingest(record("John Doe", "Michael Johnson", "PERSON", "d")).unwrap();
            index.ingest(record("Acme", "Globex", "ORGANIZATION", "d")).unwrap();
        }
        let reopened = InMemoryIndex::open(&path).unwrap();
        assert_eq!(reopened.len(), 2);
        let hit = retrieve_replacement(&query("John Doe", "PERSON", "d"), &reopened, &TrigramEmbedder, 0.85)
            .unwrap()
            .unwrap();
        assert_eq!(hit.replacement, "Michael Johnson");
    }

    fn query(canonical: &str, entity_type: &str, domain: &str) -> ReplacementQuery {
        ReplacementQuery {
            canonical: canonical.into(),
            entity_type: entity_type.into(),
            domain: domain.into(),
            attributes: BTreeMap::new(),
        }
    }

    #[test]
    fn clustering_groups_coreferent_mentions() {
        let mut facts = FactDictionary::default();
        facts.insert(mention("PERSON", "Dr. Adam Wilson", "by Dr. Adam Wilson today"));
        facts.insert(mention("PERSON", "Wilson", "Wilson reviewed the"));
        let agents = ScriptedAgents::new(Script::default());
        let clusters = cluster_entities("", &facts, &agents).unwrap();
        assert_eq!(clusters.len(), 1);
        assert_eq!(clusters[0].canonical, "Dr. Adam Wilson");
        assert_eq!(clusters[0].members.len(), 2);
    }

    #[test]
    fn single_mention_is_a_singleton_cluster() {
        let mut facts = FactDictionary::default();
        facts.insert(mention("AGE", "53", "aged 53 was"));
        let agents = ScriptedAgents::new(Script::default());
        let clusters = cluster_entities("", &facts, &agents).unwrap();
        assert_eq!(clusters.len(), 1);
        assert_eq!(clusters[0].canonical, "53");
    }

    #[test]
    fn scripted_distinct_decision_splits_clusters() {
        let mut facts = FactDictionary::default();
        facts.insert(mention("PERSON", "John Doe", "John Doe, a"));
        facts.insert(mention("PERSON", "Jane Doe", "wife, Jane Doe,"));
        let script: Script = serde_json::from_value(serde_json::json!({
            "clusters": [
                {"entity_type": "PERSON", "member_surfaces": ["John Doe"]},
                {"entity_type": "PERSON", "member_surfaces": ["Jane Doe"]}
            ]
        }))
        .unwrap();
        let clusters = cluster_entities("", &facts, &ScriptedAgents::new(script)).unwrap();
        assert_eq!(clusters.len(), 2);
    }

    #[test]
    fn validation_rejects_identity_and_scripted_rejections() {
        let script: Script = serde_json::from_value(serde_json::json!({
            "decisions": {"default": true, "reject": [["Dr. Emily Carter", "Alice the teacher"]]}
        }))
        .unwrap();
        let agents = ScriptedAgents::new(script);
        let q = query("Dr. Emily Carter", "PERSON", "d");
        assert!(!validate_replacement(&q, "Alice the teacher", "", &agents).unwrap());
        assert!(validate_replacement(&q, "Dr. Kevin Chang", "", &agents).unwrap());
        assert!(!validate_replacement(&q, "dr. emily  carter", "", &agents).unwrap());
    }

    #[test]
    fn generation_preserves_digit_letter_pattern() {
        assert_eq!(char_class_pattern("(650) 555-1234"), "(ddd) ddd-dddd");
        assert_eq!(char_class_pattern("987-65-4321"), "ddd-dd-dddd");
        assert_eq!(char_class_pattern("INS-789456123"), "aaa-ddddddddd");

        let script: Script = serde_json::from_value(serde_json::json!({
            "generations": {
                "TELEPHONE_NUMBER|(650) 555-1234": "(123) 274-0846",
                "SSN_OR_TAXPAYER|987-65-4321": "123-456789",
                "OCCUPATION|software engineer": "data scientist"
            }
        }))
        .unwrap();
        let agents = ScriptedAgents::new(script);
        let config = RelexConfig::default();

        let ok = generate_replacement(
            &query("(650) 555-1234", "TELEPHONE_NUMBER", "d"),
            "",
            &agents,
            &TrigramEmbedder,
            &config,
        )
        .unwrap();
        assert_eq!(ok.replacement, "(123) 274-0846");

        // Pattern-typed surrogate with the wrong shape is rejected.
        assert!(matches!(
            generate_replacement(
                &query("987-65-4321", "SSN_OR_TAXPAYER", "d"),
                "",
                &agents,
                &TrigramEmbedder,
                &config,
            ),
            Err(RelexError::FormatMismatch { .. })
        ));

        // Free-form types are not pattern-checked.
        let occ = generate_replacement(
            &query("software engineer", "OCCUPATION", "d"),
            "",
            &agents,
            &TrigramEmbedder,
            &config,
        )
        .unwrap();
        assert_eq!(occ.replacement, "data scientist");
    }

    #[test]
    fn member_adjustment_aligns_name_parts() {
        assert_eq!(adjust_member("Wilson", "Dr. Adam Wilson", "Dr. Kevin Chang"), "Chang");
        assert_eq!(adjust_member("Dr. Adam", "Dr. Adam Wilson", "Dr. Kevin Chang"), "Dr. Kevin");
        assert_eq!(
            adjust_member("Dr. Adam Wilson", "Dr. Adam Wilson", "Dr. Kevin Chang"),
            "Dr. Kevin Chang"
        );
        // No alignment: full surrogate.
        assert_eq!(adjust_member("Adam", "Dr. Adam Wilson", "Dr. Kevin Chang"), "Dr. Kevin Chang");
    }

    #[test]
    fn relexicalize_keeps_cluster_members_consistent() {
        let text = "Dr. Adam Wilson reviewed the file. Wilson signed off.";
        let mut facts = FactDictionary::default();
        facts.insert(mention("PERSON", "Dr. Adam Wilson", "Dr. Adam Wilson reviewed"));
        facts.insert(mention("PERSON", "Wilson", "file. Wilson signed"));
        let script: Script = serde_json::from_value(serde_json::json!({
            "generations": {"PERSON|Dr. Adam Wilson": "Dr. Kevin Chang"}
        }))
        .unwrap();
        let agents = ScriptedAgents::new(script);
        let mut index = InMemoryIndex::new();
        let out = relexicalize(
            text,
            &facts,
            "d",
            &mut index,
            &agents,
            &agents,
            &agents,
            &TrigramEmbedder,
            &RelexConfig::default(),
        )
        .unwrap();
        assert_eq!(out.text, "Dr. Kevin Chang reviewed the file. Chang signed off.");
        assert_eq!(index.len(), 1);
    }

    #[test]
    fn relexicalize_empty_dictionary_is_identity() {
        let agents = ScriptedAgents::new(Script::default());
        let mut index = InMemoryIndex::new();
        let out = relexicalize(
            "nothing here",
            &FactDictionary::default(),
            "d",
            &mut index,
            &agents,
            &agents,
            &agents,
            &TrigramEmbedder,
            &RelexConfig::default(),
        )
        .unwrap();
        assert_eq!(out.text, "nothing here");
    }

    #[test]
    fn sequential_documents_share_surrogates_via_the_index() {
        let script: Script = serde_json::from_value(serde_json::json!({
            "generations": {"PERSON|John Doe": "Michael Johnson"}
        }))
        .unwrap();
        let agents = ScriptedAgents::new(script);
        let mut index = InMemoryIndex::new();
        let mut outputs = Vec::new();
        for text in [
            "John Doe presented with pain.",
            "Follow-up for John Doe went well.",
        ] {
            let mut facts = FactDictionary::default();
            facts.insert(mention("PERSON", "John Doe", "John Doe"));
            let out = relexicalize(
                text,
                &facts,
                "d",
                &mut index,
                &agents,
                &agents,
                &agents,
                &TrigramEmbedder,
                &RelexConfig::default(),
            )
            .unwrap();
            outputs.push(out);
        }
        assert_eq!(outputs[0].text, "Michael Johnson presented with pain.");
        assert_eq!(outputs[1].text, "Follow-up for Michael Johnson went well.");
        // Only the first document generated; the second retrieved.
        assert!(!outputs[0].replacements[0].retrieved);
        assert!(outputs[1].replacements[0].retrieved);
        assert_eq!(index.len(), 1);
    }

    #[test]
    fn date_clusters_shift_consistently_within_a_domain() {
        let agents = ScriptedAgents::new(Script::default());
        let mut index = InMemoryIndex::new();
        let config = RelexConfig::default();
        let mut texts = Vec::new();
        for text in ["Seen on 03/16/2025 here.", "Back on 03/22/2025 again."] {
            let mut facts = FactDictionary::default();
            let date = if text.contains("03/16") { "03/16/2025" } else { "03/22/2025" };
            facts.insert(mention("DATE", date, text));
            let out = relexicalize(
                text, &facts, "d", &mut index, &agents, &agents, &agents,
                &TrigramEmbedder, &config,
            )
            .unwrap();
            texts.push(out.replacements[0].replacement.clone());
        }
        let d1 = NaiveDate::parse_from_str(&texts[0], "%m/%d/%Y").unwrap();
        let d2 = NaiveDate::parse_from_str(&texts[1], "%m/%d/%Y").unwrap();
        let base1 = NaiveDate::from_ymd_opt(2025, 3, 16).unwrap();
        let base2 = NaiveDate::from_ymd_opt(2025, 3, 22).unwrap();
        assert_eq!(d1 - base1, d2 - base2); // same shift, chronology preserved
        let shift = (d1 - base1).num_days();
        assert!(shift != 0 && shift.abs() <= 30);
    }

    #[test]
    fn consistency_score_counts_uniformly_replaced_entities() {
        assert_eq!(replacement_consistency_score(&[]), 1.0);
        let docs = vec![
            vec![("John Doe".to_string(), "Michael Johnson".to_string())],
            vec![("John Doe".to_string(), "Michael Johnson".to_string())],
        ];
        assert_eq!(replacement_consistency_score(&docs), 1.0);
        // One entity consistent, one split across two surrogates.
        let docs = vec![
            vec![
                ("John Doe".to_string(), "Michael Johnson".to_string()),
                ("Acme".to_string(), "Globex".to_string()),
            ],
            vec![
                ("John Doe".to_string(), "Robert Fields".to_string()),
                ("Acme".to_string(), "Globex".to_string()),
            ],
        ];
        assert_eq!(replacement_consistency_score(&docs), 0.5);
    }
}
