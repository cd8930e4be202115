//! Model-backed pipeline steps behind common traits.
//!
//! Every step that a production deployment delegates to an LLM — entity
//! extraction, coreference clustering, replacement validation, replacement
//! generation, and audio-gap classification — is a trait here. Backends are
//! registered by name in an [`AgentRegistry`] and selected at runtime from
//! configuration; the built-in `scripted` backend replays canned responses
//! from a script file so whole pipeline runs are deterministic and offline.

use crate::extraction::{ExtractionRequest, ExtractionResponse, MentionPayload};
use crate::relex::ReplacementQuery;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AgentError {
    #[error("agent request timed out")]
    Timeout,
    #[error("agent authentication failed")]
    AuthFailure,
    #[error("agent returned a malformed response: {0}")]
    MalformedResponse(String),
    #[error("agent unavailable: {0}")]
    Unavailable(String),
    #[error("scripted agent has no response for this request: {0}")]
    ScriptMiss(String),
    #[error("agent failure: {0}")]
    Failed(String),
}

/// Entity extraction over one chunk (the prediction model of the multi-pass
/// loop).
pub trait Extractor: Send + Sync {
    fn extract(&self, request: &ExtractionRequest) -> Result<ExtractionResponse, AgentError>;
}

/// Proposed grouping of same-entity mentions, identified by surface within
/// an entity type.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterProposal {
    pub entity_type: String,
    pub member_surfaces: Vec<String>,
}

/// Coreference clustering: group the dictionary's mentions by real-world
/// entity, given the document for context.
pub trait ClusterAgent: Send + Sync {
    fn cluster(
        &self,
        text: &str,
        mentions: &[(String, Vec<String>)],
    ) -> Result<Vec<ClusterProposal>, AgentError>;
}

/// Judge whether a candidate replacement preserves the original entity's
/// role in its context window.
pub trait DecisionAgent: Send + Sync {
    fn validate(
        &self,
        query: &ReplacementQuery,
        candidate: &str,
        context_window: &str,
    ) -> Result<bool, AgentError>;
}

/// Produce a fresh surrogate for an entity with no valid retrieved
/// replacement.
pub trait GenerationAgent: Send + Sync {
    fn generate(&self, query: &ReplacementQuery, context_window: &str)
        -> Result<String, AgentError>;
}

/// Classify unrecognized voiced gaps in a marked-up transcript as PHI or
/// not. Returns verdicts keyed by the gap marker text; missing markers are
/// treated as PHI by the caller (fail-closed).
pub trait GapClassifier: Send + Sync {
    fn classify(
        &self,
        marked_transcript: &str,
        markers: &[String],
    ) -> Result<BTreeMap<String, bool>, AgentError>;
}

/// One backend's realization of every agent role.
#[derive(Clone)]
pub struct AgentSet {
    pub extractor: Arc<dyn Extractor>,
    pub cluster: Arc<dyn ClusterAgent>,
    pub decision: Arc<dyn DecisionAgent>,
    pub generator: Arc<dyn GenerationAgent>,
    pub classifier: Arc<dyn GapClassifier>,
}

/// Builds an [`AgentSet`] from backend-specific settings.
pub trait AgentFactory: Send + Sync {
    fn build(&self, settings: &serde_json::Value) -> Result<AgentSet, AgentError>;
}

/// Name-keyed registry of agent backends.
pub struct AgentRegistry {
    factories: BTreeMap<String, Box<dyn AgentFactory>>,
}

impl AgentRegistry {
    /// Registry with the built-in `scripted` backend. Callers register
    /// additional backends (e.g. a remote HTTP transport) on top.
    pub fn builtin() -> Self {
        let mut registry = AgentRegistry {
            factories: BTreeMap::new(),
        };
        registry.register("scripted", Box::new(scripted::ScriptedFactory));
        registry
    }

    pub fn register(&mut self, name: &str, factory: Box<dyn AgentFactory>) {
        self.factories.insert(name.to_string(), factory);
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn build(&self, name: &str, settings: &serde_json::Value) -> Result<AgentSet, AgentError> {
        let factory = self.factories.get(name).ok_or_else(|| {
            AgentError::Unavailable(format!(
                "unknown agent backend `{name}` (available: {})",
                self.names().join(", ")
            ))
        })?;
        factory.build(settings)
    }
}

pub mod scripted {
    //! Deterministic canned-response agents, driven by a script document.

    use super::*;
    use crate::textnorm::normalize;

    /// Canned responses for one pipeline run.
    #[derive(Debug, Clone, Default, Serialize, Deserialize)]
    #[serde(default)]
    pub struct Script {
        /// Extraction entries matched by pass and/or a chunk-text substring;
        /// all matching entries are unioned. Mentions whose hint is absent
        /// from the submitted chunk are dropped downstream, so one canned
        /// document-level response can serve several chunks.
        pub extraction: Vec<ExtractionEntry>,
        /// Explicit coreference groups; unlisted mentions become singletons.
        /// When empty, a token-subset heuristic groups mentions instead.
        pub clusters: Vec<ClusterProposal>,
        pub decisions: Decisions,
        /// Surrogates keyed by `"TYPE|canonical"` (or bare canonical).
        pub generations: BTreeMap<String, String>,
        /// Gap verdicts keyed by the marker's interval text, e.g.
        /// `"00:02.85 - 00:02.95"`; `true` means PHI. Missing markers are
        /// treated as PHI by the audio pipeline.
        pub gap_verdicts: BTreeMap<String, bool>,
        pub fail: FailFlags,
    }

    #[derive(Debug, Clone, Default, Serialize, Deserialize)]
    #[serde(default)]
    pub struct ExtractionEntry {
        /// Restrict to one pass; `null` matches every pass.
        pub pass: Option<usize>,
        /// Restrict to chunks containing this substring.
        pub contains: Option<String>,
        pub entities: BTreeMap<String, Vec<MentionPayload>>,
    }

    #[derive(Debug, Clone, Serialize, Deserialize)]
    #[serde(default)]
    pub struct Decisions {
        pub default: bool,
        /// (canonical, candidate) pairs to reject.
        pub reject: Vec<(String, String)>,
    }

    impl Default for Decisions {
        fn default() -> Self {
            Decisions {
                default: true,
                reject: Vec::new(),
            }
        }
    }

    /// Simulated failures, for fail-closed tests.
    #[derive(Debug, Clone, Default, Serialize, Deserialize)]
    #[serde(default)]
    pub struct FailFlags {
        pub extractor: bool,
        pub cluster: bool,
        pub decision: bool,
        pub generator: bool,
        pub classifier: bool,
    }

    pub struct ScriptedAgents {
        script: Script,
    }

    impl ScriptedAgents {
        pub fn new(script: Script) -> Self {
            ScriptedAgents { script }
        }

        pub fn into_set(self) -> AgentSet {
            let shared = Arc::new(self);
            AgentSet {
                extractor: shared.clone(),
                cluster: shared.clone(),
                decision: shared.clone(),
                generator: shared.clone(),
                classifier: shared,
            }
        }
    }

    impl Extractor for ScriptedAgents {
        fn extract(&self, request: &ExtractionRequest) -> Result<ExtractionResponse, AgentError> {
            if self.script.fail.extractor {
                return Err(AgentError::Unavailable("scripted extractor failure".into()));
            }
            let mut response = ExtractionResponse::new();
            for entry in &self.script.extraction {
                if entry.pass.is_some_and(|p| p != request.pass_index) {
                    continue;
                }
                if entry
                    .contains
                    .as_deref()
                    .is_some_and(|needle| !request.chunk_text.contains(needle))
                {
                    continue;
                }
                for (entity_type, mentions) in &entry.entities {
                    response
                        .entry(entity_type.clone())
                        .or_default()
                        .extend(mentions.iter().cloned());
                }
            }
            Ok(response)
        }
    }

    fn tokens(s: &str) -> Vec<String> {
        normalize(s)
            .split(' ')
            .map(|t| t.trim_matches(|c: char| c.is_ascii_punctuation()).to_string())
            .filter(|t| !t.is_empty())
            .collect()
    }

    /// Token-subset coreference: "Wilson" groups with "Dr. Adam Wilson",
    /// but "John Doe" and "Jane Doe" stay apart.
    fn subset_coreferent(a: &str, b: &str) -> bool {
        let (ta, tb) = (tokens(a), tokens(b));
        let (small, large) = if ta.len() <= tb.len() { (&ta, &tb) } else { (&tb, &ta) };
        !small.is_empty() && small.iter().all(|t| large.contains(t))
    }

    impl ClusterAgent for ScriptedAgents {
        fn cluster(
            &self,
            _text: &str,
            mentions: &[(String, Vec<String>)],
        ) -> Result<Vec<ClusterProposal>, AgentError> {
            if self.script.fail.cluster {
                return Err(AgentError::Unavailable("scripted cluster failure".into()));
            }
            if !self.script.clusters.is_empty() {
                return Ok(self.script.clusters.clone());
            }
            let mut proposals = Vec::new();
            for (entity_type, surfaces) in mentions {
                let mut groups: Vec<Vec<String>> = Vec::new();
                for surface in surfaces {
                    match groups
                        .iter_mut()
                        .find(|g| g.iter().any(|m| subset_coreferent(m, surface)))
                    {
                        Some(group) => group.push(surface.clone()),
                        None => groups.push(vec![surface.clone()]),
                    }
                }
                for group in groups {
                    proposals.push(ClusterProposal {
                        entity_type: entity_type.clone(),
                        member_surfaces: group,
                    });
                }
            }
            Ok(proposals)
        }
    }

    impl DecisionAgent for ScriptedAgents {
        fn validate(
            &self,
            query: &ReplacementQuery,
            candidate: &str,
            _context_window: &str,
        ) -> Result<bool, AgentError> {
            if self.script.fail.decision {
                return Err(AgentError::Unavailable("scripted decision failure".into()));
            }
            let rejected = self
                .script
                .decisions
                .reject
                .iter()
                .any(|(c, r)| c == &query.canonical && r == candidate);
            Ok(!rejected && self.script.decisions.default)
        }
    }

    impl GenerationAgent for ScriptedAgents {
        fn generate(
            &self,
            query: &ReplacementQuery,
            _context_window: &str,
        ) -> Result<String, AgentError> {
            if self.script.fail.generator {
                return Err(AgentError::Unavailable("scripted generator failure".into()));
            }
            let typed_key = format!("{}|{}", query.entity_type, query.canonical);
            self.script
                .generations
                .get(&typed_key)
                .or_else(|| self.script.generations.get(&query.canonical))
                .cloned()
                .ok_or_else(|| {
                    AgentError::ScriptMiss(format!("no generation for a {} entity", query.entity_type))
                })
        }
    }

    impl GapClassifier for ScriptedAgents {
        fn classify(
            &self,
            _marked_transcript: &str,
            markers: &[String],
        ) -> Result<BTreeMap<String, bool>, AgentError> {
            if self.script.fail.classifier {
                return Err(AgentError::Unavailable("scripted classifier failure".into()));
            }
            Ok(markers
                .iter()
                .filter_map(|m| {
                    // Keys may be the full marker or just its interval text.
                    let inner = m
                        .strip_prefix("<human_timestamp_(")
                        .and_then(|rest| rest.strip_suffix(")>"))
                        .unwrap_or(m);
                    self.script
                        .gap_verdicts
                        .get(m)
                        .or_else(|| self.script.gap_verdicts.get(inner))
                        .map(|v| (m.clone(), *v))
                })
                .collect())
        }
    }

    pub struct ScriptedFactory;

    /// Settings: `{"script": {...}}` inline or `{"script_path": "file.json"}`.
    impl AgentFactory for ScriptedFactory {
        fn build(&self, settings: &serde_json::Value) -> Result<AgentSet, AgentError> {
            let script: Script = if let Some(inline) = settings.get("script") {
                serde_json::from_value(inline.clone())
                    .map_err(|e| AgentError::MalformedResponse(format!("inline script: {e}")))?
            } else if let Some(path) = settings.get("script_path").and_then(|p| p.as_str()) {
                let raw = std::fs::read_to_string(path)
                    .map_err(|e| AgentError::Unavailable(format!("script file `{path}`: {e}")))?;
                serde_json::from_str(&raw)
                    .map_err(|e| AgentError::MalformedResponse(format!("script file `{path}`: {e}")))?
            } else {
                Script::default()
            };
            Ok(ScriptedAgents::new(script).into_set())
        }
    }
}
