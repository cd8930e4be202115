//! Context-aware span resolution and placeholder rewriting.
//!
//! Extracted mentions carry a context hint (surrounding words) instead of
//! character offsets. Resolution locates the hint in the document, then the
//! surface inside that window, which keeps identical strings in different
//! contexts apart: in "The patient is 76 years old and takes 76 mg of
//! aspirin daily." only the first "76" resolves for the hint "76 years old".
//!
//! All offsets are character offsets into the original document. Matching is
//! case-insensitive with whitespace runs collapsed; the original text outside
//! resolved spans is never altered.

use crate::extraction::{EntityMention, FactDictionary};
use crate::textnorm::{normalize, NormalizedText};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

// Error text intentionally omits surfaces and hints; they are PHI.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum ResolveError {
    #[error("context hint for a {0} mention was not found in the text")]
    HintNotFound(String),
    #[error("surface of a {0} mention does not occur inside its hint window")]
    SurfaceNotInHint(String),
}

/// A mention pinned to a unique character range of the document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedSpan {
    /// Character offset, inclusive.
    pub start: usize,
    /// Character offset, exclusive.
    pub end: usize,
    pub entity_type: String,
    pub surface: String,
}

impl ResolvedSpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn overlaps(&self, other: &ResolvedSpan) -> bool {
        self.start < other.end && other.start < self.end
    }
}

/// Resolves mentions against one document, consuming hint windows left to
/// right so repeated hints land on successive occurrences.
pub struct SpanResolver {
    nt: NormalizedText,
    /// (norm hint, norm surface, entity type) -> next window index to use.
    consumed: HashMap<(String, String, String), usize>,
}

impl SpanResolver {
    pub fn new(text: &str) -> Self {
        SpanResolver {
            nt: NormalizedText::new(text),
            consumed: HashMap::new(),
        }
    }

    pub fn resolve(&mut self, mention: &EntityMention) -> Result<ResolvedSpan, ResolveError> {
        let hint = normalize(&mention.context_hint);
        let surface = normalize(&mention.surface);
        if hint.is_empty() || surface.is_empty() {
            return Err(ResolveError::HintNotFound(mention.entity_type.clone()));
        }
        let windows = self.nt.find_all(&hint);
        if windows.is_empty() {
            return Err(ResolveError::HintNotFound(mention.entity_type.clone()));
        }
        let key = (hint.clone(), surface.clone(), mention.entity_type.clone());
        let idx = self.consumed.get(&key).copied().unwrap_or(0);
        let window = match windows.get(idx) {
            Some(w) => *w,
            // Every window for this exact mention shape is already used.
            None => return Err(ResolveError::HintNotFound(mention.entity_type.clone())),
        };
        let hint_len = hint.chars().count();
        let pos = self
            .nt
            .find_within(&surface, window, window + hint_len)
            .ok_or_else(|| ResolveError::SurfaceNotInHint(mention.entity_type.clone()))?;
        self.consumed.insert(key, idx + 1);
        let (start, end) = self.nt.to_original(pos, surface.chars().count());
        Ok(ResolvedSpan {
            start,
            end,
            entity_type: mention.entity_type.clone(),
            surface: mention.surface.clone(),
        })
    }
}

/// Resolve a single mention against `text` with a fresh resolver.
pub fn resolve_span(text: &str, mention: &EntityMention) -> Result<ResolvedSpan, ResolveError> {
    SpanResolver::new(text).resolve(mention)
}

/// A mention that could not be pinned to a span, with the reason. Reported,
/// never dropped silently.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnresolvedMention {
    pub mention: EntityMention,
    pub reason: ResolveError,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RedactionOutcome {
    pub redacted: String,
    /// Spans that were replaced, in original coordinates, ordered by start.
    pub spans: Vec<ResolvedSpan>,
    pub failures: Vec<UnresolvedMention>,
}

/// Replace every resolvable mention with `[ENTITY_TYPE]`.
///
/// Overlapping resolutions keep the longer span (placeholder nesting is
/// ill-defined); exact-duplicate spans keep the earliest-resolved mention.
/// Dropped and unresolvable mentions are collected into `failures`.
pub fn redact(text: &str, facts: &FactDictionary) -> RedactionOutcome {
    let mut resolver = SpanResolver::new(text);
    let mut resolved: Vec<ResolvedSpan> = Vec::new();
    let mut failures = Vec::new();

    for mention in facts.iter_mentions() {
        match resolver.resolve(mention) {
            Ok(span) => resolved.push(span),
            Err(reason) => {
                log::warn!(
                    "could not resolve a {} mention: {}",
                    mention.entity_type,
                    reason
                );
                failures.push(UnresolvedMention {
                    mention: mention.clone(),
                    reason,
                });
            }
        }
    }

    // Longer spans win conflicts; among equals, resolution order decides.
    let mut order: Vec<usize> = (0..resolved.len()).collect();
    order.sort_by(|&a, &b| resolved[b].len().cmp(&resolved[a].len()).then(a.cmp(&b)));
    let mut kept: Vec<ResolvedSpan> = Vec::new();
    for i in order {
        let span = &resolved[i];
        if kept.iter().any(|k| k.overlaps(span)) {
            log::warn!(
                "dropping a {} span overlapped by a longer or earlier span",
                span.entity_type
            );
            failures.push(UnresolvedMention {
                mention: EntityMention {
                    entity_type: span.entity_type.clone(),
                    surface: span.surface.clone(),
                    context_hint: span.surface.clone(),
                },
                reason: ResolveError::HintNotFound(span.entity_type.clone()),
            });
            continue;
        }
        kept.push(span.clone());
    }
    kept.sort_by_key(|s| s.start);

    RedactionOutcome {
        redacted: splice(text, &kept, |span| format!("[{}]", span.entity_type)),
        spans: kept,
        failures,
    }
}

/// Rebuild `text` with each span replaced by `replacement(span)`. Spans must
/// be non-overlapping and sorted by start; characters outside spans are
/// copied verbatim.
pub fn splice<F>(text: &str, spans: &[ResolvedSpan], replacement: F) -> String
where
    F: Fn(&ResolvedSpan) -> String,
{
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    let mut cursor = 0usize;
    for span in spans {
        debug_assert!(span.start >= cursor && span.end <= chars.len());
        out.extend(&chars[cursor..span.start]);
        out.push_str(&replacement(span));
        cursor = span.end;
    }
    out.extend(&chars[cursor..]);
    out
}
