//! Core library for a schema-driven, multi-modal de-identification pipeline.
//!
//! The pipeline removes and optionally relexicalizes PHI/PII in three kinds of
//! input:
//!
//! * structured records, processed by rule flags from a [`schema`] registry;
//! * unstructured text fields, processed by multi-pass entity [`extraction`]
//!   followed by context-aware [`redaction`] and optional [`relex`]icalization;
//! * timestamped audio, where PHI intervals derived from the transcript plus
//!   voiced gaps flagged by a classifier are muted ([`audio`]).
//!
//! Model-backed steps (entity extraction, coreference clustering, replacement
//! validation and generation, gap classification) are abstracted behind the
//! traits in [`agents`]; deterministic scripted realizations live there too,
//! so every pipeline stage is reproducible offline.
//!
//! The [`eval`] module scores predicted spans against gold annotations with
//! entity-level position matching, Levenshtein-similarity text matching, and
//! all-or-nothing recall.

pub mod agents;
pub mod audio;
pub mod eval;
pub mod extraction;
pub mod redaction;
pub mod relex;
pub mod schema;

mod textnorm;

pub use textnorm::normalize;
