//! Cross-lingual projection of slot-annotated SLU data.
//!
//! Slot spans are wrapped in paired HTML-like markers (`<a> John <a>`), the
//! tagged sentence is translated by a pluggable [`backend::Translator`], the
//! candidate is checked for tag integrity and regenerated until it passes
//! (the feedback loop in [`pipeline`]), and the result is decoded back into
//! BIO labels. [`metrics`] scores SLU predictions with Intent Accuracy,
//! Slot F1 and Overall Accuracy.

pub mod annotation;
pub mod backend;
pub mod dataset;
pub mod journal;
pub mod metrics;
pub mod pipeline;
pub mod tagging;
pub mod validation;

pub use annotation::{extract_spans, spans_to_bio, AnnotatedUtterance, BioLabel, BioMode, IntentLabel, SlotSpan};
pub use backend::{
    build_prompt, BackendConfig, BackendError, DecodeSchedule, FaultyBackend, HttpBackend, IdentityBackend,
    ScrambleBackend, ScriptedBackend, TranslationRequest, TranslationResult, Translator,
};
pub use dataset::{
    export_finetune_pairs, parse_annot_utt, read_massive, read_multiatis, write_massive, write_multiatis, Dataset,
    FinetunePair,
};
pub use metrics::{evaluate, intent_accuracy, overall_accuracy, slot_f1, MetricsReport};
pub use pipeline::{
    project_dataset, project_example, CorpusStats, OutcomeStatus, ProjectionConfig, ProjectionOutcome, RetryPolicy,
};
pub use tagging::{decode_tagged, encode_tagged, strip_markers, TagMap, TaggedSentence, TokenizerMode};
pub use validation::{validate_tags, ValidationFailure, ValidationReport};
