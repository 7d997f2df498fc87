//! Per-example projection with a tag-count feedback loop:
//! encode, then translate and validate until a candidate keeps every tag
//! pair intact or the attempt budget runs out, then decode.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::AnnotatedUtterance;
use crate::backend::{BackendError, DecodeSchedule, TranslationRequest, TranslationResult, Translator};
use crate::dataset::{Dataset, DatasetError};
use crate::journal::{AttemptEntry, Journal, JournalEntry, JournalError};
use crate::tagging::{decode_tagged, encode_tagged, TagError, TagMap, TaggedSentence, TokenizerMode};
use crate::validation::{validate_tags, ValidationFailure, ValidationReport};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("example {id:?} cannot be encoded: {source}")]
    Encode {
        id: String,
        #[source]
        source: TagError,
    },
    #[error("backend failed on example {id:?} (attempt {attempt}): {source}")]
    Backend {
        id: String,
        attempt: u32,
        #[source]
        source: BackendError,
    },
    #[error("duplicate example id {0:?}")]
    DuplicateId(String),
    #[error("journal entry for {id:?} does not decode: {source}")]
    JournalMismatch {
        id: String,
        #[source]
        source: TagError,
    },
    #[error(transparent)]
    Journal(#[from] JournalError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExhaustionAction {
    #[default]
    Drop,
    CopySource,
}

impl std::str::FromStr for ExhaustionAction {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "drop" => Ok(ExhaustionAction::Drop),
            "copy_source" | "copy-source" => Ok(ExhaustionAction::CopySource),
            other => Err(format!("unknown exhaustion action {other:?} (expected drop or copy_source)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub on_exhaustion: ExhaustionAction,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            on_exhaustion: ExhaustionAction::Drop,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionConfig {
    pub source_locale: String,
    pub target_locale: String,
    pub policy: RetryPolicy,
    /// Defaults to [`TokenizerMode::for_locale`] of the target.
    pub tokenizer: Option<TokenizerMode>,
    pub decode: DecodeSchedule,
}

impl ProjectionConfig {
    pub fn new(source_locale: impl Into<String>, target_locale: impl Into<String>) -> Self {
        ProjectionConfig {
            source_locale: source_locale.into(),
            target_locale: target_locale.into(),
            policy: RetryPolicy::default(),
            tokenizer: None,
            decode: DecodeSchedule::default(),
        }
    }

    pub fn tokenizer_mode(&self) -> TokenizerMode {
        self.tokenizer
            .unwrap_or_else(|| TokenizerMode::for_locale(&self.target_locale))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeStatus {
    Translated,
    Dropped,
    /// Attempts exhausted and the source example was kept under the target
    /// locale (`copy_source` policy).
    Copied,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionOutcome {
    pub id: String,
    pub status: OutcomeStatus,
    pub result: Option<AnnotatedUtterance>,
    pub attempts: Vec<(TranslationResult, ValidationReport)>,
}

impl ProjectionOutcome {
    pub fn accepted_text(&self) -> Option<&str> {
        match self.status {
            OutcomeStatus::Translated => self.attempts.last().map(|(r, _)| r.text.as_str()),
            _ => None,
        }
    }

    fn to_journal(&self) -> JournalEntry {
        JournalEntry {
            id: self.id.clone(),
            status: self.status,
            attempts: self.attempts.len() as u32,
            target_text: self.accepted_text().map(String::from),
            history: self
                .attempts
                .iter()
                .map(|(r, report)| AttemptEntry {
                    text: r.text.clone(),
                    failures: report.failures.iter().copied().collect(),
                })
                .collect(),
        }
    }
}

fn checked_decode(
    candidate: &str,
    map: &TagMap,
    source: &AnnotatedUtterance,
    config: &ProjectionConfig,
) -> Result<AnnotatedUtterance, TagError> {
    decode_tagged(
        &TaggedSentence::new(candidate),
        map,
        config.tokenizer_mode(),
        source.id(),
        source.intent().as_str(),
        &config.target_locale,
    )
}

fn exhausted(
    utt: &AnnotatedUtterance,
    config: &ProjectionConfig,
    attempts: Vec<(TranslationResult, ValidationReport)>,
) -> ProjectionOutcome {
    let (status, result) = match config.policy.on_exhaustion {
        ExhaustionAction::Drop => (OutcomeStatus::Dropped, None),
        ExhaustionAction::CopySource => (
            OutcomeStatus::Copied,
            Some(utt.clone().with_locale(config.target_locale.clone())),
        ),
    };
    ProjectionOutcome {
        id: utt.id().to_string(),
        status,
        result,
        attempts,
    }
}

/// Projects one utterance into the target locale.
///
/// Backend errors abort (transport retries already happened inside the
/// backend); validation failures only consume attempts.
pub fn project_example(
    utt: &AnnotatedUtterance,
    backend: &dyn Translator,
    config: &ProjectionConfig,
) -> Result<ProjectionOutcome, PipelineError> {
    let (tagged, map) = encode_tagged(utt).map_err(|source| PipelineError::Encode {
        id: utt.id().to_string(),
        source,
    })?;
    let max_attempts = config.policy.max_attempts.max(1);
    let mut attempts = Vec::with_capacity(max_attempts as usize);

    for attempt in 1..=max_attempts {
        let req = TranslationRequest {
            tagged_text: tagged.as_str().to_string(),
            source_locale: config.source_locale.clone(),
            target_locale: config.target_locale.clone(),
            attempt,
            decode_params: config.decode.params_for_attempt(attempt),
        };
        let result = backend.translate(&req).map_err(|source| PipelineError::Backend {
            id: utt.id().to_string(),
            attempt,
            source,
        })?;
        let mut report = validate_tags(&tagged, &result.text);
        if report.is_valid() {
            match checked_decode(&result.text, &map, utt, config) {
                Ok(decoded) => {
                    attempts.push((result, report));
                    return Ok(ProjectionOutcome {
                        id: utt.id().to_string(),
                        status: OutcomeStatus::Translated,
                        result: Some(decoded),
                        attempts,
                    });
                }
                Err(err) => {
                    log::debug!("{}: valid candidate failed to decode: {err}", utt.id());
                    report
                        .failures
                        .insert(ValidationFailure::from_tag_error(&err).unwrap_or(ValidationFailure::EmptyOutput));
                }
            }
        }
        attempts.push((result, report));
    }
    Ok(exhausted(utt, config, attempts))
}

/// Rebuilds an outcome from its journal entry.
fn outcome_from_journal(
    entry: &JournalEntry,
    utt: &AnnotatedUtterance,
    config: &ProjectionConfig,
) -> Result<ProjectionOutcome, PipelineError> {
    let attempts = entry
        .history
        .iter()
        .map(|a| {
            (
                TranslationResult {
                    text: a.text.clone(),
                    raw: a.text.clone(),
                    latency_ms: 0,
                },
                ValidationReport {
                    failures: a.failures.iter().copied().collect(),
                },
            )
        })
        .collect();
    let result = match (entry.status, &entry.target_text) {
        (OutcomeStatus::Translated, Some(text)) => {
            let (_, map) = encode_tagged(utt).map_err(|source| PipelineError::Encode {
                id: utt.id().to_string(),
                source,
            })?;
            Some(checked_decode(text, &map, utt, config).map_err(|source| PipelineError::JournalMismatch {
                id: utt.id().to_string(),
                source,
            })?)
        }
        (OutcomeStatus::Copied, _) => Some(utt.clone().with_locale(config.target_locale.clone())),
        _ => None,
    };
    Ok(ProjectionOutcome {
        id: entry.id.clone(),
        status: entry.status,
        result,
        attempts,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotSurvival {
    pub source: u64,
    pub projected: u64,
}

/// Corpus-level projection statistics. [`CorpusStats::merge`] is associative
/// and commutative, so worker interleaving cannot change the totals.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub input: u64,
    pub translated: u64,
    pub dropped: u64,
    pub copied: u64,
    /// Failed attempts per failure type.
    pub failure_histogram: BTreeMap<String, u64>,
    /// Examples per number of attempts used.
    pub attempts_histogram: BTreeMap<u32, u64>,
    /// Spans per slot type in the source, and in translated output.
    pub slot_survival: BTreeMap<String, SlotSurvival>,
}

impl CorpusStats {
    pub fn record(&mut self, source: &AnnotatedUtterance, outcome: &ProjectionOutcome) {
        self.input += 1;
        match outcome.status {
            OutcomeStatus::Translated => self.translated += 1,
            OutcomeStatus::Dropped => self.dropped += 1,
            OutcomeStatus::Copied => self.copied += 1,
        }
        for (_, report) in &outcome.attempts {
            for failure in &report.failures {
                *self.failure_histogram.entry(failure.name().to_string()).or_default() += 1;
            }
        }
        *self.attempts_histogram.entry(outcome.attempts.len() as u32).or_default() += 1;
        for span in source.spans() {
            self.slot_survival.entry(span.slot_type).or_default().source += 1;
        }
        if outcome.status == OutcomeStatus::Translated {
            if let Some(result) = &outcome.result {
                for span in result.spans() {
                    self.slot_survival.entry(span.slot_type).or_default().projected += 1;
                }
            }
        }
    }

    pub fn merge(&mut self, other: &CorpusStats) {
        self.input += other.input;
        self.translated += other.translated;
        self.dropped += other.dropped;
        self.copied += other.copied;
        for (k, v) in &other.failure_histogram {
            *self.failure_histogram.entry(k.clone()).or_default() += v;
        }
        for (k, v) in &other.attempts_histogram {
            *self.attempts_histogram.entry(*k).or_default() += v;
        }
        for (k, v) in &other.slot_survival {
            let e = self.slot_survival.entry(k.clone()).or_default();
            e.source += v.source;
            e.projected += v.projected;
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialize") + "\n"
    }

    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<28}{:>10}", "examples", self.input);
        let _ = writeln!(out, "{:<28}{:>10}", "translated", self.translated);
        let _ = writeln!(out, "{:<28}{:>10}", "dropped", self.dropped);
        if self.copied > 0 {
            let _ = writeln!(out, "{:<28}{:>10}", "copied from source", self.copied);
        }
        if !self.failure_histogram.is_empty() {
            let _ = writeln!(out, "\nfailed attempts by type");
            for (k, v) in &self.failure_histogram {
                let _ = writeln!(out, "  {k:<26}{v:>10}");
            }
        }
        let _ = writeln!(out, "\nexamples by attempts used");
        for (k, v) in &self.attempts_histogram {
            let _ = writeln!(out, "  {k:<26}{v:>10}");
        }
        if !self.slot_survival.is_empty() {
            let _ = writeln!(out, "\n{:<28}{:>10}{:>10}", "slot type", "source", "projected");
            for (k, v) in &self.slot_survival {
                let _ = writeln!(out, "  {k:<26}{:>10}{:>10}", v.source, v.projected);
            }
        }
        out
    }
}

pub struct ProjectionRun {
    pub dataset: Dataset,
    pub stats: CorpusStats,
    pub outcomes: Vec<ProjectionOutcome>,
    /// Examples whose outcome was taken from the journal.
    pub resumed: usize,
}

/// Projects a dataset with a bounded worker pool of
/// `backend.max_concurrent()` workers.
///
/// Output order is input order. With a journal, examples already recorded
/// are not re-translated, and new outcomes are appended in input order as
/// soon as every earlier example is done. On a fatal backend error the
/// outcomes completed so far are journaled before the error is returned.
pub fn project_dataset(
    dataset: &Dataset,
    backend: &dyn Translator,
    config: &ProjectionConfig,
    mut journal: Option<&mut Journal>,
) -> Result<ProjectionRun, PipelineError> {
    let examples = dataset.examples();
    let mut ids = HashSet::with_capacity(examples.len());
    for e in examples {
        if !ids.insert(e.id()) {
            return Err(PipelineError::DuplicateId(e.id().to_string()));
        }
    }

    let mut outcomes: Vec<Option<ProjectionOutcome>> = vec![None; examples.len()];
    let mut from_journal = vec![false; examples.len()];
    if let Some(j) = journal.as_deref() {
        for (i, utt) in examples.iter().enumerate() {
            if let Some(entry) = j.get(utt.id()) {
                outcomes[i] = Some(outcome_from_journal(entry, utt, config)?);
                from_journal[i] = true;
            }
        }
    }
    let resumed = from_journal.iter().filter(|r| **r).count();
    let todo: Vec<usize> = (0..examples.len()).filter(|&i| outcomes[i].is_none()).collect();

    let workers = backend.max_concurrent().max(1).min(todo.len().max(1));
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel::<(usize, Result<ProjectionOutcome, PipelineError>)>();
    let mut fatal: Option<PipelineError> = None;
    let mut written = 0usize;

    let mut flush_ready =
        |outcomes: &[Option<ProjectionOutcome>], written: &mut usize| -> Result<(), PipelineError> {
            while *written < outcomes.len() {
                let Some(outcome) = &outcomes[*written] else { break };
                if !from_journal[*written] {
                    if let Some(j) = journal.as_deref_mut() {
                        j.append(outcome.to_journal())?;
                    }
                }
                *written += 1;
            }
            Ok(())
        };

    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, abort, todo) = (&next, &abort, &todo);
            scope.spawn(move || loop {
                if abort.load(Ordering::SeqCst) {
                    break;
                }
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some(&i) = todo.get(k) else { break };
                let result = project_example(&examples[i], backend, config);
                if result.is_err() {
                    abort.store(true, Ordering::SeqCst);
                }
                if tx.send((i, result)).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        for (i, result) in rx {
            match result {
                Ok(outcome) => {
                    outcomes[i] = Some(outcome);
                    if fatal.is_none() {
                        if let Err(e) = flush_ready(&outcomes, &mut written) {
                            abort.store(true, Ordering::SeqCst);
                            fatal = Some(e);
                        }
                    }
                }
                Err(e) => {
                    abort.store(true, Ordering::SeqCst);
                    fatal.get_or_insert(e);
                }
            }
        }
    });

    if let Some(err) = fatal {
        // Persist whatever finished out of order so a resume skips it.
        if let Some(j) = journal.as_deref_mut() {
            for (i, outcome) in outcomes.iter().enumerate().skip(written) {
                if let (Some(outcome), false) = (outcome, from_journal[i]) {
                    j.append(outcome.to_journal())?;
                }
            }
        }
        return Err(err);
    }

    let outcomes: Vec<ProjectionOutcome> = outcomes
        .into_iter()
        .map(|o| o.expect("every example processed"))
        .collect();
    let mut stats = CorpusStats::default();
    for (utt, outcome) in examples.iter().zip(&outcomes) {
        stats.record(utt, outcome);
    }
    let translated = outcomes.iter().filter_map(|o| o.result.clone()).collect();
    Ok(ProjectionRun {
        dataset: Dataset::new(config.target_locale.clone(), translated)?,
        stats,
        outcomes,
        resumed,
    })
}
