//! Canonical SLU data types and BIO span algebra.
//!
//! An [`AnnotatedUtterance`] is a token sequence with one BIO label per token
//! and a single intent. Slots are recovered as [`SlotSpan`]s by chunking the
//! label sequence, and [`spans_to_bio`] is the inverse of that chunking.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnnotationError {
    #[error("malformed BIO label {label:?} at position {position}")]
    InvalidLabel { position: usize, label: String },
    #[error("malformed BIO: I-{slot_type} at position {position} has no B-/I- predecessor of the same type")]
    MalformedBio { position: usize, slot_type: String },
    #[error("spans overlap: {first:?} and {second:?}")]
    OverlappingSpans { first: SlotSpan, second: SlotSpan },
    #[error("span {span:?} out of range for {token_count} tokens")]
    SpanOutOfRange { span: SlotSpan, token_count: usize },
    #[error("{tokens} tokens but {labels} labels")]
    LengthMismatch { tokens: usize, labels: usize },
    #[error("invalid token {token:?} at position {position}: tokens must be non-empty and contain no whitespace")]
    InvalidToken { position: usize, token: String },
    #[error("utterance has no tokens")]
    EmptyUtterance,
    #[error("intent must be non-empty")]
    EmptyIntent,
}

/// One BIO tag.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BioLabel {
    Outside,
    Begin(String),
    Inside(String),
}

impl BioLabel {
    pub fn slot_type(&self) -> Option<&str> {
        match self {
            BioLabel::Outside => None,
            BioLabel::Begin(t) | BioLabel::Inside(t) => Some(t),
        }
    }

    /// Parses a whitespace-separated label string such as `"O B-city I-city"`.
    pub fn parse_sequence(s: &str) -> Result<Vec<BioLabel>, AnnotationError> {
        s.split_whitespace()
            .enumerate()
            .map(|(position, l)| {
                l.parse().map_err(|_| AnnotationError::InvalidLabel {
                    position,
                    label: l.to_string(),
                })
            })
            .collect()
    }

    pub fn join_sequence(labels: &[BioLabel]) -> String {
        labels
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("not a BIO label: {0:?}")]
pub struct ParseLabelError(pub String);

impl FromStr for BioLabel {
    type Err = ParseLabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "O" {
            return Ok(BioLabel::Outside);
        }
        let (prefix, slot_type) = s.split_once('-').ok_or_else(|| ParseLabelError(s.into()))?;
        if slot_type.is_empty() || slot_type.chars().any(char::is_whitespace) {
            return Err(ParseLabelError(s.into()));
        }
        match prefix {
            "B" => Ok(BioLabel::Begin(slot_type.into())),
            "I" => Ok(BioLabel::Inside(slot_type.into())),
            _ => Err(ParseLabelError(s.into())),
        }
    }
}

impl fmt::Display for BioLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BioLabel::Outside => f.write_str("O"),
            BioLabel::Begin(t) => write!(f, "B-{t}"),
            BioLabel::Inside(t) => write!(f, "I-{t}"),
        }
    }
}

impl Serialize for BioLabel {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BioLabel {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// How orphan `I-` labels are handled while chunking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BioMode {
    /// Orphan `I-x` is an error. Used for gold data.
    #[default]
    Strict,
    /// Orphan `I-x` starts a new span, as if it were `B-x`.
    Lenient,
}

/// A contiguous slot chunk over token indices `[start, end)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SlotSpan {
    pub slot_type: String,
    pub start: usize,
    pub end: usize,
}

impl SlotSpan {
    pub fn new(slot_type: impl Into<String>, start: usize, end: usize) -> Self {
        SlotSpan {
            slot_type: slot_type.into(),
            start,
            end,
        }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn overlaps(&self, other: &SlotSpan) -> bool {
        self.start < other.end && other.start < self.end
    }

    /// The covered tokens joined by single spaces.
    pub fn value(&self, tokens: &[String]) -> String {
        tokens[self.start..self.end].join(" ")
    }
}

/// Chunks a BIO sequence into maximal spans, in textual order.
pub fn extract_spans(labels: &[BioLabel], mode: BioMode) -> Result<Vec<SlotSpan>, AnnotationError> {
    let mut spans: Vec<SlotSpan> = Vec::new();
    let mut open: Option<SlotSpan> = None;

    for (position, label) in labels.iter().enumerate() {
        match label {
            BioLabel::Outside => spans.extend(open.take()),
            BioLabel::Begin(t) => {
                spans.extend(open.take());
                open = Some(SlotSpan::new(t.clone(), position, position + 1));
            }
            BioLabel::Inside(t) => match open.as_mut() {
                Some(span) if span.slot_type == *t => span.end = position + 1,
                _ => {
                    if mode == BioMode::Strict {
                        return Err(AnnotationError::MalformedBio {
                            position,
                            slot_type: t.clone(),
                        });
                    }
                    spans.extend(open.take());
                    open = Some(SlotSpan::new(t.clone(), position, position + 1));
                }
            },
        }
    }
    spans.extend(open);
    Ok(spans)
}

/// Renders spans as a BIO sequence of length `token_count`.
pub fn spans_to_bio(spans: &[SlotSpan], token_count: usize) -> Result<Vec<BioLabel>, AnnotationError> {
    let mut sorted: Vec<&SlotSpan> = spans.iter().collect();
    sorted.sort_by_key(|s| (s.start, s.end));

    for span in &sorted {
        if span.is_empty() || span.end > token_count {
            return Err(AnnotationError::SpanOutOfRange {
                span: (*span).clone(),
                token_count,
            });
        }
    }
    for pair in sorted.windows(2) {
        if pair[0].overlaps(pair[1]) {
            return Err(AnnotationError::OverlappingSpans {
                first: pair[0].clone(),
                second: pair[1].clone(),
            });
        }
    }

    let mut labels = vec![BioLabel::Outside; token_count];
    for span in sorted {
        labels[span.start] = BioLabel::Begin(span.slot_type.clone());
        for label in &mut labels[span.start + 1..span.end] {
            *label = BioLabel::Inside(span.slot_type.clone());
        }
    }
    Ok(labels)
}

/// Intent name, guaranteed non-empty.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct IntentLabel(String);

impl IntentLabel {
    pub fn new(name: impl Into<String>) -> Result<Self, AnnotationError> {
        let name = name.into();
        if name.trim().is_empty() {
            return Err(AnnotationError::EmptyIntent);
        }
        Ok(IntentLabel(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for IntentLabel {
    type Error = AnnotationError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        IntentLabel::new(value)
    }
}

impl From<IntentLabel> for String {
    fn from(value: IntentLabel) -> Self {
        value.0
    }
}

impl fmt::Display for IntentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A tokenized utterance with well-formed BIO slot labels and an intent.
///
/// Fields are private so that every value in circulation satisfies the
/// invariants checked by [`AnnotatedUtterance::new`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AnnotatedUtterance {
    id: String,
    tokens: Vec<String>,
    labels: Vec<BioLabel>,
    intent: IntentLabel,
    locale: String,
}

impl AnnotatedUtterance {
    pub fn new(
        id: impl Into<String>,
        tokens: Vec<String>,
        labels: Vec<BioLabel>,
        intent: impl Into<String>,
        locale: impl Into<String>,
    ) -> Result<Self, AnnotationError> {
        if tokens.is_empty() {
            return Err(AnnotationError::EmptyUtterance);
        }
        if tokens.len() != labels.len() {
            return Err(AnnotationError::LengthMismatch {
                tokens: tokens.len(),
                labels: labels.len(),
            });
        }
        if let Some((position, token)) = tokens
            .iter()
            .enumerate()
            .find(|(_, t)| t.is_empty() || t.chars().any(char::is_whitespace))
        {
            return Err(AnnotationError::InvalidToken {
                position,
                token: token.clone(),
            });
        }
        extract_spans(&labels, BioMode::Strict)?;
        Ok(AnnotatedUtterance {
            id: id.into(),
            tokens,
            labels,
            intent: IntentLabel::new(intent)?,
            locale: locale.into(),
        })
    }

    /// Builds an utterance from tokens and a span set.
    pub fn from_spans(
        id: impl Into<String>,
        tokens: Vec<String>,
        spans: &[SlotSpan],
        intent: impl Into<String>,
        locale: impl Into<String>,
    ) -> Result<Self, AnnotationError> {
        let labels = spans_to_bio(spans, tokens.len())?;
        Self::new(id, tokens, labels, intent, locale)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn labels(&self) -> &[BioLabel] {
        &self.labels
    }

    pub fn intent(&self) -> &IntentLabel {
        &self.intent
    }

    pub fn locale(&self) -> &str {
        &self.locale
    }

    pub fn spans(&self) -> Vec<SlotSpan> {
        extract_spans(&self.labels, BioMode::Strict).expect("labels validated at construction")
    }

    /// `(slot_type, value)` pairs in textual order.
    pub fn slot_values(&self) -> Vec<(String, String)> {
        self.spans()
            .into_iter()
            .map(|s| {
                let value = s.value(&self.tokens);
                (s.slot_type, value)
            })
            .collect()
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn with_locale(mut self, locale: impl Into<String>) -> Self {
        self.locale = locale.into();
        self
    }

    pub fn with_intent(mut self, intent: IntentLabel) -> Self {
        self.intent = intent;
        self
    }
}
