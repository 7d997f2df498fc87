//! Tag-integrity check of a translated candidate against its tagged source.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::tagging::{segments, strip_markers, tag_counts, Segment, TagError, TaggedSentence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ValidationFailure {
    /// A source tag occurs a different number of times in the candidate, or a
    /// tag occurs an even number of times other than two.
    TagCountMismatch,
    /// A tag occurs an odd number of times.
    UnpairedTag,
    /// The candidate carries a tag the source does not.
    UnknownTag,
    EmptySpan,
    NestedOrInterleavedTags,
    /// Nothing but markers and whitespace.
    EmptyOutput,
}

impl ValidationFailure {
    pub const ALL: [ValidationFailure; 6] = [
        ValidationFailure::TagCountMismatch,
        ValidationFailure::UnpairedTag,
        ValidationFailure::UnknownTag,
        ValidationFailure::EmptySpan,
        ValidationFailure::NestedOrInterleavedTags,
        ValidationFailure::EmptyOutput,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ValidationFailure::TagCountMismatch => "TagCountMismatch",
            ValidationFailure::UnpairedTag => "UnpairedTag",
            ValidationFailure::UnknownTag => "UnknownTag",
            ValidationFailure::EmptySpan => "EmptySpan",
            ValidationFailure::NestedOrInterleavedTags => "NestedOrInterleavedTags",
            ValidationFailure::EmptyOutput => "EmptyOutput",
        }
    }

    /// Maps a decoding error onto the failure it corresponds to, if any.
    pub fn from_tag_error(err: &TagError) -> Option<Self> {
        match err {
            TagError::UnknownTag(_) => Some(ValidationFailure::UnknownTag),
            TagError::UnpairedTag(_) => Some(ValidationFailure::UnpairedTag),
            TagError::EmptySpan(_) => Some(ValidationFailure::EmptySpan),
            TagError::NestedOrInterleavedTags { .. } => Some(ValidationFailure::NestedOrInterleavedTags),
            TagError::Annotation(_) => Some(ValidationFailure::EmptyOutput),
            TagError::TagAlphabetExhausted { .. } | TagError::MarkerCollision { .. } => None,
        }
    }
}

impl fmt::Display for ValidationFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Valid,
    Invalid,
}

/// Outcome of [`validate_tags`]; valid iff `failures` is empty.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub failures: BTreeSet<ValidationFailure>,
}

impl ValidationReport {
    pub fn valid() -> Self {
        Self::default()
    }

    pub fn verdict(&self) -> Verdict {
        if self.failures.is_empty() {
            Verdict::Valid
        } else {
            Verdict::Invalid
        }
    }

    pub fn is_valid(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Checks that `candidate` preserves the tag structure of `source`.
///
/// Valid iff every tag occurs in the candidate exactly as often as in the
/// source, every tag occurs exactly twice, the delimited spans are non-empty
/// and neither nest nor interleave, and some text remains once markers are
/// stripped. Span order and surrounding words are free to change.
pub fn validate_tags(source: &TaggedSentence, candidate: &str) -> ValidationReport {
    let source_counts = source.tag_counts();
    let counts = tag_counts(candidate);
    let mut failures = BTreeSet::new();

    for (tag, &expected) in &source_counts {
        if counts.get(tag).copied().unwrap_or(0) != expected {
            failures.insert(ValidationFailure::TagCountMismatch);
        }
    }
    for (tag, &n) in &counts {
        if !source_counts.contains_key(tag) {
            failures.insert(ValidationFailure::UnknownTag);
        }
        if n % 2 == 1 {
            failures.insert(ValidationFailure::UnpairedTag);
        } else if n != 2 {
            failures.insert(ValidationFailure::TagCountMismatch);
        }
    }

    // Structure is checked over the tags that are correctly paired; the
    // others have already been reported.
    let mut open: Option<(&str, bool)> = None;
    for segment in segments(candidate) {
        match segment {
            Segment::Text(t) => {
                if let Some((_, has_text)) = open.as_mut() {
                    *has_text |= !t.trim().is_empty();
                }
            }
            Segment::Marker(tag) if counts.get(tag) == Some(&2) => match open {
                None => open = Some((tag, false)),
                Some((outer, has_text)) if outer == tag => {
                    if !has_text {
                        failures.insert(ValidationFailure::EmptySpan);
                    }
                    open = None;
                }
                Some(_) => {
                    failures.insert(ValidationFailure::NestedOrInterleavedTags);
                    break;
                }
            },
            Segment::Marker(_) => {}
        }
    }

    if strip_markers(candidate).is_empty() {
        failures.insert(ValidationFailure::EmptyOutput);
    }
    ValidationReport { failures }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ValidationFailure::*;

    fn check(source: &str, candidate: &str) -> Vec<ValidationFailure> {
        validate_tags(&TaggedSentence::new(source), candidate)
            .failures
            .into_iter()
            .collect()
    }

    const SRC: &str = "fly <a> x <a> to <b> y <b> now";

    #[test]
    fn any_order_is_valid() {
        assert!(check(SRC, "fly <a> x <a> to <b> y <b> now").is_empty());
        assert!(check(SRC, "<b> y <b> jetzt <a> x <a> fliegen").is_empty());
        assert!(check(SRC, "<b>y<b><a>x<a>").is_empty());
        assert!(check("hello", "hallo").is_empty());
    }

    #[test]
    fn missing_marker() {
        assert_eq!(check(SRC, "fly <a> x <a> to <b> y now"), vec![TagCountMismatch, UnpairedTag]);
        assert_eq!(check(SRC, "fly <a> x <a> to y now"), vec![TagCountMismatch]);
    }

    #[test]
    fn duplicated_marker() {
        assert_eq!(check(SRC, "fly <a> x <a> <a> to <b> y <b>"), vec![TagCountMismatch, UnpairedTag]);
        assert_eq!(check(SRC, "<a> x <a> <a> x <a> <b> y <b>"), vec![TagCountMismatch]);
    }

    #[test]
    fn empty_span() {
        assert_eq!(check("x <a> y <a>", "<a> <a>"), vec![EmptySpan, EmptyOutput]);
        assert_eq!(check("x <a> y <a>", "y <a> <a> x"), vec![EmptySpan]);
    }

    #[test]
    fn unknown_tag() {
        assert_eq!(check("x <a> y <a>", "x <a> y <a> <c> z <c>"), vec![UnknownTag]);
    }

    #[test]
    fn nesting_and_interleaving() {
        assert_eq!(check(SRC, "<a> x <b> y <b> <a>"), vec![NestedOrInterleavedTags]);
        assert_eq!(check(SRC, "<a> x <b> y <a> <b>"), vec![NestedOrInterleavedTags]);
    }

    #[test]
    fn empty_output() {
        assert_eq!(check("hello", ""), vec![EmptyOutput]);
        assert_eq!(check("hello", "   "), vec![EmptyOutput]);
    }

    #[test]
    fn verdict_matches_failures() {
        let r = validate_tags(&TaggedSentence::new(SRC), "nope");
        assert_eq!(r.verdict(), Verdict::Invalid);
        assert_eq!(validate_tags(&TaggedSentence::new(SRC), SRC).verdict(), Verdict::Valid);
    }
}
