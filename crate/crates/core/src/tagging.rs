//! Paired-marker encoding of slot spans for translation.
//!
//! Each slot span is wrapped in a pair of identical markers, `<a> John <a>`,
//! with one fresh tag name per span occurrence. The [`TagMap`] sidecar maps
//! tag names back to slot types so that annotations can be recovered from a
//! translated sentence whatever order the translator put the spans in.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::{AnnotatedUtterance, AnnotationError, BioLabel, SlotSpan};

/// Upper bound on tag names: 26 single letters plus 26 * 26 two-letter names.
pub const TAG_ALPHABET_SIZE: usize = 26 + 26 * 26;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TagError {
    #[error("{spans} spans exceed the tag alphabet of {TAG_ALPHABET_SIZE} names")]
    TagAlphabetExhausted { spans: usize },
    #[error("token {token:?} contains a marker-like substring")]
    MarkerCollision { token: String },
    #[error("tag <{0}> is not in the tag map")]
    UnknownTag(String),
    #[error("tag <{0}> occurs an odd number of times")]
    UnpairedTag(String),
    #[error("tag <{0}> delimits an empty span")]
    EmptySpan(String),
    #[error("tag <{inner}> opens inside the span of <{outer}>")]
    NestedOrInterleavedTags { outer: String, inner: String },
    #[error("decoded utterance is invalid: {0}")]
    Annotation(#[from] AnnotationError),
}

fn marker_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"<([a-z]{1,2})>").unwrap())
}

/// Name of the `index`-th tag: `a`..`z`, then `aa`, `ab`, ...
pub fn tag_name(index: usize) -> Option<String> {
    const LETTERS: &[u8; 26] = b"abcdefghijklmnopqrstuvwxyz";
    if index < 26 {
        Some((LETTERS[index] as char).to_string())
    } else if index < TAG_ALPHABET_SIZE {
        let i = index - 26;
        Some(format!("{}{}", LETTERS[i / 26] as char, LETTERS[i % 26] as char))
    } else {
        None
    }
}

pub fn marker(tag: &str) -> String {
    format!("<{tag}>")
}

/// True if `s` contains anything the decoder would read as a marker.
pub fn contains_marker(s: &str) -> bool {
    marker_regex().is_match(s)
}

/// Text carrying paired markers; the wire form sent to translators.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaggedSentence(String);

impl TaggedSentence {
    pub fn new(text: impl Into<String>) -> Self {
        TaggedSentence(text.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }

    /// Marker-free text with whitespace collapsed.
    pub fn strip_markers(&self) -> String {
        strip_markers(&self.0)
    }

    /// Occurrence count of each tag name.
    pub fn tag_counts(&self) -> BTreeMap<String, usize> {
        tag_counts(&self.0)
    }
}

impl fmt::Display for TaggedSentence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Ordered `tag name -> slot type` entries, in order of first appearance in
/// the source sentence.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<TagEntry>", into = "Vec<TagEntry>")]
pub struct TagMap {
    entries: Vec<TagEntry>,
}

impl TryFrom<Vec<TagEntry>> for TagMap {
    type Error = String;
    fn try_from(entries: Vec<TagEntry>) -> Result<Self, Self::Error> {
        TagMap::from_entries(entries.into_iter().map(|e| (e.tag, e.slot_type)))
            .ok_or_else(|| "duplicate tag name in tag map".to_string())
    }
}

impl From<TagMap> for Vec<TagEntry> {
    fn from(map: TagMap) -> Self {
        map.entries
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagEntry {
    pub tag: String,
    pub slot_type: String,
}

impl TagMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a map from entries; returns `None` if a tag name repeats.
    pub fn from_entries<I, T, S>(entries: I) -> Option<Self>
    where
        I: IntoIterator<Item = (T, S)>,
        T: Into<String>,
        S: Into<String>,
    {
        let mut map = TagMap::new();
        for (tag, slot_type) in entries {
            let tag = tag.into();
            if map.get(&tag).is_some() {
                return None;
            }
            map.entries.push(TagEntry {
                tag,
                slot_type: slot_type.into(),
            });
        }
        Some(map)
    }

    pub fn get(&self, tag: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|e| e.tag == tag)
            .map(|e| e.slot_type.as_str())
    }

    pub fn entries(&self) -> &[TagEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenizerMode {
    /// Split on whitespace runs.
    Whitespace,
    /// Every non-space character is a token.
    Char,
}

impl TokenizerMode {
    /// `Char` for Japanese and Chinese, `Whitespace` for everything else.
    pub fn for_locale(locale: &str) -> Self {
        let language = locale
            .split(['-', '_'])
            .next()
            .unwrap_or_default()
            .to_ascii_lowercase();
        match language.as_str() {
            "ja" | "zh" => TokenizerMode::Char,
            _ => TokenizerMode::Whitespace,
        }
    }

    pub fn tokenize(self, text: &str) -> Vec<String> {
        match self {
            TokenizerMode::Whitespace => text.split_whitespace().map(String::from).collect(),
            TokenizerMode::Char => text
                .chars()
                .filter(|c| !c.is_whitespace())
                .map(String::from)
                .collect(),
        }
    }
}

impl std::str::FromStr for TokenizerMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "whitespace" => Ok(TokenizerMode::Whitespace),
            "char" => Ok(TokenizerMode::Char),
            other => Err(format!("unknown tokenizer mode {other:?} (expected whitespace or char)")),
        }
    }
}

impl fmt::Display for TokenizerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TokenizerMode::Whitespace => "whitespace",
            TokenizerMode::Char => "char",
        })
    }
}

/// Wraps the words of `tokens` covered by each span with a fresh marker pair.
///
/// `tags[i]` is the tag name used for `spans[i]`; spans must be sorted and
/// disjoint.
pub(crate) fn wrap_spans(tokens: &[String], spans: &[SlotSpan], tags: &[String]) -> String {
    debug_assert_eq!(spans.len(), tags.len());
    let mut words: Vec<String> = Vec::with_capacity(tokens.len() + 2 * spans.len());
    let mut next = spans.iter().zip(tags).peekable();
    let mut i = 0;
    while i < tokens.len() {
        match next.peek() {
            Some((span, tag)) if span.start == i => {
                words.push(marker(tag));
                words.extend(tokens[span.start..span.end].iter().cloned());
                words.push(marker(tag));
                i = span.end;
                next.next();
            }
            _ => {
                words.push(tokens[i].clone());
                i += 1;
            }
        }
    }
    words.join(" ")
}

pub(crate) fn check_marker_collision(tokens: &[String]) -> Result<(), TagError> {
    match tokens.iter().find(|t| contains_marker(t)) {
        Some(token) => Err(TagError::MarkerCollision {
            token: token.clone(),
        }),
        None => Ok(()),
    }
}

/// Encodes an utterance as a tagged sentence plus its tag map.
pub fn encode_tagged(utt: &AnnotatedUtterance) -> Result<(TaggedSentence, TagMap), TagError> {
    check_marker_collision(utt.tokens())?;
    let spans = utt.spans();
    let tags = (0..spans.len())
        .map(tag_name)
        .collect::<Option<Vec<_>>>()
        .ok_or(TagError::TagAlphabetExhausted { spans: spans.len() })?;
    let map = TagMap::from_entries(tags.iter().cloned().zip(spans.iter().map(|s| s.slot_type.clone())))
        .expect("generated tag names are unique");
    let text = wrap_spans(utt.tokens(), &spans, &tags);
    Ok((TaggedSentence(text), map))
}

pub fn strip_markers(text: &str) -> String {
    marker_regex()
        .replace_all(text, " ")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

pub(crate) fn tag_counts(text: &str) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for cap in marker_regex().captures_iter(text) {
        *counts.entry(cap[1].to_string()).or_default() += 1;
    }
    counts
}

/// A marker-delimited piece of text: either a marker or the text between two.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Segment<'a> {
    Marker(&'a str),
    Text(&'a str),
}

pub(crate) fn segments(text: &str) -> Vec<Segment<'_>> {
    let mut out = Vec::new();
    let mut last = 0;
    for cap in marker_regex().captures_iter(text) {
        let whole = cap.get(0).unwrap();
        if whole.start() > last {
            out.push(Segment::Text(&text[last..whole.start()]));
        }
        out.push(Segment::Marker(cap.get(1).unwrap().as_str()));
        last = whole.end();
    }
    if last < text.len() {
        out.push(Segment::Text(&text[last..]));
    }
    out
}

/// Tokens and tagged regions of a marker-bearing text.
pub(crate) struct ParsedTagged {
    pub tokens: Vec<String>,
    /// `(tag, start, end)` over `tokens`, in textual order.
    pub regions: Vec<(String, usize, usize)>,
}

/// Splits tagged text into tokens and tag regions, checking pairing and
/// nesting. Consecutive occurrences of a tag delimit one region.
pub(crate) fn parse_tagged(text: &str, mode: TokenizerMode) -> Result<ParsedTagged, TagError> {
    if let Some((tag, _)) = tag_counts(text).into_iter().find(|(_, n)| n % 2 == 1) {
        return Err(TagError::UnpairedTag(tag));
    }
    let mut tokens = Vec::new();
    let mut regions = Vec::new();
    let mut open: Option<(&str, usize)> = None;
    for segment in segments(text) {
        match segment {
            Segment::Text(t) => tokens.extend(mode.tokenize(t)),
            Segment::Marker(tag) => match open {
                None => open = Some((tag, tokens.len())),
                Some((outer, start)) if outer == tag => {
                    if start == tokens.len() {
                        return Err(TagError::EmptySpan(tag.to_string()));
                    }
                    regions.push((tag.to_string(), start, tokens.len()));
                    open = None;
                }
                Some((outer, _)) => {
                    return Err(TagError::NestedOrInterleavedTags {
                        outer: outer.to_string(),
                        inner: tag.to_string(),
                    })
                }
            },
        }
    }
    debug_assert!(open.is_none(), "even counts without nesting always close");
    Ok(ParsedTagged { tokens, regions })
}

/// Decodes a (translated) tagged sentence back into an annotated utterance.
///
/// Slot types come from `map`, so spans follow the tags wherever the target
/// sentence placed them.
pub fn decode_tagged(
    tagged: &TaggedSentence,
    map: &TagMap,
    mode: TokenizerMode,
    id: &str,
    intent: &str,
    locale: &str,
) -> Result<AnnotatedUtterance, TagError> {
    let parsed = parse_tagged(tagged.as_str(), mode)?;
    let mut labels = vec![BioLabel::Outside; parsed.tokens.len()];
    for (tag, start, end) in &parsed.regions {
        let slot_type = map.get(tag).ok_or_else(|| TagError::UnknownTag(tag.clone()))?;
        labels[*start] = BioLabel::Begin(slot_type.to_string());
        for label in &mut labels[start + 1..*end] {
            *label = BioLabel::Inside(slot_type.to_string());
        }
    }
    Ok(AnnotatedUtterance::new(
        id,
        parsed.tokens,
        labels,
        intent,
        locale,
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn utt(tokens: &str, labels: &str) -> AnnotatedUtterance {
        AnnotatedUtterance::new(
            "t",
            tokens.split(' ').map(String::from).collect(),
            BioLabel::parse_sequence(labels).unwrap(),
            "intent",
            "en",
        )
        .unwrap()
    }

    fn map(entries: &[(&str, &str)]) -> TagMap {
        TagMap::from_entries(entries.iter().copied()).unwrap()
    }

    fn labels_of(u: &AnnotatedUtterance) -> String {
        BioLabel::join_sequence(u.labels())
    }

    #[test]
    fn tag_names() {
        assert_eq!(tag_name(0).as_deref(), Some("a"));
        assert_eq!(tag_name(25).as_deref(), Some("z"));
        assert_eq!(tag_name(26).as_deref(), Some("aa"));
        assert_eq!(tag_name(27).as_deref(), Some("ab"));
        assert_eq!(tag_name(52).as_deref(), Some("ba"));
        assert_eq!(tag_name(TAG_ALPHABET_SIZE - 1).as_deref(), Some("zz"));
        assert_eq!(tag_name(TAG_ALPHABET_SIZE), None);
    }

    #[test]
    fn encode_radiohead() {
        let (tagged, tags) = encode_tagged(&utt(
            "play radiohead on spotify",
            "O B-music_artist O B-service",
        ))
        .unwrap();
        assert_eq!(tagged.as_str(), "play <a> radiohead <a> on <b> spotify <b>");
        assert_eq!(tags, map(&[("a", "music_artist"), ("b", "service")]));
    }

    #[test]
    fn encode_without_spans() {
        let (tagged, tags) = encode_tagged(&utt("hello", "O")).unwrap();
        assert_eq!(tagged.as_str(), "hello");
        assert!(tags.is_empty());
    }

    #[test]
    fn encode_adjacent_spans() {
        let (tagged, tags) = encode_tagged(&utt("a b c", "B-x I-x B-y")).unwrap();
        assert_eq!(tagged.as_str(), "<a> a b <a> <b> c <b>");
        assert_eq!(tags, map(&[("a", "x"), ("b", "y")]));
    }

    #[test]
    fn encode_same_type_gets_distinct_tags() {
        let (tagged, tags) = encode_tagged(&utt("from x to y", "O B-city O B-city")).unwrap();
        assert_eq!(tagged.as_str(), "from <a> x <a> to <b> y <b>");
        assert_eq!(tags, map(&[("a", "city"), ("b", "city")]));
    }

    #[test]
    fn encode_rejects_marker_collision() {
        let err = encode_tagged(&utt("say <a>", "O O")).unwrap_err();
        assert!(matches!(err, TagError::MarkerCollision { .. }));
        // Uppercase and three-letter names are not markers.
        assert!(encode_tagged(&utt("say <A> <abc>", "O O O")).is_ok());
    }

    #[test]
    fn encode_beyond_26_spans_uses_two_letters() {
        let tokens: Vec<String> = (0..30).map(|i| format!("w{i}")).collect();
        let labels = vec![BioLabel::Begin("x".into()); 30];
        let u = AnnotatedUtterance::new("t", tokens, labels, "i", "en").unwrap();
        let (tagged, tags) = encode_tagged(&u).unwrap();
        assert_eq!(tags.entries()[26].tag, "aa");
        assert!(tagged.as_str().ends_with("<ad> w29 <ad>"));
    }

    #[test]
    fn decode_german_example() {
        let u = decode_tagged(
            &TaggedSentence::new("Mein Name ist <a> John <a> und ich wohne in <b> London <b>"),
            &map(&[("a", "name"), ("b", "city")]),
            TokenizerMode::Whitespace,
            "1",
            "greet",
            "de",
        )
        .unwrap();
        assert_eq!(u.tokens().join(" "), "Mein Name ist John und ich wohne in London");
        assert_eq!(labels_of(&u), "O O O B-name O O O O B-city");
        assert_eq!(u.locale(), "de");
    }

    #[test]
    fn decode_identity_and_reordered() {
        let u = decode_tagged(&TaggedSentence::new("hello"), &TagMap::new(), TokenizerMode::Whitespace, "1", "i", "en")
            .unwrap();
        assert_eq!(labels_of(&u), "O");

        let u = decode_tagged(
            &TaggedSentence::new("<b> spotify <b> auf <a> radiohead <a>"),
            &map(&[("a", "music_artist"), ("b", "service")]),
            TokenizerMode::Whitespace,
            "1",
            "i",
            "de",
        )
        .unwrap();
        assert_eq!(u.tokens().join(" "), "spotify auf radiohead");
        assert_eq!(labels_of(&u), "B-service O B-music_artist");
    }

    #[test]
    fn decode_markers_without_spaces() {
        let u = decode_tagged(
            &TaggedSentence::new("fly to<a>new  york<a>today"),
            &map(&[("a", "city")]),
            TokenizerMode::Whitespace,
            "1",
            "i",
            "en",
        )
        .unwrap();
        assert_eq!(u.tokens().join(" "), "fly to new york today");
        assert_eq!(labels_of(&u), "O O B-city I-city O");
    }

    #[test]
    fn decode_char_mode() {
        let u = decode_tagged(
            &TaggedSentence::new("<a>東京<a>へ行く"),
            &map(&[("a", "city")]),
            TokenizerMode::Char,
            "1",
            "i",
            "ja",
        )
        .unwrap();
        assert_eq!(u.tokens(), ["東", "京", "へ", "行", "く"]);
        assert_eq!(labels_of(&u), "B-city I-city O O O");
    }

    #[test]
    fn decode_errors() {
        let m = map(&[("a", "x"), ("b", "y")]);
        let dec = |s: &str| decode_tagged(&TaggedSentence::new(s), &m, TokenizerMode::Whitespace, "1", "i", "en");
        assert_eq!(dec("<c> w <c>").unwrap_err(), TagError::UnknownTag("c".into()));
        assert_eq!(dec("<a> w").unwrap_err(), TagError::UnpairedTag("a".into()));
        assert_eq!(dec("w <a> <a>").unwrap_err(), TagError::EmptySpan("a".into()));
        assert!(matches!(
            dec("<a> w <b> v <b> <a>").unwrap_err(),
            TagError::NestedOrInterleavedTags { .. }
        ));
        assert!(matches!(
            dec("<a> w <b> v <a> <b>").unwrap_err(),
            TagError::NestedOrInterleavedTags { .. }
        ));
        assert!(matches!(dec("<a> <a>").unwrap_err(), TagError::EmptySpan(_)));
    }

    #[test]
    fn strip_examples() {
        assert_eq!(strip_markers("play <a> radiohead <a>"), "play radiohead");
        assert_eq!(strip_markers("hello"), "hello");
        assert_eq!(strip_markers("<a> a b <a> <b> c <b>"), "a b c");
        assert_eq!(strip_markers("  x<a>y  "), "x y");
    }

    #[test]
    fn tokenizer_mode_defaults() {
        assert_eq!(TokenizerMode::for_locale("ja-JP"), TokenizerMode::Char);
        assert_eq!(TokenizerMode::for_locale("zh"), TokenizerMode::Char);
        assert_eq!(TokenizerMode::for_locale("de-DE"), TokenizerMode::Whitespace);
        assert_eq!(TokenizerMode::for_locale("pt"), TokenizerMode::Whitespace);
    }
}
