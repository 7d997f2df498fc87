//! MultiATIS++ TSV and MASSIVE JSONL readers/writers, the MASSIVE bracket
//! annotation grammar, and export of tag-annotated fine-tuning pairs.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::{AnnotatedUtterance, AnnotationError, BioLabel, SlotSpan};
use crate::tagging::{self, TagMap, TaggedSentence};

pub const MULTIATIS_COLUMNS: [&str; 4] = ["id", "utterance", "slot_labels", "intent"];

pub const DEFAULT_INSTRUCTION_TEMPLATE: &str = "Translate the following sentence from {src} to {tgt}, keeping all <x> tags exactly paired around the corresponding words.";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: missing header row")]
    MissingHeader { path: PathBuf },
    #[error("{path}: header has no {column:?} column")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path}:{line}: record {id:?} has {tokens} tokens but {labels} labels")]
    RowArityMismatch {
        path: PathBuf,
        line: usize,
        id: String,
        tokens: usize,
        labels: usize,
    },
    #[error("{path}:{line}: record {id:?} has {found} columns, expected {expected}")]
    ColumnCount {
        path: PathBuf,
        line: usize,
        id: String,
        found: usize,
        expected: usize,
    },
    #[error("{path}:{line}: record {id:?}: {source}")]
    InvalidRecord {
        path: PathBuf,
        line: usize,
        id: String,
        #[source]
        source: AnnotationError,
    },
    #[error("{path}:{line}: record {id:?}: {source}")]
    Annotation {
        path: PathBuf,
        line: usize,
        id: String,
        #[source]
        source: AnnotUttError,
    },
    #[error("{path}:{line}: malformed JSON: {message}")]
    Json {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: record {id:?} is missing field {field:?}")]
    MissingField {
        path: PathBuf,
        line: usize,
        id: String,
        field: &'static str,
    },
    #[error("{path}:{line}: duplicate id {id:?} within locale {locale}")]
    DuplicateIdWithinLocale {
        path: PathBuf,
        line: usize,
        id: String,
        locale: String,
    },
    #[error("example {id:?} has locale {found}, dataset locale is {expected}")]
    LocaleMismatch {
        id: String,
        expected: String,
        found: String,
    },
}

impl DatasetError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        DatasetError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// True for malformed-content errors, false for I/O failures.
    pub fn is_validation(&self) -> bool {
        !matches!(self, DatasetError::Io { .. })
    }
}

/// Errors of the MASSIVE `annot_utt` bracket grammar.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnnotUttError {
    #[error("unbalanced bracket at byte {position}")]
    UnbalancedBracket { position: usize },
    #[error("slot group at byte {position} has an empty value")]
    EmptySlotValue { position: usize },
    #[error("slot group at byte {position} has no ':' separator or an empty slot type")]
    MissingColonSeparator { position: usize },
}

/// All examples of one locale.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    locale: String,
    examples: Vec<AnnotatedUtterance>,
}

impl Dataset {
    pub fn new(locale: impl Into<String>, examples: Vec<AnnotatedUtterance>) -> Result<Self, DatasetError> {
        let locale = locale.into();
        if let Some(bad) = examples.iter().find(|e| e.locale() != locale) {
            return Err(DatasetError::LocaleMismatch {
                id: bad.id().to_string(),
                expected: locale,
                found: bad.locale().to_string(),
            });
        }
        Ok(Dataset { locale, examples })
    }

    pub fn empty(locale: impl Into<String>) -> Self {
        Dataset {
            locale: locale.into(),
            examples: Vec::new(),
        }
    }

    pub fn locale(&self) -> &str {
        &self.locale
    }

    pub fn examples(&self) -> &[AnnotatedUtterance] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn intent_inventory(&self) -> BTreeSet<String> {
        self.examples
            .iter()
            .map(|e| e.intent().as_str().to_string())
            .collect()
    }

    pub fn slot_inventory(&self) -> BTreeSet<String> {
        self.examples
            .iter()
            .flat_map(|e| e.spans().into_iter().map(|s| s.slot_type))
            .collect()
    }

    /// Same examples relabelled with another locale.
    pub fn with_locale(self, locale: impl Into<String>) -> Self {
        let locale = locale.into();
        Dataset {
            examples: self
                .examples
                .into_iter()
                .map(|e| e.with_locale(locale.clone()))
                .collect(),
            locale,
        }
    }
}

fn open_lines(path: &Path) -> Result<impl Iterator<Item = (usize, io::Result<String>)>, DatasetError> {
    let file = File::open(path).map_err(|e| DatasetError::io(path, e))?;
    Ok(BufReader::new(file)
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.map(|l| l.trim_end_matches('\r').to_string()))))
}

/// Reads a header-prefixed TSV file and returns, for each data row, its line
/// number and the requested columns (in the order of `columns`).
pub(crate) fn read_tsv_columns(
    path: &Path,
    columns: &[&str],
) -> Result<Vec<(usize, Vec<String>)>, DatasetError> {
    let mut lines = open_lines(path)?;
    let header = match lines.next() {
        Some((_, line)) => line.map_err(|e| DatasetError::io(path, e))?,
        None => return Err(DatasetError::MissingHeader { path: path.into() }),
    };
    let header: Vec<&str> = header.split('\t').collect();
    let indices = columns
        .iter()
        .map(|c| {
            header
                .iter()
                .position(|h| h == c)
                .ok_or_else(|| DatasetError::MissingColumn {
                    path: path.into(),
                    column: c.to_string(),
                })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut rows = Vec::new();
    for (line_no, line) in lines {
        let line = line.map_err(|e| DatasetError::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != header.len() {
            return Err(DatasetError::ColumnCount {
                path: path.into(),
                line: line_no,
                id: fields[0].to_string(),
                found: fields.len(),
                expected: header.len(),
            });
        }
        rows.push((line_no, indices.iter().map(|&i| fields[i].to_string()).collect()));
    }
    Ok(rows)
}

/// Returns the header fields of a TSV file.
pub(crate) fn read_tsv_header(path: &Path) -> Result<Vec<String>, DatasetError> {
    let mut lines = open_lines(path)?;
    match lines.next() {
        Some((_, line)) => Ok(line
            .map_err(|e| DatasetError::io(path, e))?
            .split('\t')
            .map(String::from)
            .collect()),
        None => Err(DatasetError::MissingHeader { path: path.into() }),
    }
}

/// Reads a MultiATIS++ TSV file (`id, utterance, slot_labels, intent`).
pub fn read_multiatis(path: impl AsRef<Path>, locale: &str) -> Result<Dataset, DatasetError> {
    let path = path.as_ref();
    let mut examples = Vec::new();
    for (line, row) in read_tsv_columns(path, &MULTIATIS_COLUMNS)? {
        let [id, utterance, slot_labels, intent]: [String; 4] = row.try_into().unwrap();
        let tokens: Vec<String> = utterance.split_whitespace().map(String::from).collect();
        let labels = BioLabel::parse_sequence(&slot_labels).map_err(|source| DatasetError::InvalidRecord {
            path: path.into(),
            line,
            id: id.clone(),
            source,
        })?;
        if tokens.len() != labels.len() {
            return Err(DatasetError::RowArityMismatch {
                path: path.into(),
                line,
                id,
                tokens: tokens.len(),
                labels: labels.len(),
            });
        }
        let utt = AnnotatedUtterance::new(id.clone(), tokens, labels, intent, locale).map_err(|source| {
            DatasetError::InvalidRecord {
                path: path.into(),
                line,
                id,
                source,
            }
        })?;
        examples.push(utt);
    }
    Dataset::new(locale, examples)
}

pub fn multiatis_row(utt: &AnnotatedUtterance) -> String {
    format!(
        "{}\t{}\t{}\t{}",
        utt.id(),
        utt.text(),
        BioLabel::join_sequence(utt.labels()),
        utt.intent()
    )
}

pub fn write_multiatis(dataset: &Dataset, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| DatasetError::io(path, e))?;
    let mut out = BufWriter::new(file);
    let write = |out: &mut BufWriter<File>| -> io::Result<()> {
        writeln!(out, "{}", MULTIATIS_COLUMNS.join("\t"))?;
        for utt in dataset.examples() {
            writeln!(out, "{}", multiatis_row(utt))?;
        }
        out.flush()
    };
    write(&mut out).map_err(|e| DatasetError::io(path, e))
}

/// Parses MASSIVE's `annot_utt` grammar, e.g. `wake me at [time : nine am]`.
///
/// The slot type ends at the first `:` of a group, so values may themselves
/// contain colons (`[time : 5:30 pm]`). Brackets split words: `[date : today]'s`
/// yields the tokens `today` and `'s`.
pub fn parse_annot_utt(annot: &str) -> Result<(Vec<String>, Vec<SlotSpan>), AnnotUttError> {
    let mut tokens: Vec<String> = Vec::new();
    let mut spans = Vec::new();
    let mut rest = annot;
    let mut offset = 0;

    while let Some(open) = rest.find(['[', ']']) {
        if rest.as_bytes()[open] == b']' {
            return Err(AnnotUttError::UnbalancedBracket { position: offset + open });
        }
        tokens.extend(rest[..open].split_whitespace().map(String::from));
        let group_start = offset + open;
        let after = &rest[open + 1..];
        let close = after
            .find(['[', ']'])
            .filter(|&i| after.as_bytes()[i] == b']')
            .ok_or(AnnotUttError::UnbalancedBracket { position: group_start })?;
        let group = &after[..close];
        let (slot_type, value) = group
            .split_once(':')
            .ok_or(AnnotUttError::MissingColonSeparator { position: group_start })?;
        let slot_type = slot_type.trim();
        if slot_type.is_empty() || slot_type.contains(char::is_whitespace) {
            return Err(AnnotUttError::MissingColonSeparator { position: group_start });
        }
        let start = tokens.len();
        tokens.extend(value.split_whitespace().map(String::from));
        if tokens.len() == start {
            return Err(AnnotUttError::EmptySlotValue { position: group_start });
        }
        spans.push(SlotSpan::new(slot_type, start, tokens.len()));

        let consumed = open + 1 + close + 1;
        offset += consumed;
        rest = &rest[consumed..];
    }
    tokens.extend(rest.split_whitespace().map(String::from));
    Ok((tokens, spans))
}

/// Renders tokens and spans in MASSIVE bracket grammar.
pub fn render_annot_utt(tokens: &[String], spans: &[SlotSpan]) -> String {
    let mut words: Vec<String> = Vec::new();
    let mut spans = spans.iter().peekable();
    let mut i = 0;
    while i < tokens.len() {
        match spans.peek() {
            Some(span) if span.start == i => {
                words.push(format!("[{} : {}]", span.slot_type, span.value(tokens)));
                i = span.end;
                spans.next();
            }
            _ => {
                words.push(tokens[i].clone());
                i += 1;
            }
        }
    }
    words.join(" ")
}

#[derive(Debug, Deserialize)]
struct MassiveRecord {
    id: Option<serde_json::Value>,
    locale: Option<String>,
    utt: Option<String>,
    annot_utt: Option<String>,
    intent: Option<String>,
    partition: Option<String>,
}

/// Parsed MASSIVE corpus: one dataset per locale, aligned by record id.
#[derive(Debug, Clone, Default)]
pub struct MassiveCorpus {
    datasets: BTreeMap<String, Dataset>,
}

impl MassiveCorpus {
    pub fn locales(&self) -> impl Iterator<Item = &str> {
        self.datasets.keys().map(String::as_str)
    }

    pub fn dataset(&self, locale: &str) -> Option<&Dataset> {
        self.datasets.get(locale)
    }

    pub fn datasets(&self) -> impl Iterator<Item = &Dataset> {
        self.datasets.values()
    }

    /// Pairs of records sharing an id, in source-locale order.
    pub fn aligned_pairs(
        &self,
        source_locale: &str,
        target_locale: &str,
    ) -> Vec<(AnnotatedUtterance, AnnotatedUtterance)> {
        let (Some(source), Some(target)) = (self.datasets.get(source_locale), self.datasets.get(target_locale))
        else {
            return Vec::new();
        };
        let by_id: HashMap<&str, &AnnotatedUtterance> =
            target.examples().iter().map(|e| (e.id(), e)).collect();
        source
            .examples()
            .iter()
            .filter_map(|s| by_id.get(s.id()).map(|t| (s.clone(), (*t).clone())))
            .collect()
    }
}

/// Reads MASSIVE JSONL. When `partition` is given, records whose
/// `partition` field differs are skipped.
pub fn read_massive(path: impl AsRef<Path>, partition: Option<&str>) -> Result<MassiveCorpus, DatasetError> {
    let path = path.as_ref();
    let mut grouped: BTreeMap<String, Vec<AnnotatedUtterance>> = BTreeMap::new();
    let mut seen: BTreeSet<(String, String)> = BTreeSet::new();

    for (line, text) in open_lines(path)? {
        let text = text.map_err(|e| DatasetError::io(path, e))?;
        if text.trim().is_empty() {
            continue;
        }
        let record: MassiveRecord = serde_json::from_str(&text).map_err(|e| DatasetError::Json {
            path: path.into(),
            line,
            message: e.to_string(),
        })?;
        let id = match &record.id {
            Some(serde_json::Value::String(s)) => s.clone(),
            Some(serde_json::Value::Number(n)) => n.to_string(),
            _ => String::new(),
        };
        let missing = |field| DatasetError::MissingField {
            path: path.into(),
            line,
            id: id.clone(),
            field,
        };
        if id.is_empty() {
            return Err(missing("id"));
        }
        let locale = record.locale.clone().ok_or_else(|| missing("locale"))?;
        record.utt.as_ref().ok_or_else(|| missing("utt"))?;
        let annot = record.annot_utt.as_deref().ok_or_else(|| missing("annot_utt"))?;
        let intent = record.intent.clone().ok_or_else(|| missing("intent"))?;

        if let (Some(wanted), Some(actual)) = (partition, record.partition.as_deref()) {
            if wanted != actual {
                continue;
            }
        }
        if !seen.insert((locale.clone(), id.clone())) {
            return Err(DatasetError::DuplicateIdWithinLocale {
                path: path.into(),
                line,
                id,
                locale,
            });
        }

        let (tokens, spans) = parse_annot_utt(annot).map_err(|source| DatasetError::Annotation {
            path: path.into(),
            line,
            id: id.clone(),
            source,
        })?;
        let utt = AnnotatedUtterance::from_spans(id.clone(), tokens, &spans, intent, locale.clone()).map_err(
            |source| DatasetError::InvalidRecord {
                path: path.into(),
                line,
                id,
                source,
            },
        )?;
        grouped.entry(locale).or_default().push(utt);
    }

    let datasets = grouped
        .into_iter()
        .map(|(locale, examples)| {
            let dataset = Dataset::new(locale.clone(), examples)?;
            Ok((locale, dataset))
        })
        .collect::<Result<_, DatasetError>>()?;
    Ok(MassiveCorpus { datasets })
}

#[derive(Serialize)]
struct MassiveOut<'a> {
    id: &'a str,
    locale: &'a str,
    utt: String,
    annot_utt: String,
    intent: &'a str,
}

/// Writes examples as MASSIVE JSONL (`id, locale, utt, annot_utt, intent`).
pub fn write_massive<'a>(
    examples: impl IntoIterator<Item = &'a AnnotatedUtterance>,
    path: impl AsRef<Path>,
) -> Result<(), DatasetError> {
    let records: Vec<MassiveOut<'_>> = examples
        .into_iter()
        .map(|u| MassiveOut {
            id: u.id(),
            locale: u.locale(),
            utt: u.text(),
            annot_utt: render_annot_utt(u.tokens(), &u.spans()),
            intent: u.intent().as_str(),
        })
        .collect();
    write_jsonl(&records, path)
}

/// A tag-annotated parallel pair for translation fine-tuning.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FinetunePair {
    pub source_locale: String,
    pub target_locale: String,
    pub source_tagged: TaggedSentence,
    pub target_tagged: TaggedSentence,
    pub instruction: String,
}

/// One line of the fine-tune JSONL export.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinetuneRecord {
    pub instruction: String,
    pub input: String,
    pub output: String,
}

impl From<&FinetunePair> for FinetuneRecord {
    fn from(pair: &FinetunePair) -> Self {
        FinetuneRecord {
            instruction: pair.instruction.clone(),
            input: pair.source_tagged.as_str().to_string(),
            output: pair.target_tagged.as_str().to_string(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ExportSummary {
    pub exported: usize,
    pub skipped_span_count: usize,
    pub skipped_slot_types: usize,
    pub skipped_marker_collision: usize,
}

impl ExportSummary {
    pub fn skipped(&self) -> usize {
        self.skipped_span_count + self.skipped_slot_types + self.skipped_marker_collision
    }
}

pub fn render_instruction(template: &str, source_locale: &str, target_locale: &str) -> String {
    substitute(template, &[("src", source_locale), ("tgt", target_locale)])
}

/// Single-pass `{name}` substitution; unknown placeholders are left as-is.
pub(crate) fn substitute(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        let hit = values.iter().find_map(|(name, value)| {
            let key_len = name.len() + 2;
            (tail.len() >= key_len && tail.as_bytes()[key_len - 1] == b'}' && &tail[1..key_len - 1] == *name)
                .then_some((value, key_len))
        });
        match hit {
            Some((value, key_len)) => {
                out.push_str(value);
                rest = &tail[key_len..];
            }
            None => {
                out.push('{');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

/// Encodes both sides of each aligned pair with a shared tag map.
///
/// The i-th source span gets the i-th tag name. Target spans are matched to
/// source spans by order of appearance within each slot type, so a target
/// that reorders spans of different types keeps correct tags. Pairs whose
/// span counts or slot-type multisets differ are skipped and counted.
pub fn export_finetune_pairs(
    pairs: &[(AnnotatedUtterance, AnnotatedUtterance)],
    source_locale: &str,
    target_locale: &str,
    instruction_template: &str,
) -> (Vec<FinetunePair>, ExportSummary) {
    let instruction = render_instruction(instruction_template, source_locale, target_locale);
    let mut summary = ExportSummary::default();
    let mut out = Vec::new();

    for (source, target) in pairs {
        let source_spans = source.spans();
        let target_spans = target.spans();
        if source_spans.len() != target_spans.len() {
            summary.skipped_span_count += 1;
            continue;
        }
        let type_multiset = |spans: &[SlotSpan]| {
            let mut types: Vec<&str> = spans.iter().map(|s| s.slot_type.as_str()).collect();
            types.sort_unstable();
            types.into_iter().map(String::from).collect::<Vec<_>>()
        };
        if type_multiset(&source_spans) != type_multiset(&target_spans) {
            summary.skipped_slot_types += 1;
            continue;
        }
        if tagging::check_marker_collision(source.tokens()).is_err()
            || tagging::check_marker_collision(target.tokens()).is_err()
        {
            summary.skipped_marker_collision += 1;
            continue;
        }
        let Some(source_tags) = (0..source_spans.len()).map(tagging::tag_name).collect::<Option<Vec<_>>>() else {
            summary.skipped_span_count += 1;
            continue;
        };

        let mut queues: BTreeMap<&str, std::collections::VecDeque<&String>> = BTreeMap::new();
        for (span, tag) in source_spans.iter().zip(&source_tags) {
            queues.entry(span.slot_type.as_str()).or_default().push_back(tag);
        }
        let target_tags: Vec<String> = target_spans
            .iter()
            .map(|s| {
                queues
                    .get_mut(s.slot_type.as_str())
                    .and_then(|q| q.pop_front())
                    .expect("slot-type multisets are equal")
                    .clone()
            })
            .collect();

        out.push(FinetunePair {
            source_locale: source_locale.to_string(),
            target_locale: target_locale.to_string(),
            source_tagged: TaggedSentence::new(tagging::wrap_spans(source.tokens(), &source_spans, &source_tags)),
            target_tagged: TaggedSentence::new(tagging::wrap_spans(target.tokens(), &target_spans, &target_tags)),
            instruction: instruction.clone(),
        });
        summary.exported += 1;
    }
    (out, summary)
}

pub fn write_finetune_jsonl(pairs: &[FinetunePair], path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let records: Vec<FinetuneRecord> = pairs.iter().map(FinetuneRecord::from).collect();
    write_jsonl(&records, path)
}

pub(crate) fn write_jsonl<T: Serialize>(records: &[T], path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| DatasetError::io(path, e))?;
    let mut out = BufWriter::new(file);
    let write = |out: &mut BufWriter<File>| -> io::Result<()> {
        for record in records {
            serde_json::to_writer(&mut *out, record)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    };
    write(&mut out).map_err(|e| DatasetError::io(path, e))
}

pub(crate) fn read_jsonl<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<Vec<T>, DatasetError> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for (line, text) in open_lines(path)? {
        let text = text.map_err(|e| DatasetError::io(path, e))?;
        if text.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&text).map_err(|e| DatasetError::Json {
            path: path.into(),
            line,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn read_finetune_jsonl(path: impl AsRef<Path>) -> Result<Vec<FinetuneRecord>, DatasetError> {
    read_jsonl(path)
}

/// An utterance in tagged wire form, with everything needed to decode it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedRecord {
    pub id: String,
    pub locale: String,
    pub intent: String,
    pub text: TaggedSentence,
    pub tags: TagMap,
}

impl TaggedRecord {
    pub fn encode(utt: &AnnotatedUtterance) -> Result<Self, tagging::TagError> {
        let (text, tags) = tagging::encode_tagged(utt)?;
        Ok(TaggedRecord {
            id: utt.id().to_string(),
            locale: utt.locale().to_string(),
            intent: utt.intent().to_string(),
            text,
            tags,
        })
    }

    pub fn decode(&self, mode: tagging::TokenizerMode) -> Result<AnnotatedUtterance, tagging::TagError> {
        tagging::decode_tagged(&self.text, &self.tags, mode, &self.id, &self.intent, &self.locale)
    }
}

pub fn write_tagged_jsonl(records: &[TaggedRecord], path: impl AsRef<Path>) -> Result<(), DatasetError> {
    write_jsonl(records, path)
}

pub fn read_tagged_jsonl(path: impl AsRef<Path>) -> Result<Vec<TaggedRecord>, DatasetError> {
    read_jsonl(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    fn write(dir: &TempDir, name: &str, contents: &str) -> PathBuf {
        let path = dir.path().join(name);
        std::fs::write(&path, contents).unwrap();
        path
    }

    #[test]
    fn multiatis_single_row() {
        let dir = TempDir::new().unwrap();
        let path = write(
            &dir,
            "a.tsv",
            "id\tutterance\tslot_labels\tintent\n1\tplay radiohead\tO B-music_artist\tto_play_music\n",
        );
        let ds = read_multiatis(&path, "en").unwrap();
        assert_eq!(ds.len(), 1);
        let utt = &ds.examples()[0];
        assert_eq!(utt.tokens(), ["play", "radiohead"]);
        assert_eq!(utt.spans(), vec![SlotSpan::new("music_artist", 1, 2)]);
        assert_eq!(utt.intent().as_str(), "to_play_music");
    }

    #[test]
    fn multiatis_header_only_and_errors() {
        let dir = TempDir::new().unwrap();
        let path = write(&dir, "e.tsv", "id\tutterance\tslot_labels\tintent\n");
        assert!(read_multiatis(&path, "en").unwrap().is_empty());

        let path = write(&dir, "bad.tsv", "id\tutterance\tslot_labels\tintent\n7\ta b c\tO O\tx\n");
        match read_multiatis(&path, "en").unwrap_err() {
            DatasetError::RowArityMismatch { id, tokens, labels, .. } => {
                assert_eq!((id.as_str(), tokens, labels), ("7", 3, 2));
            }
            e => panic!("unexpected {e}"),
        }

        let path = write(&dir, "nocol.tsv", "id\tutterance\tintent\n");
        assert!(matches!(
            read_multiatis(&path, "en").unwrap_err(),
            DatasetError::MissingColumn { column, .. } if column == "slot_labels"
        ));

        let path = write(&dir, "bio.tsv", "id\tutterance\tslot_labels\tintent\n3\ta b\tO I-x\tx\n");
        assert!(matches!(
            read_multiatis(&path, "en").unwrap_err(),
            DatasetError::InvalidRecord {
                source: AnnotationError::MalformedBio { .. },
                ..
            }
        ));

        let path = write(&dir, "empty.tsv", "");
        assert!(matches!(read_multiatis(&path, "en").unwrap_err(), DatasetError::MissingHeader { .. }));
    }

    #[test]
    fn multiatis_write_layout() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("out.tsv");
        write_multiatis(&Dataset::empty("en"), &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "id\tutterance\tslot_labels\tintent\n");

        let utt = AnnotatedUtterance::new(
            "1",
            vec!["hi".into(), "paris".into()],
            vec![BioLabel::Outside, BioLabel::Begin("city".into())],
            "greet",
            "en",
        )
        .unwrap();
        write_multiatis(&Dataset::new("en", vec![utt]).unwrap(), &path).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            "id\tutterance\tslot_labels\tintent\n1\thi paris\tO B-city\tgreet\n"
        );
    }

    #[test]
    fn annot_utt_examples() {
        let (tokens, spans) = parse_annot_utt("wake me at [time : nine am]").unwrap();
        assert_eq!(tokens, ["wake", "me", "at", "nine", "am"]);
        assert_eq!(spans, vec![SlotSpan::new("time", 3, 5)]);

        let (tokens, spans) = parse_annot_utt("hello world").unwrap();
        assert_eq!(tokens.len(), 2);
        assert!(spans.is_empty());

        assert_eq!(
            parse_annot_utt("[a : ]").unwrap_err(),
            AnnotUttError::EmptySlotValue { position: 0 }
        );
    }

    #[test]
    fn annot_utt_real_massive_shapes() {
        // Records in the shape of MASSIVE en-US train data.
        let (tokens, spans) =
            parse_annot_utt("wake me up at [time : five am] this [date : week]").unwrap();
        assert_eq!(tokens.join(" "), "wake me up at five am this week");
        assert_eq!(spans, vec![SlotSpan::new("time", 4, 6), SlotSpan::new("date", 7, 8)]);

        let (tokens, spans) = parse_annot_utt("set an alarm for [time : 5:30 pm]").unwrap();
        assert_eq!(tokens.last().unwrap(), "pm");
        assert_eq!(spans, vec![SlotSpan::new("time", 4, 6)]);
        assert_eq!(tokens[4], "5:30");

        let (tokens, spans) = parse_annot_utt("what's [date : today]'s weather").unwrap();
        assert_eq!(tokens, ["what's", "today", "'s", "weather"]);
        assert_eq!(spans, vec![SlotSpan::new("date", 1, 2)]);
    }

    #[test]
    fn annot_utt_errors() {
        use AnnotUttError::*;
        assert_eq!(parse_annot_utt("a [time : b").unwrap_err(), UnbalancedBracket { position: 2 });
        assert_eq!(parse_annot_utt("a ] b").unwrap_err(), UnbalancedBracket { position: 2 });
        assert_eq!(
            parse_annot_utt("[x : [y : z]]").unwrap_err(),
            UnbalancedBracket { position: 0 }
        );
        assert_eq!(parse_annot_utt("[time nine]").unwrap_err(), MissingColonSeparator { position: 0 });
        assert_eq!(parse_annot_utt("[ : nine]").unwrap_err(), MissingColonSeparator { position: 0 });
    }

    #[test]
    fn substitute_is_single_pass() {
        assert_eq!(substitute("{src}->{tgt}", &[("src", "{tgt}"), ("tgt", "de")]), "{tgt}->de");
        assert_eq!(substitute("{x} {src", &[("src", "en")]), "{x} {src");
    }

    fn pair(src: &str, tgt: &str) -> (AnnotatedUtterance, AnnotatedUtterance) {
        let make = |annot: &str, locale: &str| {
            let (tokens, spans) = parse_annot_utt(annot).unwrap();
            AnnotatedUtterance::from_spans("1", tokens, &spans, "intro", locale).unwrap()
        };
        (make(src, "en-US"), make(tgt, "de-DE"))
    }

    #[test]
    fn export_john_london() {
        let pairs = vec![pair(
            "My name is [name : John] and I live in [city : London]",
            "Mein Name ist [name : John] und ich wohne in [city : London]",
        )];
        let (out, summary) = export_finetune_pairs(&pairs, "en-US", "de-DE", DEFAULT_INSTRUCTION_TEMPLATE);
        assert_eq!(summary.exported, 1);
        assert_eq!(out[0].source_tagged.as_str(), "My name is <a> John <a> and I live in <b> London <b>");
        assert_eq!(out[0].target_tagged.as_str(), "Mein Name ist <a> John <a> und ich wohne in <b> London <b>");
        assert_eq!(
            out[0].instruction,
            "Translate the following sentence from en-US to de-DE, keeping all <x> tags exactly paired around the corresponding words."
        );
    }

    #[test]
    fn export_aligns_reordered_types() {
        let pairs = vec![pair(
            "flights from [city : boston] on [date : monday]",
            "am [date : Montag] Flüge ab [city : Boston]",
        )];
        let (out, _) = export_finetune_pairs(&pairs, "en", "de", "{src}>{tgt}");
        assert_eq!(out[0].source_tagged.as_str(), "flights from <a> boston <a> on <b> monday <b>");
        assert_eq!(out[0].target_tagged.as_str(), "am <b> Montag <b> Flüge ab <a> Boston <a>");
    }

    #[test]
    fn export_skips() {
        let pairs = vec![
            pair("hello there", "hallo da"),
            pair("[a : x] and [b : y]", "[a : x] und y"),
            pair("[a : x]", "[b : x]"),
        ];
        let (out, summary) = export_finetune_pairs(&pairs, "en", "de", DEFAULT_INSTRUCTION_TEMPLATE);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].source_tagged.as_str(), "hello there");
        assert_eq!(out[0].target_tagged.as_str(), "hallo da");
        assert_eq!(summary.skipped_span_count, 1);
        assert_eq!(summary.skipped_slot_types, 1);
        assert_eq!(summary.skipped(), 2);
    }

    #[test]
    fn massive_reading() {
        let dir = TempDir::new().unwrap();
        let path = write(
            &dir,
            "m.jsonl",
            concat!(
                r#"{"id":"1","locale":"en-US","partition":"train","utt":"wake me at nine am","annot_utt":"wake me at [time : nine am]","intent":"alarm_set","scenario":"alarm"}"#, "\n",
                r#"{"id":"1","locale":"de-DE","partition":"train","utt":"weck mich um neun","annot_utt":"weck mich um [time : neun]","intent":"alarm_set"}"#, "\n",
                r#"{"id":"2","locale":"en-US","partition":"dev","utt":"hi","annot_utt":"hi","intent":"greet"}"#, "\n",
            ),
        );
        let corpus = read_massive(&path, None).unwrap();
        assert_eq!(corpus.locales().collect::<Vec<_>>(), ["de-DE", "en-US"]);
        assert_eq!(corpus.aligned_pairs("en-US", "de-DE").len(), 1);
        let train = read_massive(&path, Some("train")).unwrap();
        assert_eq!(train.dataset("en-US").unwrap().len(), 1);

        let bad = write(&dir, "bad.jsonl", r#"{"id":"9","locale":"en-US","utt":"x","intent":"i"}"#);
        match read_massive(&bad, None).unwrap_err() {
            DatasetError::MissingField { field, id, .. } => assert_eq!((field, id.as_str()), ("annot_utt", "9")),
            e => panic!("unexpected {e}"),
        }

        let dup = write(
            &dir,
            "dup.jsonl",
            concat!(
                r#"{"id":"1","locale":"en-US","utt":"x","annot_utt":"x","intent":"i"}"#, "\n",
                r#"{"id":"1","locale":"en-US","utt":"y","annot_utt":"y","intent":"i"}"#, "\n",
            ),
        );
        assert!(matches!(
            read_massive(&dup, None).unwrap_err(),
            DatasetError::DuplicateIdWithinLocale { .. }
        ));
    }

    #[test]
    fn massive_write_then_read() {
        let dir = TempDir::new().unwrap();
        let src = write(
            &dir,
            "m.jsonl",
            concat!(
                r#"{"id":"1","locale":"en-US","utt":"wake me at 5:30 am","annot_utt":"wake me at [time : 5:30 am]","intent":"alarm_set"}"#, "\n",
                r#"{"id":"2","locale":"en-US","utt":"hi","annot_utt":"hi","intent":"greet"}"#, "\n",
            ),
        );
        let corpus = read_massive(&src, None).unwrap();
        let out = dir.path().join("out.jsonl");
        write_massive(corpus.dataset("en-US").unwrap().examples(), &out).unwrap();
        let again = read_massive(&out, None).unwrap();
        assert_eq!(again.dataset("en-US"), corpus.dataset("en-US"));
        let first = std::fs::read_to_string(&out).unwrap();
        assert!(first.starts_with(r#"{"id":"1","locale":"en-US","utt":"wake me at 5:30 am","annot_utt":"wake me at [time : 5:30 am]""#));
    }

    #[test]
    fn massive_six_lines_three_locales() {
        let dir = TempDir::new().unwrap();
        let mut text = String::new();
        for locale in ["en-US", "de-DE", "fr-FR"] {
            for id in ["1", "2"] {
                text.push_str(&format!(
                    "{{\"id\":\"{id}\",\"locale\":\"{locale}\",\"utt\":\"x y\",\"annot_utt\":\"x [t : y]\",\"intent\":\"i\"}}\n"
                ));
            }
        }
        let path = write(&dir, "m.jsonl", &text);
        let corpus = read_massive(&path, None).unwrap();
        let sizes: Vec<usize> = corpus.datasets().map(Dataset::len).collect();
        assert_eq!(sizes, [2, 2, 2]);
    }
}
