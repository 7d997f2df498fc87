//! Intent accuracy, exact-match chunk Slot F1 and Overall (semantic frame)
//! accuracy, plus a span-boundary error diagnostic.
//!
//! All three metrics are ratios of integer counts, so they are kept as
//! [`Ratio`]s and only rounded (half-up, to hundredths of a percent) when
//! reported.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::{extract_spans, AnnotatedUtterance, AnnotationError, BioLabel, BioMode, SlotSpan};
use crate::dataset::{self, read_multiatis, Dataset, DatasetError};

pub const PREDICTION_COLUMNS: [&str; 3] = ["id", "predicted_intent", "predicted_slot_labels"];

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("evaluation set is empty")]
    EmptyEvaluationSet,
    #[error("prediction id {0:?} has no gold record")]
    UnmatchedId(String),
    #[error("gold id {0:?} has no prediction")]
    MissingPrediction(String),
    #[error("duplicate prediction id {0:?}")]
    DuplicatePrediction(String),
    #[error("record {id:?}: {predicted} predicted labels for {gold} gold tokens")]
    LengthMismatch { id: String, predicted: usize, gold: usize },
    #[error("{path}:{line}: record {id:?}: {source}")]
    InvalidPrediction {
        path: PathBuf,
        line: usize,
        id: String,
        #[source]
        source: AnnotationError,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// `numerator / denominator` with a zero denominator read as 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ratio {
    pub numerator: u64,
    pub denominator: u64,
}

impl Ratio {
    pub fn new(numerator: u64, denominator: u64) -> Self {
        Ratio { numerator, denominator }
    }

    pub fn value(self) -> f64 {
        if self.denominator == 0 {
            0.0
        } else {
            self.numerator as f64 / self.denominator as f64
        }
    }

    /// Percentage in hundredths, rounded half-up: 2/3 -> 6667 (66.67%).
    pub fn percent_hundredths(self) -> u64 {
        if self.denominator == 0 {
            return 0;
        }
        (self.numerator * 20_000 + self.denominator) / (2 * self.denominator)
    }

    pub fn percent(self) -> f64 {
        self.percent_hundredths() as f64 / 100.0
    }

    pub fn percent_string(self) -> String {
        let h = self.percent_hundredths();
        format!("{}.{:02}", h / 100, h % 100)
    }

    /// Exact comparison by cross-multiplication.
    pub fn le(self, other: Ratio) -> bool {
        let normalized = |r: Ratio| if r.denominator == 0 { Ratio::new(0, 1) } else { r };
        let (a, b) = (normalized(self), normalized(other));
        u128::from(a.numerator) * u128::from(b.denominator) <= u128::from(b.numerator) * u128::from(a.denominator)
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(&self.percent_string())
    }
}

/// Gold and predicted annotations of one utterance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScoredRecord {
    pub id: String,
    pub gold_intent: String,
    pub predicted_intent: String,
    pub gold_spans: Vec<SlotSpan>,
    pub predicted_spans: Vec<SlotSpan>,
}

impl ScoredRecord {
    pub fn intent_correct(&self) -> bool {
        self.gold_intent == self.predicted_intent
    }

    pub fn slots_correct(&self) -> bool {
        self.gold_spans == self.predicted_spans
    }

    /// Predicted spans exactly matching a gold span.
    pub fn correct_spans(&self) -> usize {
        // Both sides come from BIO chunking: sorted and disjoint.
        let (mut i, mut j, mut hits) = (0, 0, 0);
        while i < self.gold_spans.len() && j < self.predicted_spans.len() {
            let (g, p) = (&self.gold_spans[i], &self.predicted_spans[j]);
            match (g.start, g.end).cmp(&(p.start, p.end)) {
                std::cmp::Ordering::Equal => {
                    if g.slot_type == p.slot_type {
                        hits += 1;
                    }
                    i += 1;
                    j += 1;
                }
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
            }
        }
        hits
    }

    /// Predicted spans whose type matches an overlapping gold span with
    /// different boundaries.
    pub fn boundary_errors(&self) -> usize {
        self.predicted_spans
            .iter()
            .filter(|p| {
                !self.gold_spans.contains(p)
                    && self
                        .gold_spans
                        .iter()
                        .any(|g| g.slot_type == p.slot_type && g.overlaps(p) && (g.start, g.end) != (p.start, p.end))
            })
            .count()
    }
}

/// Builds a scored record from a gold utterance and a prediction. Predicted
/// labels are chunked leniently.
pub fn score_prediction(
    gold: &AnnotatedUtterance,
    predicted_intent: &str,
    predicted_labels: &[BioLabel],
) -> Result<ScoredRecord, MetricsError> {
    if predicted_labels.len() != gold.tokens().len() {
        return Err(MetricsError::LengthMismatch {
            id: gold.id().to_string(),
            predicted: predicted_labels.len(),
            gold: gold.tokens().len(),
        });
    }
    Ok(ScoredRecord {
        id: gold.id().to_string(),
        gold_intent: gold.intent().as_str().to_string(),
        predicted_intent: predicted_intent.to_string(),
        gold_spans: gold.spans(),
        predicted_spans: extract_spans(predicted_labels, BioMode::Lenient).expect("lenient chunking is total"),
    })
}

fn non_empty(records: &[ScoredRecord]) -> Result<(), MetricsError> {
    if records.is_empty() {
        Err(MetricsError::EmptyEvaluationSet)
    } else {
        Ok(())
    }
}

pub fn intent_accuracy(records: &[ScoredRecord]) -> Result<Ratio, MetricsError> {
    non_empty(records)?;
    let hits = records.iter().filter(|r| r.intent_correct()).count();
    Ok(Ratio::new(hits as u64, records.len() as u64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotScores {
    pub precision: Ratio,
    pub recall: Ratio,
    pub f1: Ratio,
}

/// Micro-averaged exact-match chunk scores. With no predicted spans the
/// precision is 0; F1 is 0 when precision and recall are both 0.
pub fn slot_f1(records: &[ScoredRecord]) -> Result<SlotScores, MetricsError> {
    non_empty(records)?;
    let (mut correct, mut predicted, mut gold) = (0u64, 0u64, 0u64);
    for r in records {
        correct += r.correct_spans() as u64;
        predicted += r.predicted_spans.len() as u64;
        gold += r.gold_spans.len() as u64;
    }
    Ok(SlotScores {
        precision: Ratio::new(correct, predicted),
        recall: Ratio::new(correct, gold),
        // 2PR / (P + R) reduces to 2c / (predicted + gold).
        f1: Ratio::new(2 * correct, predicted + gold),
    })
}

pub fn overall_accuracy(records: &[ScoredRecord]) -> Result<Ratio, MetricsError> {
    non_empty(records)?;
    let hits = records
        .iter()
        .filter(|r| r.intent_correct() && r.slots_correct())
        .count();
    Ok(Ratio::new(hits as u64, records.len() as u64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Support {
    pub records: u64,
    pub gold_spans: u64,
    pub predicted_spans: u64,
    pub correct_spans: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub intent_accuracy: Ratio,
    pub slot: SlotScores,
    pub overall_accuracy: Ratio,
    pub support: Support,
    pub boundary_error_count: u64,
}

impl MetricsReport {
    pub fn from_records(records: &[ScoredRecord]) -> Result<Self, MetricsError> {
        let slot = slot_f1(records)?;
        Ok(MetricsReport {
            intent_accuracy: intent_accuracy(records)?,
            overall_accuracy: overall_accuracy(records)?,
            support: Support {
                records: records.len() as u64,
                gold_spans: slot.recall.denominator,
                predicted_spans: slot.precision.denominator,
                correct_spans: slot.precision.numerator,
            },
            slot,
            boundary_error_count: records.iter().map(|r| r.boundary_errors() as u64).sum(),
        })
    }

    /// JSON with both exact fractions and rounded percentages.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "intent_accuracy": self.intent_accuracy.percent(),
            "slot_precision": self.slot.precision.percent(),
            "slot_recall": self.slot.recall.percent(),
            "slot_f1": self.slot.f1.percent(),
            "overall_accuracy": self.overall_accuracy.percent(),
            "boundary_error_count": self.boundary_error_count,
            "support": self.support,
            "exact": {
                "intent_accuracy": self.intent_accuracy,
                "slot": self.slot,
                "overall_accuracy": self.overall_accuracy,
            },
        })
    }
}

/// Reports for several languages, with an unweighted average row.
pub fn render_table(reports: &[(String, MetricsReport)]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<8}{:>10}{:>10}{:>10}{:>10}{:>10}{:>10}",
        "lang", "intent", "slot_p", "slot_r", "slot_f1", "overall", "boundary"
    );
    for (lang, r) in reports {
        let _ = writeln!(
            out,
            "{:<8}{:>10}{:>10}{:>10}{:>10}{:>10}{:>10}",
            lang,
            r.intent_accuracy,
            r.slot.precision,
            r.slot.recall,
            r.slot.f1,
            r.overall_accuracy,
            r.boundary_error_count
        );
    }
    if reports.len() > 1 {
        let avg = |f: &dyn Fn(&MetricsReport) -> Ratio| {
            let sum: u64 = reports.iter().map(|(_, r)| f(r).percent_hundredths()).sum();
            Ratio::new(sum, 100 * reports.len() as u64 * 100)
        };
        let _ = writeln!(
            out,
            "{:<8}{:>10}{:>10}{:>10}{:>10}{:>10}{:>10}",
            "AVG",
            avg(&|r| r.intent_accuracy),
            avg(&|r| r.slot.precision),
            avg(&|r| r.slot.recall),
            avg(&|r| r.slot.f1),
            avg(&|r| r.overall_accuracy),
            reports.iter().map(|(_, r)| r.boundary_error_count).sum::<u64>()
        );
    }
    out
}

/// One row of a prediction file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictionRecord {
    pub id: String,
    pub predicted_intent: String,
    pub predicted_labels: Vec<BioLabel>,
}

/// Reads predictions. Accepts the prediction layout
/// (`id, predicted_intent, predicted_slot_labels`) or, for self-scoring, a
/// gold MultiATIS++ file.
pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionRecord>, MetricsError> {
    let path = path.as_ref();
    let header = dataset::read_tsv_header(path)?;
    let columns: [&str; 3] = if header.iter().any(|h| h == "predicted_intent") {
        PREDICTION_COLUMNS
    } else {
        ["id", "intent", "slot_labels"]
    };
    dataset::read_tsv_columns(path, &columns)?
        .into_iter()
        .map(|(line, row)| {
            let [id, intent, labels]: [String; 3] = row.try_into().unwrap();
            let predicted_labels =
                BioLabel::parse_sequence(&labels).map_err(|source| MetricsError::InvalidPrediction {
                    path: path.into(),
                    line,
                    id: id.clone(),
                    source,
                })?;
            Ok(PredictionRecord {
                id,
                predicted_intent: intent,
                predicted_labels,
            })
        })
        .collect()
}

pub fn write_predictions(records: &[PredictionRecord], path: impl AsRef<Path>) -> Result<(), MetricsError> {
    let path = path.as_ref();
    let mut text = PREDICTION_COLUMNS.join("\t");
    text.push('\n');
    for r in records {
        let _ = writeln!(
            text,
            "{}\t{}\t{}",
            r.id,
            r.predicted_intent,
            BioLabel::join_sequence(&r.predicted_labels)
        );
    }
    std::fs::write(path, text).map_err(|e| DatasetError::io(path, e).into())
}

/// Joins predictions to gold by id. Every prediction must have a gold
/// record and every gold record a prediction.
pub fn join_records(gold: &Dataset, predictions: &[PredictionRecord]) -> Result<Vec<ScoredRecord>, MetricsError> {
    let gold_by_id: HashMap<&str, &AnnotatedUtterance> = gold.examples().iter().map(|g| (g.id(), g)).collect();
    let mut by_id: BTreeMap<&str, &PredictionRecord> = BTreeMap::new();
    for p in predictions {
        if !gold_by_id.contains_key(p.id.as_str()) {
            return Err(MetricsError::UnmatchedId(p.id.clone()));
        }
        if by_id.insert(&p.id, p).is_some() {
            return Err(MetricsError::DuplicatePrediction(p.id.clone()));
        }
    }
    gold.examples()
        .iter()
        .map(|g| {
            let p = by_id
                .get(g.id())
                .ok_or_else(|| MetricsError::MissingPrediction(g.id().to_string()))?;
            score_prediction(g, &p.predicted_intent, &p.predicted_labels)
        })
        .collect()
}

/// Scores a prediction file against a gold MultiATIS++ file.
pub fn evaluate(pred_path: impl AsRef<Path>, gold_path: impl AsRef<Path>) -> Result<MetricsReport, MetricsError> {
    let gold = read_multiatis(gold_path, "gold")?;
    let predictions = read_predictions(pred_path)?;
    let records = join_records(&gold, &predictions)?;
    MetricsReport::from_records(&records)
}
