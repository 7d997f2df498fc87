//! Python bindings for `slotproj`.
//!
//! Built as the `slotproj_py` extension module with maturin.

use std::collections::BTreeMap;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;

use slotproj::backend::FaultKind;
use slotproj::dataset::{render_annot_utt, DatasetError};
use slotproj::metrics::{join_records, MetricsError, MetricsReport, PredictionRecord};
use slotproj::pipeline::{project_dataset, ExhaustionAction, PipelineError};
use slotproj::{
    BioLabel, BioMode, Dataset, FaultyBackend, IdentityBackend, ProjectionConfig, ScrambleBackend, SlotSpan,
    TagMap, TaggedSentence, TokenizerMode, Translator,
};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn metrics_err(e: MetricsError) -> PyErr {
    match e {
        MetricsError::Dataset(DatasetError::Io { .. }) => PyOSError::new_err(e.to_string()),
        other => value_err(other),
    }
}

fn parse_labels(labels: &[String]) -> PyResult<Vec<BioLabel>> {
    labels.iter().map(|l| l.parse::<BioLabel>().map_err(value_err)).collect()
}

fn label_strings(labels: &[BioLabel]) -> Vec<String> {
    labels.iter().map(ToString::to_string).collect()
}

fn to_spans(spans: &[(String, usize, usize)]) -> Vec<SlotSpan> {
    spans.iter().map(|(t, s, e)| SlotSpan::new(t.clone(), *s, *e)).collect()
}

fn from_spans(spans: &[SlotSpan]) -> Vec<(String, usize, usize)> {
    spans.iter().map(|s| (s.slot_type.clone(), s.start, s.end)).collect()
}

fn json_to_py<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(value_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

/// A tokenized utterance with BIO slot labels and an intent.
#[pyclass(name = "AnnotatedUtterance", module = "slotproj_py", frozen, eq, skip_from_py_object)]
#[derive(Clone, PartialEq)]
pub struct PyUtterance {
    inner: slotproj::AnnotatedUtterance,
}

#[pymethods]
impl PyUtterance {
    #[new]
    #[pyo3(signature = (id, tokens, labels, intent, locale = "en".to_string()))]
    fn new(id: String, tokens: Vec<String>, labels: Vec<String>, intent: String, locale: String) -> PyResult<Self> {
        let labels = parse_labels(&labels)?;
        let inner = slotproj::AnnotatedUtterance::new(id, tokens, labels, intent, locale).map_err(value_err)?;
        Ok(PyUtterance { inner })
    }

    /// Builds an utterance from `(slot_type, start, end)` spans.
    #[staticmethod]
    #[pyo3(signature = (id, tokens, spans, intent, locale = "en".to_string()))]
    fn from_spans(
        id: String,
        tokens: Vec<String>,
        spans: Vec<(String, usize, usize)>,
        intent: String,
        locale: String,
    ) -> PyResult<Self> {
        let inner = slotproj::AnnotatedUtterance::from_spans(id, tokens, &to_spans(&spans), intent, locale)
            .map_err(value_err)?;
        Ok(PyUtterance { inner })
    }

    #[getter]
    fn id(&self) -> &str {
        self.inner.id()
    }

    #[getter]
    fn tokens(&self) -> Vec<String> {
        self.inner.tokens().to_vec()
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        label_strings(self.inner.labels())
    }

    #[getter]
    fn intent(&self) -> &str {
        self.inner.intent().as_str()
    }

    #[getter]
    fn locale(&self) -> &str {
        self.inner.locale()
    }

    #[getter]
    fn text(&self) -> String {
        self.inner.text()
    }

    fn spans(&self) -> Vec<(String, usize, usize)> {
        from_spans(&self.inner.spans())
    }

    fn slot_values(&self) -> Vec<(String, String)> {
        self.inner.slot_values()
    }

    /// MASSIVE-style `annot_utt` with `[type : value]` groups.
    fn annot_utt(&self) -> String {
        render_annot_utt(self.inner.tokens(), &self.inner.spans())
    }

    fn __repr__(&self) -> String {
        format!(
            "AnnotatedUtterance(id={:?}, text={:?}, intent={:?}, locale={:?})",
            self.inner.id(),
            self.inner.text(),
            self.inner.intent().as_str(),
            self.inner.locale()
        )
    }
}

/// Wraps every slot span in paired markers. Returns the tagged sentence and
/// the tag to slot type map.
#[pyfunction]
fn encode(utt: &PyUtterance) -> PyResult<(String, BTreeMap<String, String>)> {
    let (tagged, map) = slotproj::encode_tagged(&utt.inner).map_err(value_err)?;
    let map = map.entries().iter().map(|e| (e.tag.clone(), e.slot_type.clone())).collect();
    Ok((tagged.into_string(), map))
}

/// Decodes a tagged sentence back into an utterance.
#[pyfunction]
#[pyo3(signature = (tagged, tags, id, intent, locale, tokenizer = None))]
fn decode(
    tagged: &str,
    tags: BTreeMap<String, String>,
    id: &str,
    intent: &str,
    locale: &str,
    tokenizer: Option<&str>,
) -> PyResult<PyUtterance> {
    let map = TagMap::from_entries(tags).ok_or_else(|| value_err("invalid tag map"))?;
    let mode = match tokenizer {
        Some(t) => t.parse::<TokenizerMode>().map_err(value_err)?,
        None => TokenizerMode::for_locale(locale),
    };
    let inner = slotproj::decode_tagged(&TaggedSentence::new(tagged), &map, mode, id, intent, locale)
        .map_err(value_err)?;
    Ok(PyUtterance { inner })
}

#[pyfunction]
fn strip_markers(text: &str) -> String {
    slotproj::strip_markers(text)
}

/// Failure names of `candidate` against the tagged `source`; empty when valid.
#[pyfunction]
fn validate(source: &str, candidate: &str) -> Vec<&'static str> {
    let report = slotproj::validate_tags(&TaggedSentence::new(source), candidate);
    report.failures.iter().map(|f| f.name()).collect()
}

#[pyfunction]
#[pyo3(signature = (labels, lenient = false))]
fn extract_spans(labels: Vec<String>, lenient: bool) -> PyResult<Vec<(String, usize, usize)>> {
    let mode = if lenient { BioMode::Lenient } else { BioMode::Strict };
    let spans = slotproj::extract_spans(&parse_labels(&labels)?, mode).map_err(value_err)?;
    Ok(from_spans(&spans))
}

#[pyfunction]
fn spans_to_bio(spans: Vec<(String, usize, usize)>, token_count: usize) -> PyResult<Vec<String>> {
    let labels = slotproj::spans_to_bio(&to_spans(&spans), token_count).map_err(value_err)?;
    Ok(label_strings(&labels))
}

/// Parses a MASSIVE `annot_utt` into tokens and spans.
#[pyfunction]
fn parse_annot_utt(annot: &str) -> PyResult<(Vec<String>, Vec<(String, usize, usize)>)> {
    let (tokens, spans) = slotproj::parse_annot_utt(annot).map_err(value_err)?;
    Ok((tokens, from_spans(&spans)))
}

#[pyfunction(name = "render_annot_utt")]
fn render_annot(tokens: Vec<String>, spans: Vec<(String, usize, usize)>) -> String {
    render_annot_utt(&tokens, &to_spans(&spans))
}

/// Scores `(id, intent, labels)` predictions against gold utterances.
#[pyfunction]
fn evaluate<'py>(
    py: Python<'py>,
    predictions: Vec<(String, String, Vec<String>)>,
    gold: Vec<PyRef<'py, PyUtterance>>,
) -> PyResult<Bound<'py, PyAny>> {
    let locale = gold.first().map(|g| g.inner.locale().to_string()).unwrap_or_default();
    let gold = Dataset::new(locale, gold.iter().map(|g| g.inner.clone()).collect()).map_err(value_err)?;
    let predictions = predictions
        .into_iter()
        .map(|(id, predicted_intent, labels)| {
            Ok(PredictionRecord {
                id,
                predicted_intent,
                predicted_labels: parse_labels(&labels)?,
            })
        })
        .collect::<PyResult<Vec<_>>>()?;
    let records = join_records(&gold, &predictions).map_err(metrics_err)?;
    let report = MetricsReport::from_records(&records).map_err(metrics_err)?;
    json_to_py(py, &report.to_json())
}

/// Scores a prediction TSV against a gold MultiATIS++ TSV.
#[pyfunction]
fn evaluate_files<'py>(py: Python<'py>, predictions: &str, gold: &str) -> PyResult<Bound<'py, PyAny>> {
    let report = slotproj::evaluate(predictions, gold).map_err(metrics_err)?;
    json_to_py(py, &report.to_json())
}

fn mock_backend(name: &str, fault_prob: f64, fault_kind: FaultKind, seed: u64) -> PyResult<Box<dyn Translator>> {
    Ok(match name {
        "identity" => Box::new(IdentityBackend),
        "scramble" => Box::new(ScrambleBackend::new(seed)),
        "faulty" => {
            if !(0.0..=1.0).contains(&fault_prob) {
                return Err(value_err(format!("fault_prob must be in [0, 1], got {fault_prob}")));
            }
            let mut b = FaultyBackend::new(fault_prob, seed);
            b.kind = fault_kind;
            Box::new(b)
        }
        other => return Err(value_err(format!("unknown backend {other:?} (expected identity, scramble or faulty)"))),
    })
}

/// Projects utterances into `target_locale` through a mock backend with
/// the validation feedback loop. Returns the projected utterances and the
/// corpus statistics.
#[pyfunction]
#[pyo3(signature = (
    utterances,
    target_locale,
    backend = "identity",
    fault_prob = 0.5,
    fault_kind = "drop-last",
    seed = 0,
    max_attempts = 5,
    on_exhaustion = "drop",
    source_locale = "en",
))]
#[allow(clippy::too_many_arguments)]
fn project<'py>(
    py: Python<'py>,
    utterances: Vec<PyRef<'py, PyUtterance>>,
    target_locale: &str,
    backend: &str,
    fault_prob: f64,
    fault_kind: &str,
    seed: u64,
    max_attempts: u32,
    on_exhaustion: &str,
    source_locale: &str,
) -> PyResult<(Vec<PyUtterance>, Bound<'py, PyAny>)> {
    if max_attempts == 0 {
        return Err(value_err("max_attempts must be at least 1"));
    }
    let fault_kind = fault_kind.parse::<FaultKind>().map_err(value_err)?;
    let backend = mock_backend(backend, fault_prob, fault_kind, seed)?;
    let mut config = ProjectionConfig::new(source_locale, target_locale);
    config.policy.max_attempts = max_attempts;
    config.policy.on_exhaustion = on_exhaustion.parse::<ExhaustionAction>().map_err(value_err)?;
    config.decode.seed = Some(seed);

    let examples = utterances.iter().map(|u| u.inner.clone()).collect();
    let dataset = Dataset::new(source_locale, examples).map_err(value_err)?;
    let run = py
        .detach(|| project_dataset(&dataset, backend.as_ref(), &config, None))
        .map_err(|e| match e {
            PipelineError::Backend { .. } => PyOSError::new_err(e.to_string()),
            other => value_err(other),
        })?;
    let projected = run
        .dataset
        .examples()
        .iter()
        .map(|u| PyUtterance { inner: u.clone() })
        .collect();
    Ok((projected, json_to_py(py, &run.stats)?))
}

#[pymodule]
fn slotproj_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyUtterance>()?;
    m.add_function(wrap_pyfunction!(encode, m)?)?;
    m.add_function(wrap_pyfunction!(decode, m)?)?;
    m.add_function(wrap_pyfunction!(strip_markers, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add_function(wrap_pyfunction!(extract_spans, m)?)?;
    m.add_function(wrap_pyfunction!(spans_to_bio, m)?)?;
    m.add_function(wrap_pyfunction!(parse_annot_utt, m)?)?;
    m.add_function(wrap_pyfunction!(render_annot, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_files, m)?)?;
    m.add_function(wrap_pyfunction!(project, m)?)?;
    Ok(())
}
