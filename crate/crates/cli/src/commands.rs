use std::collections::{BTreeMap, HashSet};
use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::time::Duration;

use slotproj::backend::{BackendConfig, DelayedBackend};
use slotproj::dataset::{self, DatasetError, TaggedRecord};
use slotproj::journal::{Journal, JournalError};
use slotproj::metrics::{self, MetricsError, MetricsReport};
use slotproj::pipeline::{PipelineError, RetryPolicy};
use slotproj::{
    validate_tags, CorpusStats, Dataset, DecodeSchedule, FaultyBackend, HttpBackend, IdentityBackend,
    ProjectionConfig, ScrambleBackend, TaggedSentence, TokenizerMode, Translator,
};

use crate::{
    BackendKind, Cli, CliError, Command, ConvertArgs, EvaluateArgs, ExportArgs, Format, StatsArgs, TranslateArgs,
    ValidateArgs,
};

type Result<T> = std::result::Result<T, CliError>;

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        if e.is_validation() {
            CliError::Invalid(e.to_string())
        } else {
            CliError::Io(e.to_string())
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::Dataset(d) => d.into(),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

impl From<JournalError> for CliError {
    fn from(e: JournalError) -> Self {
        match e {
            JournalError::Io { .. } => CliError::Io(e.to_string()),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Backend { .. } => CliError::Backend(e.to_string()),
            PipelineError::Journal(j) => j.into(),
            PipelineError::Dataset(d) => d.into(),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Convert(a) => convert(a),
        Command::Translate(a) => translate(a, cli.seed),
        Command::Validate(a) => validate(a),
        Command::ExportFinetune(a) => export_finetune(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Stats(a) => stats(a),
    }
}

/// Infers a file format: `.tsv` is MultiATIS++, JSONL is told apart by the
/// keys of its first record.
pub fn detect_format(path: &Path) -> Result<Format> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("tsv")) {
        return Ok(Format::Multiatis);
    }
    let file = std::fs::File::open(path).map_err(|e| io_error(path, e))?;
    for line in std::io::BufReader::new(file).lines() {
        let line = line.map_err(|e| io_error(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line)
            .map_err(|e| CliError::Invalid(format!("{}: first record is not JSON: {e}", path.display())))?;
        let has = |k: &str| value.get(k).is_some();
        return if has("annot_utt") {
            Ok(Format::Massive)
        } else if has("tags") {
            Ok(Format::Tagged)
        } else if has("instruction") {
            Ok(Format::Finetune)
        } else {
            Err(CliError::Usage(format!(
                "{}: cannot infer the format; pass --from",
                path.display()
            )))
        };
    }
    Err(CliError::Usage(format!("{}: empty file, cannot infer the format; pass --from", path.display())))
}

fn resolve_format(path: &Path, given: Option<Format>) -> Result<Format> {
    match given {
        Some(f) => Ok(f),
        None => detect_format(path),
    }
}

fn tokenizer_for(explicit: Option<TokenizerMode>, locale: &str) -> TokenizerMode {
    explicit.unwrap_or_else(|| TokenizerMode::for_locale(locale))
}

/// Reads a dataset file into one dataset per locale, in file order.
pub fn load_datasets(
    path: &Path,
    format: Format,
    locale: Option<&str>,
    partition: Option<&str>,
    tokenizer: Option<TokenizerMode>,
) -> Result<Vec<Dataset>> {
    let mut datasets = match format {
        Format::Multiatis => vec![slotproj::read_multiatis(path, locale.unwrap_or("en"))?],
        Format::Massive => slotproj::read_massive(path, partition)?.datasets().cloned().collect(),
        Format::Tagged => {
            let records = dataset::read_tagged_jsonl(path)?;
            let mut grouped: Vec<(String, Vec<_>)> = Vec::new();
            for r in records {
                let utt = r
                    .decode(tokenizer_for(tokenizer, &r.locale))
                    .map_err(|e| CliError::Invalid(format!("{}: record {:?}: {e}", path.display(), r.id)))?;
                match grouped.iter_mut().find(|(l, _)| *l == r.locale) {
                    Some((_, v)) => v.push(utt),
                    None => grouped.push((r.locale.clone(), vec![utt])),
                }
            }
            grouped
                .into_iter()
                .map(|(l, v)| Dataset::new(l, v))
                .collect::<std::result::Result<_, _>>()?
        }
        Format::Finetune => {
            return Err(CliError::Usage(format!(
                "{}: fine-tune pairs are not an annotated dataset",
                path.display()
            )))
        }
    };
    if let (Some(l), Format::Massive | Format::Tagged) = (locale, format) {
        datasets.retain(|d| d.locale() == l);
        if datasets.is_empty() {
            return Err(CliError::Invalid(format!("{}: no records for locale {l}", path.display())));
        }
    }
    Ok(datasets)
}

pub fn write_datasets(datasets: &[Dataset], path: &Path, format: Format) -> Result<()> {
    match format {
        Format::Multiatis => match datasets {
            [] => slotproj::write_multiatis(&Dataset::empty("en"), path)?,
            [one] => slotproj::write_multiatis(one, path)?,
            _ => {
                let locales: Vec<&str> = datasets.iter().map(Dataset::locale).collect();
                return Err(CliError::Usage(format!(
                    "a MultiATIS++ file holds one locale but the input has {}; pass --locale",
                    locales.join(", ")
                )));
            }
        },
        Format::Massive => dataset::write_massive(datasets.iter().flat_map(Dataset::examples), path)?,
        Format::Tagged => {
            let records = datasets
                .iter()
                .flat_map(Dataset::examples)
                .map(|u| {
                    TaggedRecord::encode(u).map_err(|e| CliError::Invalid(format!("record {:?}: {e}", u.id())))
                })
                .collect::<Result<Vec<_>>>()?;
            dataset::write_tagged_jsonl(&records, path)?;
        }
        Format::Finetune => {
            return Err(CliError::Usage("use export-finetune to write fine-tune pairs".into()));
        }
    }
    Ok(())
}

fn convert(a: &ConvertArgs) -> Result<()> {
    let from = resolve_format(&a.input, a.from)?;
    let to = a.to.unwrap_or_else(|| default_output_format(from, &a.output));
    let datasets = load_datasets(&a.input, from, a.locale.as_deref(), a.partition.as_deref(), a.tokenizer)?;
    write_datasets(&datasets, &a.output, to)?;
    let n: usize = datasets.iter().map(Dataset::len).sum();
    println!(
        "converted {n} records ({} -> {}) to {}",
        format_name(from),
        format_name(to),
        a.output.display()
    );
    Ok(())
}

/// `.tsv` outputs are MultiATIS++; other outputs are tagged JSONL, or
/// MASSIVE JSONL when the input is already tagged.
fn default_output_format(from: Format, output: &Path) -> Format {
    if output.extension().is_some_and(|e| e.eq_ignore_ascii_case("tsv")) {
        Format::Multiatis
    } else if from == Format::Tagged {
        Format::Massive
    } else {
        Format::Tagged
    }
}

fn format_name(f: Format) -> &'static str {
    match f {
        Format::Multiatis => "multiatis",
        Format::Massive => "massive",
        Format::Tagged => "tagged",
        Format::Finetune => "finetune",
    }
}

fn extension(f: Format) -> &'static str {
    match f {
        Format::Multiatis => "tsv",
        _ => "jsonl",
    }
}

/// Output paths of one target locale: dataset, stats report, journal.
pub fn output_paths(input: &Path, out_dir: &Path, locale: &str, format: Format) -> (PathBuf, PathBuf, PathBuf) {
    let stem = input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "data".into());
    (
        out_dir.join(format!("{stem}.{locale}.{}", extension(format))),
        out_dir.join(format!("{stem}.{locale}.stats.json")),
        out_dir.join(format!("{stem}.{locale}.journal.jsonl")),
    )
}

fn build_backend(a: &TranslateArgs, seed: u64) -> Result<Box<dyn Translator>> {
    let workers = a.max_concurrent as usize;
    let delay = Duration::from_millis(a.mock_delay_ms);
    Ok(match a.backend {
        BackendKind::Identity => Box::new(DelayedBackend::new(IdentityBackend, delay, workers)),
        BackendKind::Scramble => Box::new(DelayedBackend::new(ScrambleBackend::new(seed), delay, workers)),
        BackendKind::Faulty => {
            if !(0.0..=1.0).contains(&a.fault_prob) {
                return Err(CliError::Usage(format!("--fault-prob must be in [0, 1], got {}", a.fault_prob)));
            }
            let faulty = FaultyBackend::new(a.fault_prob, seed).with_kind(a.fault_kind);
            Box::new(DelayedBackend::new(faulty, delay, workers))
        }
        BackendKind::Http => {
            let prompt_template = match &a.prompt_template {
                Some(p) => std::fs::read_to_string(p).map_err(|e| io_error(p, e))?,
                None => slotproj::backend::DEFAULT_PROMPT_TEMPLATE.to_string(),
            };
            if !prompt_template.contains("{text}") {
                return Err(CliError::Usage("the prompt template has no {text} placeholder".into()));
            }
            Box::new(HttpBackend::new(BackendConfig {
                endpoint: a.endpoint.clone(),
                model: a.model.clone(),
                prompt_template,
                dialect: a.dialect,
                timeout: Duration::from_secs(a.timeout_secs),
                max_concurrent: workers,
                api_key_env: Some(a.api_key_env.clone()).filter(|s| !s.is_empty()),
                transport_retries: a.transport_retries,
                ..BackendConfig::default()
            }))
        }
    })
}

fn translate(a: &TranslateArgs, seed: u64) -> Result<()> {
    let from = resolve_format(&a.input, a.from)?;
    let source = load_datasets(&a.input, from, Some(&a.source_locale), a.partition.as_deref(), a.tokenizer)?
        .into_iter()
        .next()
        .expect("load_datasets keeps the requested locale");
    let out_dir = match &a.output_dir {
        Some(d) => d.clone(),
        None => a.input.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    if !out_dir.as_os_str().is_empty() {
        std::fs::create_dir_all(&out_dir).map_err(|e| io_error(&out_dir, e))?;
    }
    let backend = build_backend(a, seed)?;
    let mut seen = HashSet::new();

    for target in &a.targets {
        if !seen.insert(target.as_str()) {
            continue;
        }
        let (data_path, stats_path, journal_path) = output_paths(&a.input, &out_dir, target, a.to);
        let config = ProjectionConfig {
            policy: RetryPolicy {
                max_attempts: a.max_attempts,
                on_exhaustion: a.on_exhaustion,
            },
            tokenizer: a.tokenizer,
            decode: DecodeSchedule {
                base_temperature: a.temperature,
                temperature_step: a.temperature_step,
                max_temperature: a.max_temperature,
                max_tokens: a.max_tokens,
                seed: Some(seed),
            },
            ..ProjectionConfig::new(source.locale(), target.as_str())
        };
        let mut journal = Journal::open(&journal_path)?;
        if !journal.is_empty() {
            log::info!("{target}: resuming with {} journaled examples", journal.len());
        }
        let run = slotproj::project_dataset(&source, backend.as_ref(), &config, Some(&mut journal)).map_err(|e| {
            let err = CliError::from(e);
            if let CliError::Backend(msg) = &err {
                return CliError::Backend(format!(
                    "{target}: {msg}; progress kept in {}, re-run to resume",
                    journal_path.display()
                ));
            }
            err
        })?;
        write_datasets(std::slice::from_ref(&run.dataset), &data_path, a.to)?;
        std::fs::write(&stats_path, run.stats.to_json()).map_err(|e| io_error(&stats_path, e))?;
        eprintln!(
            "{target}: {}/{} done, translated {}, dropped {}, copied {} (resumed {})",
            run.stats.input,
            source.len(),
            run.stats.translated,
            run.stats.dropped,
            run.stats.copied,
            run.resumed
        );
        println!("{}", data_path.display());
    }
    Ok(())
}

fn validate(a: &ValidateArgs) -> Result<()> {
    let format = resolve_format(&a.input, a.from)?;
    let mut invalid: Vec<String> = Vec::new();
    let mut histogram: BTreeMap<&'static str, usize> = BTreeMap::new();
    let total = match format {
        Format::Finetune => {
            let records = dataset::read_finetune_jsonl(&a.input)?;
            for (i, r) in records.iter().enumerate() {
                let report = validate_tags(&TaggedSentence::new(r.input.as_str()), &r.output);
                if !report.is_valid() {
                    let names: Vec<&str> = report.failures.iter().map(|f| f.name()).collect();
                    for n in &names {
                        *histogram.entry(n).or_default() += 1;
                    }
                    invalid.push(format!("record {}: {}", i + 1, names.join(", ")));
                }
            }
            records.len()
        }
        Format::Tagged => {
            let records = dataset::read_tagged_jsonl(&a.input)?;
            for r in &records {
                if a.locale.as_deref().is_some_and(|l| l != r.locale) {
                    continue;
                }
                let report = validate_tags(&r.text, r.text.as_str());
                let decoded = r.decode(tokenizer_for(a.tokenizer, &r.locale));
                if let Err(e) = decoded {
                    invalid.push(format!("record {:?}: {e}", r.id));
                } else if !report.is_valid() {
                    let names: Vec<&str> = report.failures.iter().map(|f| f.name()).collect();
                    invalid.push(format!("record {:?}: {}", r.id, names.join(", ")));
                }
            }
            records.len()
        }
        _ => {
            // Reading already enforces every annotation invariant.
            let datasets = load_datasets(&a.input, format, a.locale.as_deref(), None, a.tokenizer)?;
            datasets.iter().map(Dataset::len).sum()
        }
    };
    for line in &invalid {
        eprintln!("invalid: {line}");
    }
    for (k, v) in &histogram {
        println!("{k:<28}{v:>8}");
    }
    println!("{total} records, {} valid, {} invalid", total - invalid.len(), invalid.len());
    if invalid.is_empty() {
        Ok(())
    } else {
        Err(CliError::Invalid(format!("{}: {} invalid records", a.input.display(), invalid.len())))
    }
}

fn export_finetune(a: &ExportArgs) -> Result<()> {
    let corpus = slotproj::read_massive(&a.input, a.partition.as_deref())?;
    if corpus.dataset(&a.source_locale).is_none() && corpus.locales().next().is_some() {
        log::warn!("{}: no records for source locale {}", a.input.display(), a.source_locale);
    }
    let mut all = Vec::new();
    for target in &a.targets {
        let pairs = corpus.aligned_pairs(&a.source_locale, target);
        let (exported, summary) =
            slotproj::export_finetune_pairs(&pairs, &a.source_locale, target, &a.instruction_template);
        println!(
            "{target}: exported {}, skipped {} (span count {}, slot types {}, marker collision {})",
            summary.exported,
            summary.skipped(),
            summary.skipped_span_count,
            summary.skipped_slot_types,
            summary.skipped_marker_collision
        );
        all.extend(exported);
    }
    dataset::write_finetune_jsonl(&all, &a.output)?;
    Ok(())
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    if a.predictions.len() != a.gold.len() {
        return Err(CliError::Usage(format!(
            "{} prediction files but {} gold files",
            a.predictions.len(),
            a.gold.len()
        )));
    }
    if !a.langs.is_empty() && a.langs.len() != a.gold.len() {
        return Err(CliError::Usage(format!("{} labels for {} gold files", a.langs.len(), a.gold.len())));
    }
    let mut reports: Vec<(String, MetricsReport)> = Vec::new();
    for (i, (pred, gold)) in a.predictions.iter().zip(&a.gold).enumerate() {
        let label = a.langs.get(i).cloned().unwrap_or_else(|| {
            gold.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| i.to_string())
        });
        let report = metrics::evaluate(pred, gold).map_err(|e| match e {
            MetricsError::Dataset(d) => CliError::from(d),
            other => CliError::Invalid(format!("{}: {other}", pred.display())),
        })?;
        reports.push((label, report));
    }
    let json = serde_json::Value::Object(reports.iter().map(|(l, r)| (l.clone(), r.to_json())).collect());
    let json_text = serde_json::to_string_pretty(&json).expect("report serializes") + "\n";
    if let Some(path) = &a.report {
        std::fs::write(path, &json_text).map_err(|e| io_error(path, e))?;
    }
    if a.json {
        print!("{json_text}");
    } else {
        print!("{}", metrics::render_table(&reports));
    }
    Ok(())
}

fn stats(a: &StatsArgs) -> Result<()> {
    let name = a.input.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    if name.ends_with(".stats.json") {
        let text = std::fs::read_to_string(&a.input).map_err(|e| io_error(&a.input, e))?;
        let report: CorpusStats = serde_json::from_str(&text)
            .map_err(|e| CliError::Invalid(format!("{}: not a stats report: {e}", a.input.display())))?;
        if a.json {
            print!("{}", report.to_json());
        } else {
            print!("{}", report.render_table());
        }
        return Ok(());
    }
    let format = resolve_format(&a.input, a.from)?;
    let datasets = load_datasets(&a.input, format, a.locale.as_deref(), a.partition.as_deref(), a.tokenizer)?;
    let rows: Vec<Summary> = datasets.iter().map(Summary::of).collect();
    if a.json {
        let json: Vec<serde_json::Value> = rows.iter().map(Summary::to_json).collect();
        println!("{}", serde_json::to_string_pretty(&json).expect("summary serializes"));
        return Ok(());
    }
    println!(
        "{:<10}{:>10}{:>10}{:>10}{:>10}{:>12}",
        "locale", "records", "tokens", "spans", "intents", "slot_types"
    );
    for r in &rows {
        println!(
            "{:<10}{:>10}{:>10}{:>10}{:>10}{:>12}",
            r.locale, r.records, r.tokens, r.spans, r.intents, r.slot_types
        );
    }
    Ok(())
}

struct Summary {
    locale: String,
    records: usize,
    tokens: usize,
    spans: usize,
    intents: usize,
    slot_types: usize,
}

impl Summary {
    fn of(d: &Dataset) -> Self {
        Summary {
            locale: d.locale().to_string(),
            records: d.len(),
            tokens: d.examples().iter().map(|u| u.tokens().len()).sum(),
            spans: d.examples().iter().map(|u| u.spans().len()).sum(),
            intents: d.intent_inventory().len(),
            slot_types: d.slot_inventory().len(),
        }
    }

    fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "locale": self.locale,
            "records": self.records,
            "tokens": self.tokens,
            "spans": self.spans,
            "intents": self.intents,
            "slot_types": self.slot_types,
        })
    }
}
