//! The `slotproj` command line.
//!
//! Exit codes: 0 success, 1 invalid data, 2 I/O or usage errors, 3 fatal
//! translation backend errors (the journal is kept for resuming).

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, CommandFactory, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use slotproj::backend::{EndpointDialect, FaultKind};
use slotproj::pipeline::ExhaustionAction;
use slotproj::TokenizerMode;

#[derive(Debug, Parser)]
#[command(name = "slotproj", version, about = "Project slot annotations across languages with tag-preserving translation")]
pub struct Cli {
    /// Flat `key = value` file; keys are long flag names. Flags override
    /// SLOTPROJ_* environment variables, which override the file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Seed for every random choice (mock backends, decoding requests).
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// More log output; repeat for debug.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert between MultiATIS++ TSV, MASSIVE JSONL and tagged JSONL.
    Convert(ConvertArgs),
    /// Project a dataset into target locales through a translation backend.
    Translate(TranslateArgs),
    /// Check tag integrity of fine-tune pairs or annotation well-formedness of a dataset.
    Validate(ValidateArgs),
    /// Write instruction fine-tuning pairs from aligned MASSIVE locales.
    ExportFinetune(ExportArgs),
    /// Score SLU predictions: intent accuracy, slot F1, overall accuracy.
    Evaluate(EvaluateArgs),
    /// Summarize a dataset, or render a projection stats report as a table.
    Stats(StatsArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    /// MultiATIS++ TSV: id, utterance, slot_labels, intent.
    Multiatis,
    /// MASSIVE JSONL with bracketed `annot_utt`.
    Massive,
    /// JSONL of tagged sentences with their tag map.
    Tagged,
    /// Fine-tune JSONL: instruction, input, output.
    Finetune,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    Http,
    Identity,
    Scramble,
    Faulty,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    #[arg(long, value_name = "PATH")]
    pub input: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub output: PathBuf,
    /// Input format; inferred from the file when omitted.
    #[arg(long, value_enum)]
    pub from: Option<Format>,
    /// Output format; `multiatis` for a .tsv output, else `tagged` (or `massive` when the input is tagged).
    #[arg(long, value_enum)]
    pub to: Option<Format>,
    /// Locale of a MultiATIS++ file, or the locale to keep from a multi-locale file.
    #[arg(long)]
    pub locale: Option<String>,
    /// Keep only MASSIVE records of this partition.
    #[arg(long)]
    pub partition: Option<String>,
    /// Tokenizer for tagged text; by default char for ja/zh, whitespace otherwise.
    #[arg(long, value_parser = parse_tokenizer)]
    pub tokenizer: Option<TokenizerMode>,
}

#[derive(Debug, Args)]
pub struct TranslateArgs {
    #[arg(long, value_name = "PATH")]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub from: Option<Format>,
    /// Output format of the projected datasets.
    #[arg(long, value_enum, default_value = "multiatis")]
    pub to: Format,
    #[arg(long, default_value = "en")]
    pub source_locale: String,
    /// Comma-separated target locales.
    #[arg(long, required = true, value_delimiter = ',')]
    pub targets: Vec<String>,
    /// Directory for `<stem>.<locale>.*` outputs; defaults to the input's directory.
    #[arg(long, value_name = "DIR")]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub partition: Option<String>,
    #[arg(long, value_enum)]
    pub backend: BackendKind,
    /// Feedback-loop attempts per example.
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u32).range(1..))]
    pub max_attempts: u32,
    /// What to do when every attempt fails: drop or copy_source.
    #[arg(long, default_value = "drop", value_parser = parse_exhaustion)]
    pub on_exhaustion: ExhaustionAction,
    #[arg(long, value_parser = parse_tokenizer)]
    pub tokenizer: Option<TokenizerMode>,
    /// Requests in flight at once.
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u64).range(1..))]
    pub max_concurrent: u64,
    /// Per-call corruption probability of the faulty mock.
    #[arg(long, default_value_t = 0.5)]
    pub fault_prob: f64,
    /// Corruption of the faulty mock: drop-last, duplicate-last or either.
    #[arg(long, default_value = "drop-last", value_parser = parse_fault_kind)]
    pub fault_kind: FaultKind,
    /// Sleep before every mock call.
    #[arg(long, default_value_t = 0)]
    pub mock_delay_ms: u64,
    #[arg(long, default_value = "http://127.0.0.1:8000/v1/completions")]
    pub endpoint: String,
    #[arg(long, default_value = "default")]
    pub model: String,
    /// completions or chat.
    #[arg(long, default_value = "completions", value_parser = parse_dialect)]
    pub dialect: EndpointDialect,
    /// Environment variable holding the bearer token; empty sends none.
    #[arg(long, default_value = slotproj::backend::DEFAULT_API_KEY_ENV)]
    pub api_key_env: String,
    #[arg(long, default_value_t = 60)]
    pub timeout_secs: u64,
    /// Retries of rate-limited or failed requests; these are not feedback attempts.
    #[arg(long, default_value_t = 3)]
    pub transport_retries: u32,
    /// File with a prompt template using {src}, {tgt} and {text}.
    #[arg(long, value_name = "PATH")]
    pub prompt_template: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    pub temperature: f64,
    /// Temperature increase per retry.
    #[arg(long, default_value_t = 0.3)]
    pub temperature_step: f64,
    #[arg(long, default_value_t = 1.0)]
    pub max_temperature: f64,
    #[arg(long, default_value_t = 256)]
    pub max_tokens: u32,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long, value_name = "PATH")]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub from: Option<Format>,
    #[arg(long)]
    pub locale: Option<String>,
    #[arg(long, value_parser = parse_tokenizer)]
    pub tokenizer: Option<TokenizerMode>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// MASSIVE JSONL holding the source and target locales.
    #[arg(long, value_name = "PATH")]
    pub input: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub output: PathBuf,
    #[arg(long, default_value = "en-US")]
    pub source_locale: String,
    #[arg(long, required = true, value_delimiter = ',')]
    pub targets: Vec<String>,
    #[arg(long)]
    pub partition: Option<String>,
    /// Instruction text with {src} and {tgt} placeholders.
    #[arg(long, default_value = slotproj::dataset::DEFAULT_INSTRUCTION_TEMPLATE)]
    pub instruction_template: String,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Prediction TSV (id, predicted_intent, predicted_slot_labels); repeat or comma-separate for several languages.
    #[arg(long, required = true, value_delimiter = ',', value_name = "PATH")]
    pub predictions: Vec<PathBuf>,
    /// Gold MultiATIS++ TSV, one per prediction file.
    #[arg(long, required = true, value_delimiter = ',', value_name = "PATH")]
    pub gold: Vec<PathBuf>,
    /// Row labels; default to the gold file stems.
    #[arg(long, value_delimiter = ',')]
    pub langs: Vec<String>,
    /// Also write the JSON report here.
    #[arg(long, value_name = "PATH")]
    pub report: Option<PathBuf>,
    /// Print JSON instead of the table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// A dataset, or a `.stats.json` report written by translate.
    #[arg(long, value_name = "PATH")]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub from: Option<Format>,
    #[arg(long)]
    pub locale: Option<String>,
    #[arg(long)]
    pub partition: Option<String>,
    #[arg(long, value_parser = parse_tokenizer)]
    pub tokenizer: Option<TokenizerMode>,
    #[arg(long)]
    pub json: bool,
}

fn parse_tokenizer(s: &str) -> Result<TokenizerMode, String> {
    s.parse()
}

fn parse_exhaustion(s: &str) -> Result<ExhaustionAction, String> {
    s.parse()
}

fn parse_fault_kind(s: &str) -> Result<FaultKind, String> {
    s.parse()
}

fn parse_dialect(s: &str) -> Result<EndpointDialect, String> {
    s.parse()
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Backend(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Io(_) | CliError::Usage(_) => 2,
            CliError::Backend(_) => 3,
        }
    }
}

pub fn command() -> clap::Command {
    Cli::command()
}

/// Runs the CLI on `argv` with the given environment lookup.
pub fn run(argv: Vec<OsString>, env: impl Fn(&str) -> Option<String>) -> ExitCode {
    let argv = match config::layered_args(&command(), argv, env) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();

    match commands::dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

pub fn main() -> ExitCode {
    run(std::env::args_os().collect(), |k| std::env::var(k).ok())
}
