//! Layered configuration: command-line flags override `SLOTPROJ_*`
//! environment variables, which override a flat `key = value` file.
//!
//! Every key is the long name of a flag. The layers are folded into the
//! argument vector before clap parses it, so each flag has exactly one
//! parser, one default and one help line whichever layer supplies it.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Command};
use thiserror::Error;

pub const ENV_PREFIX: &str = "SLOTPROJ_";

/// Flags that are not configuration keys.
const RESERVED: [&str; 3] = ["config", "help", "version"];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: expected `key = value`")]
    Syntax { path: PathBuf, line: usize },
    #[error("{path}:{line}: unknown key {key:?}")]
    UnknownKey { path: PathBuf, line: usize, key: String },
    #[error("{path}:{line}: key {key:?} given twice")]
    DuplicateKey { path: PathBuf, line: usize, key: String },
    #[error("{origin}: {key} expects {expected}, got {value:?}")]
    BadValue {
        origin: String,
        key: String,
        expected: &'static str,
        value: String,
    },
}

/// Name of the environment variable for a key: `max-attempts` is
/// `SLOTPROJ_MAX_ATTEMPTS`.
pub fn env_var(key: &str) -> String {
    format!("{ENV_PREFIX}{}", key.to_ascii_uppercase().replace('-', "_"))
}

/// Every key accepted in a config file: the long flags of all subcommands
/// and global options, minus `config`, `help` and `version`.
pub fn config_keys(cmd: &Command) -> BTreeSet<String> {
    let mut cmd = cmd.clone();
    cmd.build();
    let mut keys = BTreeSet::new();
    let mut collect = |c: &Command| {
        for arg in c.get_arguments() {
            if let Some(long) = arg.get_long() {
                if !RESERVED.contains(&long) {
                    keys.insert(long.to_string());
                }
            }
        }
    };
    collect(&cmd);
    for sub in cmd.get_subcommands() {
        collect(sub);
    }
    keys
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfigFile {
    pub values: BTreeMap<String, String>,
}

impl ConfigFile {
    /// Parses `key = value` lines; blank lines and `#` comments are skipped
    /// and values may be wrapped in double quotes.
    pub fn parse(text: &str, path: &Path, known: &BTreeSet<String>) -> Result<Self, ConfigError> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed.split_once('=').ok_or_else(|| ConfigError::Syntax {
                path: path.into(),
                line,
            })?;
            let key = key.trim();
            let mut value = value.trim();
            if value.len() >= 2 && value.starts_with('"') && value.ends_with('"') {
                value = &value[1..value.len() - 1];
            }
            if !known.contains(key) {
                return Err(ConfigError::UnknownKey {
                    path: path.into(),
                    line,
                    key: key.into(),
                });
            }
            if values.insert(key.to_string(), value.to_string()).is_some() {
                return Err(ConfigError::DuplicateKey {
                    path: path.into(),
                    line,
                    key: key.into(),
                });
            }
        }
        Ok(ConfigFile { values })
    }

    pub fn load(path: &Path, known: &BTreeSet<String>) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.into(),
            source,
        })?;
        Self::parse(&text, path, known)
    }
}

fn parse_bool(origin: &str, key: &str, value: &str) -> Result<bool, ConfigError> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(ConfigError::BadValue {
            origin: origin.into(),
            key: key.into(),
            expected: "a boolean",
            value: value.into(),
        }),
    }
}

/// Scan of the raw argument vector: the subcommand name, the `--config`
/// path and the long flags given explicitly.
struct Scan {
    subcommand: Option<String>,
    config: Option<PathBuf>,
    explicit: BTreeSet<String>,
}

fn scan(cmd: &Command, argv: &[OsString]) -> Scan {
    let mut out = Scan {
        subcommand: None,
        config: None,
        explicit: BTreeSet::new(),
    };
    let takes_value = |c: &Command, long: &str| {
        c.get_arguments()
            .find(|a| a.get_long() == Some(long))
            .is_some_and(|a| matches!(a.get_action(), ArgAction::Set | ArgAction::Append))
    };
    let short_long = |c: &Command, short: char| {
        c.get_arguments()
            .find(|a| a.get_short() == Some(short))
            .and_then(|a| a.get_long())
            .map(String::from)
    };

    let mut current = cmd;
    let mut iter = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned());
    while let Some(token) = iter.next() {
        if token == "--" {
            break;
        }
        if let Some(flag) = token.strip_prefix("--") {
            let (name, inline) = match flag.split_once('=') {
                Some((n, v)) => (n.to_string(), Some(v.to_string())),
                None => (flag.to_string(), None),
            };
            let value = if inline.is_none() && takes_value(current, &name) {
                iter.next()
            } else {
                inline
            };
            if name == "config" {
                out.config = value.map(PathBuf::from);
            }
            out.explicit.insert(name);
        } else if let Some(shorts) = token.strip_prefix('-').filter(|s| !s.is_empty()) {
            for c in shorts.chars() {
                if let Some(long) = short_long(current, c) {
                    out.explicit.insert(long);
                }
            }
        } else if out.subcommand.is_none() {
            if let Some(sub) = cmd.find_subcommand(&token) {
                out.subcommand = Some(sub.get_name().to_string());
                current = sub;
            }
        }
    }
    out
}

/// Folds environment variables and the config file into `argv`.
///
/// A key is taken from the first layer that has it: the command line, then
/// `env`, then the file named by `--config`. `env` is injected so tests do
/// not depend on the process environment.
pub fn layered_args(
    cmd: &Command,
    argv: Vec<OsString>,
    env: impl Fn(&str) -> Option<String>,
) -> Result<Vec<OsString>, ConfigError> {
    let mut cmd = cmd.clone();
    cmd.build();
    let scanned = scan(&cmd, &argv);
    let Some(sub_name) = scanned.subcommand else {
        return Ok(argv);
    };
    let sub = cmd.find_subcommand(&sub_name).expect("scanned subcommand exists");

    let file = match &scanned.config {
        Some(path) => ConfigFile::load(path, &config_keys(&cmd))?,
        None => ConfigFile::default(),
    };
    let file_origin = scanned
        .config
        .as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_default();

    let mut extra: Vec<OsString> = Vec::new();
    for arg in sub.get_arguments() {
        let Some(long) = arg.get_long() else { continue };
        if RESERVED.contains(&long) || scanned.explicit.contains(long) {
            continue;
        }
        let var = env_var(long);
        let (value, origin) = match env(&var).filter(|v| !v.is_empty()) {
            Some(v) => (v, var),
            None => match file.values.get(long) {
                Some(v) => (v.clone(), file_origin.clone()),
                None => continue,
            },
        };
        match arg.get_action() {
            ArgAction::SetTrue => {
                if parse_bool(&origin, long, &value)? {
                    extra.push(format!("--{long}").into());
                }
            }
            ArgAction::Count => {
                let n: u8 = value.parse().map_err(|_| ConfigError::BadValue {
                    origin: origin.clone(),
                    key: long.into(),
                    expected: "a count",
                    value: value.clone(),
                })?;
                extra.extend((0..n).map(|_| OsString::from(format!("--{long}"))));
            }
            _ => extra.push(format!("--{long}={value}").into()),
        }
    }
    log::trace!("layered arguments: {extra:?}");
    let mut merged = argv;
    merged.extend(extra);
    Ok(merged)
}
