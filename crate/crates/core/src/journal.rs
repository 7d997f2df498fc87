//! Append-only JSONL record of per-example projection outcomes, so an
//! interrupted run can resume without re-translating finished examples.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pipeline::OutcomeStatus;
use crate::validation::ValidationFailure;

#[derive(Debug, Error)]
pub enum JournalError {
    #[error("journal {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("journal {path}:{line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("journal {path}: id {id:?} recorded twice")]
    DuplicateId { path: PathBuf, id: String },
}

/// One attempt as stored in the journal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttemptEntry {
    pub text: String,
    pub failures: Vec<ValidationFailure>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub id: String,
    pub status: OutcomeStatus,
    pub attempts: u32,
    /// The accepted tagged candidate; absent for dropped or copied examples.
    pub target_text: Option<String>,
    #[serde(default)]
    pub history: Vec<AttemptEntry>,
}

pub struct Journal {
    path: PathBuf,
    file: File,
    entries: HashMap<String, JournalEntry>,
}

impl Journal {
    /// Opens (or creates) a journal, loading existing entries. A trailing
    /// partial line left by a killed process is discarded.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, JournalError> {
        let path = path.as_ref().to_path_buf();
        let io_err = |source| JournalError::Io {
            path: path.clone(),
            source,
        };
        let mut entries = HashMap::new();
        let mut valid_len: u64 = 0;

        if path.exists() {
            let mut reader = BufReader::new(File::open(&path).map_err(io_err)?);
            let mut line = String::new();
            let mut line_no = 0;
            loop {
                line.clear();
                let n = reader.read_line(&mut line).map_err(io_err)?;
                if n == 0 {
                    break;
                }
                line_no += 1;
                if !line.ends_with('\n') {
                    log::warn!("{}: discarding truncated final line", path.display());
                    break;
                }
                let entry: JournalEntry =
                    serde_json::from_str(line.trim_end()).map_err(|e| JournalError::Corrupt {
                        path: path.clone(),
                        line: line_no,
                        message: e.to_string(),
                    })?;
                if entries.contains_key(&entry.id) {
                    return Err(JournalError::DuplicateId {
                        path: path.clone(),
                        id: entry.id,
                    });
                }
                entries.insert(entry.id.clone(), entry);
                valid_len += n as u64;
            }
        }

        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err)?;
        if file.metadata().map_err(io_err)?.len() != valid_len {
            file.set_len(valid_len).map_err(io_err)?;
        }
        Ok(Journal { path, file, entries })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn get(&self, id: &str) -> Option<&JournalEntry> {
        self.entries.get(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Writes one entry and flushes it to the OS before returning.
    pub fn append(&mut self, entry: JournalEntry) -> Result<(), JournalError> {
        if self.entries.contains_key(&entry.id) {
            return Err(JournalError::DuplicateId {
                path: self.path.clone(),
                id: entry.id,
            });
        }
        let mut line = serde_json::to_string(&entry).expect("journal entries serialize");
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|source| JournalError::Io {
                path: self.path.clone(),
                source,
            })?;
        self.entries.insert(entry.id.clone(), entry);
        Ok(())
    }
}
