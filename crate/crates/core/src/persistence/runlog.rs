use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{atomic_write, io_error};
use crate::cost::Usage;
use crate::credit::{CreditReport, TrialRecord};
use crate::engine::{IterationSummary, RunConfig};
use crate::error::PersistenceError;
use crate::ids::TaskId;
use crate::library::{ConsolidationOutcome, Draft, Embedding};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallPurpose {
    Prepare,
    Evaluate,
    TieBreak,
    Extract,
    Merge,
}

/// Content and embedding of an entry right after a merge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedEntry {
    pub content: String,
    pub embedding: Embedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogEvent {
    RunStarted {
        config: RunConfig,
        tasks: Vec<TaskId>,
        embedding_dim: usize,
    },
    /// A trial, logged once its extractions are known.
    Trial { record: TrialRecord },
    /// A model call outside solving: scoring, extraction, merging, judging.
    AuxCall {
        purpose: CallPurpose,
        trial_index: Option<u32>,
        usage: Usage,
    },
    Consolidation {
        draft: Draft,
        new_ig: f64,
        outcome: ConsolidationOutcome,
        merged: Option<MergedEntry>,
    },
    Credit { task_id: TaskId, report: CreditReport },
    ProviderFailure {
        stage: String,
        trial_index: Option<u32>,
        message: String,
    },
    IterationEnd { summary: IterationSummary },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLine {
    pub iteration: u64,
    /// Position within the iteration.
    pub seq: u32,
    pub event: LogEvent,
}

/// Appends whole iterations to a JSON Lines file.
#[derive(Debug)]
pub struct RunLogWriter {
    path: PathBuf,
    file: File,
}

impl RunLogWriter {
    /// Starts a new, empty log.
    pub fn create(path: &Path) -> Result<Self, PersistenceError> {
        let file = File::create(path).map_err(io_error(path))?;
        Ok(RunLogWriter {
            path: path.to_owned(),
            file,
        })
    }

    pub fn append(path: &Path) -> Result<Self, PersistenceError> {
        let file = OpenOptions::new().append(true).open(path).map_err(io_error(path))?;
        Ok(RunLogWriter {
            path: path.to_owned(),
            file,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Writes `events` with consecutive sequence numbers and flushes them in one write.
    pub fn write_iteration(&mut self, iteration: u64, events: &[LogEvent]) -> Result<(), PersistenceError> {
        let mut buf = Vec::new();
        for (seq, event) in events.iter().enumerate() {
            let line = LogLine {
                iteration,
                seq: seq as u32,
                event: event.clone(),
            };
            serde_json::to_writer(&mut buf, &line).map_err(|e| PersistenceError::Serialize(e.to_string()))?;
            buf.push(b'\n');
        }
        self.file.write_all(&buf).map_err(io_error(&self.path))?;
        self.file.sync_data().map_err(io_error(&self.path))
    }
}

pub fn read_log(path: &Path) -> Result<Vec<LogLine>, PersistenceError> {
    let file = File::open(path).map_err(io_error(path))?;
    let mut lines = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_error(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str(&line).map_err(|e| PersistenceError::CorruptLog {
            path: path.to_owned(),
            line: i + 1,
            message: e.to_string(),
        })?;
        lines.push(parsed);
    }
    Ok(lines)
}

/// Drops every line stamped after `iteration`. Used when resuming from a
/// checkpoint older than the log's tail.
pub fn truncate_log(path: &Path, iteration: u64) -> Result<usize, PersistenceError> {
    let text = fs::read_to_string(path).map_err(io_error(path))?;
    let mut kept = String::with_capacity(text.len());
    let mut dropped = 0;
    let lines: Vec<&str> = text.lines().collect();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: LogLine = match serde_json::from_str(line) {
            Ok(p) => p,
            // a torn final line from an interrupted write
            Err(_) if i + 1 == lines.len() => {
                dropped += 1;
                continue;
            }
            Err(e) => {
                return Err(PersistenceError::CorruptLog {
                    path: path.to_owned(),
                    line: i + 1,
                    message: e.to_string(),
                })
            }
        };
        if parsed.iteration <= iteration {
            kept.push_str(line);
            kept.push('\n');
        } else {
            dropped += 1;
        }
    }
    if dropped > 0 {
        atomic_write(path, kept.as_bytes())?;
    }
    Ok(dropped)
}
