use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{atomic_write, io_error};
use crate::cost::CostLedger;
use crate::credit::{TrialRecord, WeightingConfig};
use crate::engine::{BestSolution, IterationSummary, RunState};
use crate::error::PersistenceError;
use crate::ids::TaskId;
use crate::library::{Abstraction, Library};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRunState {
    pub iteration: u64,
    pub best_solutions: BTreeMap<TaskId, BestSolution>,
    pub ledger: CostLedger,
    pub records: Vec<TrialRecord>,
    pub summaries: Vec<IterationSummary>,
}

/// A library plus the run state around it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotDocument {
    pub format_version: u32,
    pub embedding_dim: usize,
    pub weighting: WeightingConfig,
    pub next_id: u64,
    pub entries: Vec<Abstraction>,
    pub run_state: SnapshotRunState,
}

impl SnapshotDocument {
    pub fn from_state(state: &RunState) -> Self {
        SnapshotDocument {
            format_version: FORMAT_VERSION,
            embedding_dim: state.library.embedding_dim(),
            weighting: state.library.config().clone(),
            next_id: state.library.next_id(),
            entries: state.library.iter().cloned().collect(),
            run_state: SnapshotRunState {
                iteration: state.iteration,
                best_solutions: state.best_solutions.clone(),
                ledger: state.ledger,
                records: state.records.clone(),
                summaries: state.summaries.clone(),
            },
        }
    }

    pub fn library(&self) -> Result<Library, PersistenceError> {
        Library::from_parts(self.embedding_dim, self.weighting.clone(), self.entries.clone(), self.next_id).map_err(|e| {
            PersistenceError::Corrupt {
                path: Default::default(),
                message: e.to_string(),
            }
        })
    }

    pub fn into_state(self) -> Result<RunState, PersistenceError> {
        let library = self.library()?;
        let r = self.run_state;
        Ok(RunState {
            iteration: r.iteration,
            library,
            best_solutions: r.best_solutions,
            records: r.records,
            ledger: r.ledger,
            summaries: r.summaries,
        })
    }

    /// Refuses a snapshot whose embedding dimension differs from `expected`.
    pub fn check_dim(&self, expected: usize) -> Result<(), PersistenceError> {
        if self.embedding_dim != expected {
            return Err(PersistenceError::Dimension {
                found: self.embedding_dim,
                expected,
            });
        }
        Ok(())
    }
}

pub fn save_snapshot(path: &Path, doc: &SnapshotDocument) -> Result<(), PersistenceError> {
    let bytes = serde_json::to_vec_pretty(doc).map_err(|e| PersistenceError::Serialize(e.to_string()))?;
    atomic_write(path, &bytes)
}

/// Parses and validates a snapshot. Nothing is returned unless the whole
/// document is sound; errors in an entry name its id.
pub fn load_snapshot(path: &Path) -> Result<SnapshotDocument, PersistenceError> {
    let text = fs::read_to_string(path).map_err(io_error(path))?;
    let corrupt = |message: String| PersistenceError::Corrupt {
        path: path.to_owned(),
        message,
    };
    let mut value: Value = serde_json::from_str(&text).map_err(|e| corrupt(e.to_string()))?;
    let version = value
        .get("format_version")
        .and_then(Value::as_u64)
        .ok_or_else(|| corrupt("missing format_version".into()))?;
    if version != FORMAT_VERSION as u64 {
        return Err(PersistenceError::Version {
            found: version as u32,
            expected: FORMAT_VERSION,
        });
    }
    let raw_entries = match value.get_mut("entries").map(Value::take) {
        Some(Value::Array(items)) => items,
        _ => return Err(corrupt("missing entries array".into())),
    };
    value["entries"] = Value::Array(Vec::new());
    let mut doc: SnapshotDocument = serde_json::from_value(value).map_err(|e| corrupt(e.to_string()))?;
    for (i, raw) in raw_entries.into_iter().enumerate() {
        let name = match raw.get("id").and_then(Value::as_u64) {
            Some(id) => format!("entry z{id}"),
            None => format!("entry #{i} (no id)"),
        };
        let entry: Abstraction = serde_json::from_value(raw).map_err(|e| corrupt(format!("{name}: {e}")))?;
        doc.entries.push(entry);
    }
    doc.library().map_err(|e| match e {
        PersistenceError::Corrupt { message, .. } => corrupt(message),
        other => other,
    })?;
    Ok(doc)
}
