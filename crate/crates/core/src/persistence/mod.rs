//! Snapshots, the run log, and the tools that read them back.
//!
//! Snapshots are single JSON documents replaced atomically. The run log is
//! JSON Lines, one event per line, stamped with the iteration and a sequence
//! number within it instead of wall-clock time, so identical runs produce
//! identical logs.

mod runlog;
mod replay;
mod snapshot;

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

pub use self::replay::{curve, inspect, verify, CurvePoint, EntryStats, VerifyReport, VERIFY_TOLERANCE};
pub use self::runlog::{read_log, truncate_log, CallPurpose, LogEvent, LogLine, MergedEntry, RunLogWriter};
pub use self::snapshot::{load_snapshot, save_snapshot, SnapshotDocument, SnapshotRunState, FORMAT_VERSION};
use crate::error::PersistenceError;

pub const SNAPSHOT_FILE: &str = "snapshot.json";
pub const LOG_FILE: &str = "run.jsonl";

/// Where a run keeps its files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }

    pub fn snapshot(&self) -> PathBuf {
        self.root.join(SNAPSHOT_FILE)
    }

    pub fn log(&self) -> PathBuf {
        self.root.join(LOG_FILE)
    }

    pub fn create(&self) -> Result<(), PersistenceError> {
        fs::create_dir_all(&self.root).map_err(io_error(&self.root))
    }
}

pub(crate) fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> PersistenceError + '_ {
    move |source| PersistenceError::Io {
        path: path.to_owned(),
        source,
    }
}

/// Writes to a sibling temporary file, syncs it and renames it over `path`.
pub(crate) fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), PersistenceError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut file = File::create(&tmp).map_err(io_error(&tmp))?;
    file.write_all(bytes).map_err(io_error(&tmp))?;
    file.sync_all().map_err(io_error(&tmp))?;
    drop(file);
    fs::rename(&tmp, path).map_err(io_error(path))
}
