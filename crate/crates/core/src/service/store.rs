//! Append-only event log with periodic snapshots in a data directory.
//!
//! `events.ndjson` holds one [`EventRecord`] per line. `snapshot.json` holds
//! `{"seq": n, "state": ...}` and is replaced atomically; on startup the
//! snapshot is loaded and the events after it are refolded.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::state::{EventRecord, ServiceState};

pub const EVENTS_FILE: &str = "events.ndjson";
pub const SNAPSHOT_FILE: &str = "snapshot.json";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt {file} at line {line}: {message}")]
    Corrupt { file: String, line: usize, message: String },
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Snapshot {
    pub seq: u64,
    pub state: ServiceState,
}

pub struct EventStore {
    dir: PathBuf,
    events: File,
}

/// What a data directory contained when opened.
pub struct Loaded {
    pub store: EventStore,
    pub snapshot: Option<Snapshot>,
    pub events: Vec<EventRecord>,
}

impl EventStore {
    pub fn open(dir: &Path) -> Result<Loaded, StoreError> {
        fs::create_dir_all(dir)?;
        let events_path = dir.join(EVENTS_FILE);
        let events = if events_path.exists() { read_event_log(&events_path)? } else { Vec::new() };
        let snap_path = dir.join(SNAPSHOT_FILE);
        let snapshot = if snap_path.exists() {
            let text = fs::read_to_string(&snap_path)?;
            Some(serde_json::from_str(&text).map_err(|e| StoreError::Corrupt {
                file: SNAPSHOT_FILE.into(),
                line: e.line(),
                message: e.to_string(),
            })?)
        } else {
            None
        };
        let file = OpenOptions::new().create(true).append(true).open(&events_path)?;
        Ok(Loaded { store: EventStore { dir: dir.to_path_buf(), events: file }, snapshot, events })
    }

    pub fn append(&mut self, rec: &EventRecord) -> io::Result<()> {
        let mut line = serde_json::to_string(rec).map_err(io::Error::other)?;
        line.push('\n');
        self.events.write_all(line.as_bytes())?;
        self.events.flush()
    }

    pub fn write_snapshot(&self, state: &ServiceState) -> io::Result<()> {
        let snap = SnapshotRef { seq: state.seq, state };
        let tmp = self.dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        fs::write(&tmp, serde_json::to_vec(&snap).map_err(io::Error::other)?)?;
        fs::rename(tmp, self.dir.join(SNAPSHOT_FILE))
    }
}

#[derive(Serialize)]
struct SnapshotRef<'a> {
    seq: u64,
    state: &'a ServiceState,
}

pub fn read_event_log(path: &Path) -> Result<Vec<EventRecord>, StoreError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| StoreError::Corrupt {
            file: EVENTS_FILE.into(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_event_log(events: &[EventRecord]) -> String {
    events
        .iter()
        .map(|e| serde_json::to_string(e).expect("event serializes") + "\n")
        .collect()
}
