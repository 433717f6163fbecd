//! Event persistence: append-only JSONL logs plus optional snapshots.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::{events_from_jsonl, EventRecord, SessionState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub state: SessionState,
}

pub trait EventStore: Send + Sync {
    /// Appends all records or fails; called once per committed turn.
    fn append(&self, session_id: &str, records: &[EventRecord]) -> io::Result<()>;
    fn load(&self, session_id: &str) -> io::Result<Option<Vec<EventRecord>>>;
    fn session_ids(&self) -> io::Result<Vec<String>>;
    fn save_snapshot(&self, snapshot: &Snapshot) -> io::Result<()>;
    fn load_snapshot(&self, session_id: &str) -> io::Result<Option<Snapshot>>;
}

#[derive(Debug, Default)]
pub struct MemoryStore {
    logs: Mutex<BTreeMap<String, Vec<EventRecord>>>,
    snapshots: Mutex<BTreeMap<String, Snapshot>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl EventStore for MemoryStore {
    fn append(&self, session_id: &str, records: &[EventRecord]) -> io::Result<()> {
        self.logs.lock().entry(session_id.to_string()).or_default().extend_from_slice(records);
        Ok(())
    }

    fn load(&self, session_id: &str) -> io::Result<Option<Vec<EventRecord>>> {
        Ok(self.logs.lock().get(session_id).cloned())
    }

    fn session_ids(&self) -> io::Result<Vec<String>> {
        Ok(self.logs.lock().keys().cloned().collect())
    }

    fn save_snapshot(&self, snapshot: &Snapshot) -> io::Result<()> {
        self.snapshots.lock().insert(snapshot.state.id.clone(), snapshot.clone());
        Ok(())
    }

    fn load_snapshot(&self, session_id: &str) -> io::Result<Option<Snapshot>> {
        Ok(self.snapshots.lock().get(session_id).cloned())
    }
}

/// Logs at `<dir>/<id>.events.jsonl`, snapshots at `<dir>/<id>.snapshot.json`.
#[derive(Debug)]
pub struct FileStore {
    dir: PathBuf,
    write_lock: Mutex<()>,
}

const LOG_SUFFIX: &str = ".events.jsonl";
const SNAPSHOT_SUFFIX: &str = ".snapshot.json";

fn check_id(id: &str) -> io::Result<()> {
    if !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
        Ok(())
    } else {
        Err(io::Error::new(io::ErrorKind::InvalidInput, format!("invalid session id {id:?}")))
    }
}

impl FileStore {
    pub fn open(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir, write_lock: Mutex::new(()) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn log_path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}{LOG_SUFFIX}"))
    }

    fn snapshot_path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}{SNAPSHOT_SUFFIX}"))
    }
}

impl EventStore for FileStore {
    fn append(&self, session_id: &str, records: &[EventRecord]) -> io::Result<()> {
        check_id(session_id)?;
        let buf = super::events_to_jsonl(records);
        let _guard = self.write_lock.lock();
        let mut file = OpenOptions::new().create(true).append(true).open(self.log_path(session_id))?;
        file.write_all(buf.as_bytes())?;
        file.sync_data()
    }

    fn load(&self, session_id: &str) -> io::Result<Option<Vec<EventRecord>>> {
        check_id(session_id)?;
        match fs::read_to_string(self.log_path(session_id)) {
            Ok(text) => events_from_jsonl(&text)
                .map(Some)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string())),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    fn session_ids(&self) -> io::Result<Vec<String>> {
        let mut ids: Vec<String> = fs::read_dir(&self.dir)?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().to_str()?.strip_suffix(LOG_SUFFIX).map(str::to_string))
            .collect();
        ids.sort();
        Ok(ids)
    }

    fn save_snapshot(&self, snapshot: &Snapshot) -> io::Result<()> {
        check_id(&snapshot.state.id)?;
        let path = self.snapshot_path(&snapshot.state.id);
        let tmp = path.with_extension("json.tmp");
        let _guard = self.write_lock.lock();
        fs::write(&tmp, serde_json::to_vec(snapshot)?)?;
        fs::rename(tmp, path)
    }

    fn load_snapshot(&self, session_id: &str) -> io::Result<Option<Snapshot>> {
        check_id(session_id)?;
        match fs::read(self.snapshot_path(session_id)) {
            Ok(bytes) => Ok(Some(serde_json::from_slice(&bytes)?)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }
}

/// Current state from the latest snapshot plus the log records after it.
/// Falls back to a full replay if the snapshot does not fit the log.
pub(super) fn restore(store: &dyn EventStore, id: &str) -> Result<Option<(SessionState, Vec<EventRecord>)>, super::SessionError> {
    let Some(records) = store.load(id)? else { return Ok(None) };
    if let Some(snapshot) = store.load_snapshot(id)? {
        let mut state = snapshot.state;
        let tail: Vec<&EventRecord> = records.iter().filter(|r| r.seq > state.applied).collect();
        if (state.applied as usize) <= records.len() && tail.iter().try_for_each(|r| state.apply(r)).is_ok() {
            return Ok(Some((state, records)));
        }
        tracing::warn!(session = id, "snapshot does not match the log; replaying from the start");
    }
    let state = SessionState::replay(&records)?;
    Ok(Some((state, records)))
}
