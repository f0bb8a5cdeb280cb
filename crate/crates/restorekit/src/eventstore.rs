//! Append-only session logs: `{root}/{session id}/events.jsonl` plus a
//! small `meta.json`. Sessions are rebuilt by replaying their events.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use restorekit_core::orchestrator::{Event, ReplayError, SessionLog};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum EventStoreError {
    #[error("invalid session id `{0}`")]
    BadId(String),
    #[error("session {0} already exists")]
    Duplicate(String),
    #[error("session {0} not found")]
    NotFound(String),
    #[error("{path}:{line}: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
    #[error("replaying {id}: {source}")]
    Replay { id: String, source: ReplayError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Facts about a session that are not events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub profile: String,
    /// Digest of the resolved backend configuration.
    pub fingerprint: String,
    pub auto_advance: bool,
}

#[derive(Debug, Clone)]
pub struct EventStore {
    root: PathBuf,
}

pub fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> EventStoreError + '_ {
    move |source| EventStoreError::Io { path: path.to_path_buf(), source }
}

impl EventStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, EventStoreError> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(io(&root))?;
        Ok(EventStore { root })
    }

    fn dir(&self, id: &str) -> Result<PathBuf, EventStoreError> {
        if !valid_id(id) {
            return Err(EventStoreError::BadId(id.into()));
        }
        Ok(self.root.join(id))
    }

    /// Creates the session directory and writes the first events.
    pub fn create(&self, id: &str, meta: &SessionMeta, events: &[Event]) -> Result<(), EventStoreError> {
        let dir = self.dir(id)?;
        match std::fs::create_dir(&dir) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => return Err(EventStoreError::Duplicate(id.into())),
            Err(e) => return Err(io(&dir)(e)),
        }
        let meta_path = dir.join("meta.json");
        std::fs::write(&meta_path, serde_json::to_vec_pretty(meta).expect("meta serializes")).map_err(io(&meta_path))?;
        self.append(id, events)
    }

    /// Appends and syncs. One JSON object per line.
    pub fn append(&self, id: &str, events: &[Event]) -> Result<(), EventStoreError> {
        if events.is_empty() {
            return Ok(());
        }
        let path = self.dir(id)?.join("events.jsonl");
        let mut buf = Vec::new();
        for e in events {
            serde_json::to_writer(&mut buf, e).expect("events serialize");
            buf.push(b'\n');
        }
        let mut f = OpenOptions::new().create(true).append(true).open(&path).map_err(io(&path))?;
        f.write_all(&buf).map_err(io(&path))?;
        f.sync_data().map_err(io(&path))
    }

    /// Reads a session back. A final line without its newline is a write
    /// that never completed; it is cut off so later appends stay aligned.
    pub fn load(&self, id: &str) -> Result<(SessionLog, SessionMeta), EventStoreError> {
        let dir = self.dir(id)?;
        if !dir.is_dir() {
            return Err(EventStoreError::NotFound(id.into()));
        }
        let meta_path = dir.join("meta.json");
        let meta_bytes = std::fs::read(&meta_path).map_err(io(&meta_path))?;
        let meta: SessionMeta = serde_json::from_slice(&meta_bytes)
            .map_err(|e| EventStoreError::Corrupt { path: meta_path.clone(), line: 1, message: e.to_string() })?;
        let path = dir.join("events.jsonl");
        let f = File::open(&path).map_err(io(&path))?;
        let mut reader = BufReader::new(f);
        let (mut events, mut good_len, mut line_no) = (Vec::new(), 0u64, 0usize);
        let mut line = String::new();
        loop {
            line.clear();
            let n = reader.read_line(&mut line).map_err(io(&path))?;
            if n == 0 {
                break;
            }
            line_no += 1;
            if !line.ends_with('\n') {
                log::warn!("{}: dropping incomplete final line {line_no}", path.display());
                let f = OpenOptions::new().write(true).open(&path).map_err(io(&path))?;
                f.set_len(good_len).map_err(io(&path))?;
                break;
            }
            let event: Event = serde_json::from_str(line.trim_end())
                .map_err(|e| EventStoreError::Corrupt { path: path.clone(), line: line_no, message: e.to_string() })?;
            events.push(event);
            good_len += n as u64;
        }
        let log = SessionLog::replay(&events).map_err(|source| EventStoreError::Replay { id: id.into(), source })?;
        Ok((log, meta))
    }

    pub fn ids(&self) -> Result<Vec<String>, EventStoreError> {
        let mut ids = Vec::new();
        for entry in std::fs::read_dir(&self.root).map_err(io(&self.root))? {
            let entry = entry.map_err(io(&self.root))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if entry.path().join("events.jsonl").is_file() && valid_id(&name) {
                ids.push(name);
            }
        }
        ids.sort();
        Ok(ids)
    }

    pub fn load_all(&self) -> Result<Vec<(SessionLog, SessionMeta)>, EventStoreError> {
        self.ids()?.iter().map(|id| self.load(id)).collect()
    }
}
