//! Chat sessions persisted as append-only JSON lines, one file per session,
//! with an index file rebuilt from those files at startup.

use crate::app::write_atomic;
use crate::llm::{ChatMessage, Role};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("unknown session {0}")]
    NotFound(String),
    #[error("session {0} already has a turn in flight")]
    Busy(String),
    #[error("corrupt session file {path}: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionKind {
    Investigate,
    Read,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    pub kind: SessionKind,
    pub doc_ids: Vec<String>,
    pub messages: Vec<ChatMessage>,
    pub created: u64,
    pub updated: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum Line {
    Session {
        session_id: String,
        kind: SessionKind,
        doc_ids: Vec<String>,
        created: u64,
    },
    Message {
        role: Role,
        content: String,
        at: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub kind: SessionKind,
    pub doc_ids: Vec<String>,
    pub messages: usize,
    pub created: u64,
    pub updated: u64,
}

pub fn now_secs() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn new_session_id() -> String {
    format!("{:032x}", rand::random::<u128>())
}

/// Held while a turn runs; dropping it frees the session.
pub struct TurnGuard {
    store: Arc<SessionStore>,
    id: String,
}

impl Drop for TurnGuard {
    fn drop(&mut self) {
        self.store.in_flight.lock().expect("session lock").remove(&self.id);
    }
}

pub struct SessionStore {
    dir: PathBuf,
    index: Mutex<BTreeMap<String, SessionSummary>>,
    in_flight: Mutex<std::collections::BTreeSet<String>>,
    // Serializes file appends and index rewrites.
    write_lock: Mutex<()>,
}

fn read_record(path: &Path) -> Result<SessionRecord, SessionError> {
    let raw = std::fs::read_to_string(path)?;
    let corrupt = |message: String| SessionError::Corrupt {
        path: path.to_path_buf(),
        message,
    };
    let mut record: Option<SessionRecord> = None;
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line = match serde_json::from_str(line) {
            Ok(l) => l,
            // A torn final line from a crash mid-append is ignored.
            Err(_) if i + 1 == raw.lines().count() && !raw.ends_with('\n') => break,
            Err(e) => return Err(corrupt(format!("line {}: {e}", i + 1))),
        };
        match (parsed, &mut record) {
            (
                Line::Session {
                    session_id,
                    kind,
                    doc_ids,
                    created,
                },
                None,
            ) => {
                record = Some(SessionRecord {
                    session_id,
                    kind,
                    doc_ids,
                    messages: Vec::new(),
                    created,
                    updated: created,
                })
            }
            (Line::Message { role, content, at }, Some(r)) => {
                r.messages.push(ChatMessage::new(role, content));
                r.updated = at;
            }
            _ => return Err(corrupt(format!("line {}: unexpected record", i + 1))),
        }
    }
    record.ok_or_else(|| corrupt("missing session header".into()))
}

fn summary(r: &SessionRecord) -> SessionSummary {
    SessionSummary {
        session_id: r.session_id.clone(),
        kind: r.kind,
        doc_ids: r.doc_ids.clone(),
        messages: r.messages.len(),
        created: r.created,
        updated: r.updated,
    }
}

impl SessionStore {
    /// Scans `dir` and rewrites its index file.
    pub fn open(dir: &Path) -> Result<Arc<Self>, SessionError> {
        std::fs::create_dir_all(dir)?;
        let mut index = BTreeMap::new();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|x| x == "jsonl") {
                let r = read_record(&path)?;
                index.insert(r.session_id.clone(), summary(&r));
            }
        }
        let store = Arc::new(Self {
            dir: dir.to_path_buf(),
            index: Mutex::new(index),
            in_flight: Mutex::new(Default::default()),
            write_lock: Mutex::new(()),
        });
        store.write_index()?;
        Ok(store)
    }

    fn path_of(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.jsonl"))
    }

    fn write_index(&self) -> Result<(), SessionError> {
        let index = self.index.lock().expect("session lock").clone();
        let json = serde_json::to_vec_pretty(&index.values().collect::<Vec<_>>()).expect("summaries serialize");
        write_atomic(&self.dir.join("index.json"), &json)?;
        Ok(())
    }

    fn append(&self, id: &str, lines: &[Line], create: bool) -> Result<(), SessionError> {
        let mut opts = OpenOptions::new();
        opts.append(true);
        if create {
            opts.create_new(true);
        }
        let mut file = opts.open(self.path_of(id))?;
        let mut buf = String::new();
        for l in lines {
            buf.push_str(&serde_json::to_string(l).expect("lines serialize"));
            buf.push('\n');
        }
        file.write_all(buf.as_bytes())?;
        file.sync_data()?;
        Ok(())
    }

    pub fn create(&self, kind: SessionKind, doc_ids: Vec<String>) -> Result<SessionRecord, SessionError> {
        let _w = self.write_lock.lock().expect("session lock");
        let created = now_secs();
        let session_id = new_session_id();
        let header = Line::Session {
            session_id: session_id.clone(),
            kind,
            doc_ids: doc_ids.clone(),
            created,
        };
        self.append(&session_id, &[header], true)?;
        let record = SessionRecord {
            session_id: session_id.clone(),
            kind,
            doc_ids,
            messages: Vec::new(),
            created,
            updated: created,
        };
        self.index.lock().expect("session lock").insert(session_id, summary(&record));
        self.write_index()?;
        Ok(record)
    }

    pub fn get(&self, id: &str) -> Result<SessionRecord, SessionError> {
        if !self.index.lock().expect("session lock").contains_key(id) {
            return Err(SessionError::NotFound(id.to_string()));
        }
        read_record(&self.path_of(id))
    }

    pub fn list(&self) -> Vec<SessionSummary> {
        self.index.lock().expect("session lock").values().cloned().collect()
    }

    /// Claims the session for one turn; a second claim fails until the
    /// guard is dropped.
    pub fn begin_turn(self: &Arc<Self>, id: &str) -> Result<TurnGuard, SessionError> {
        if !self.index.lock().expect("session lock").contains_key(id) {
            return Err(SessionError::NotFound(id.to_string()));
        }
        if !self.in_flight.lock().expect("session lock").insert(id.to_string()) {
            return Err(SessionError::Busy(id.to_string()));
        }
        Ok(TurnGuard {
            store: Arc::clone(self),
            id: id.to_string(),
        })
    }

    /// Appends one user/assistant exchange in a single durable write.
    pub fn record_exchange(&self, turn: &TurnGuard, user: &str, assistant: &str) -> Result<(), SessionError> {
        let id = &turn.id;
        let _w = self.write_lock.lock().expect("session lock");
        let at = now_secs();
        self.append(
            id,
            &[
                Line::Message {
                    role: Role::User,
                    content: user.to_string(),
                    at,
                },
                Line::Message {
                    role: Role::Assistant,
                    content: assistant.to_string(),
                    at,
                },
            ],
            false,
        )?;
        if let Some(s) = self.index.lock().expect("session lock").get_mut(id) {
            s.messages += 2;
            s.updated = at;
        }
        self.write_index()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let store = SessionStore::open(dir.path()).unwrap();
        let s = store.create(SessionKind::Read, vec!["d1".into()]).unwrap();
        assert_eq!(s.session_id.len(), 32);
        {
            let turn = store.begin_turn(&s.session_id).unwrap();
            assert!(matches!(store.begin_turn(&s.session_id), Err(SessionError::Busy(_))));
            store.record_exchange(&turn, "q", "a").unwrap();
        }
        let before = store.get(&s.session_id).unwrap();
        drop(store);
        let reopened = SessionStore::open(dir.path()).unwrap();
        assert_eq!(reopened.get(&s.session_id).unwrap(), before);
        assert_eq!(before.messages.len(), 2);
        assert!(matches!(reopened.get("nope"), Err(SessionError::NotFound(_))));
    }

    #[test]
    fn torn_tail_is_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let store = SessionStore::open(dir.path()).unwrap();
        let s = store.create(SessionKind::Investigate, vec![]).unwrap();
        let path = dir.path().join(format!("{}.jsonl", s.session_id));
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"type\":\"message\",\"ro").unwrap();
        let reopened = SessionStore::open(dir.path()).unwrap();
        assert!(reopened.get(&s.session_id).unwrap().messages.is_empty());
    }
}
