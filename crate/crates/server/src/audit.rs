//! Append-only audit trail of executed commands.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

/// Structured command record. Carries no audio and no response text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditRecord {
    pub timestamp: String,
    pub session_id: String,
    pub doc_id: String,
    pub intent_kind: String,
    pub slots: serde_json::Value,
    pub decision: String,
    pub anchor_ids: Vec<String>,
}

struct Inner {
    file: Option<File>,
    records: Vec<AuditRecord>,
}

pub struct AuditLog {
    path: Option<PathBuf>,
    inner: Mutex<Inner>,
}

impl std::fmt::Debug for AuditLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AuditLog").field("path", &self.path).finish_non_exhaustive()
    }
}

impl AuditLog {
    pub fn in_memory() -> Self {
        Self { path: None, inner: Mutex::new(Inner { file: None, records: Vec::new() }) }
    }

    /// Appends to `path`, creating it if needed. Existing lines are kept on
    /// disk but not loaded.
    pub fn open(path: &Path) -> std::io::Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            path: Some(path.to_path_buf()),
            inner: Mutex::new(Inner { file: Some(file), records: Vec::new() }),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// One line per record, synced before returning.
    pub fn append(&self, record: AuditRecord) -> std::io::Result<()> {
        let mut inner = self.inner.lock();
        if let Some(file) = inner.file.as_mut() {
            let mut line = serde_json::to_vec(&record).map_err(std::io::Error::other)?;
            line.push(b'\n');
            file.write_all(&line)?;
            file.sync_data()?;
        }
        inner.records.push(record);
        Ok(())
    }

    pub fn records(&self, session: Option<&str>) -> Vec<AuditRecord> {
        self.inner
            .lock()
            .records
            .iter()
            .filter(|r| session.is_none_or(|s| r.session_id == s))
            .cloned()
            .collect()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn to_ndjson(records: &[AuditRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("audit record serializes"));
        out.push('\n');
    }
    out
}
