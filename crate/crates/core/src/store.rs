//! Append-only, line-delimited record files with per-record digests.
//!
//! Each line is one JSON [`RecordEnvelope`]. A final line without a trailing
//! newline is a torn write: readers ignore it and writers truncate it away
//! when they reopen the file.

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io failure on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("duplicate record ({kind}, run {run_id}, sample {sample_id}, condition {condition:?})")]
    DuplicateKey { kind: String, run_id: String, sample_id: String, condition: Option<String> },
    #[error("corrupt record at {path}:{line}: {reason}")]
    CorruptRecord { path: PathBuf, line: usize, reason: String },
    #[error("payload of {kind} record does not match the expected type: {reason}")]
    PayloadType { kind: String, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordEnvelope {
    pub record_kind: String,
    pub run_id: String,
    pub sample_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<String>,
    pub payload: Value,
    pub content_digest: String,
    pub written_at: String,
}

pub fn payload_digest(payload: &Value) -> String {
    hex::encode(Sha256::digest(serde_json::to_vec(payload).expect("json values serialize")))
}

impl RecordEnvelope {
    pub fn new(
        record_kind: impl Into<String>,
        run_id: impl Into<String>,
        sample_id: impl Into<String>,
        condition: Option<String>,
        payload: &impl Serialize,
    ) -> Result<Self, StoreError> {
        let record_kind = record_kind.into();
        let payload = serde_json::to_value(payload)
            .map_err(|e| StoreError::PayloadType { kind: record_kind.clone(), reason: e.to_string() })?;
        Ok(Self {
            content_digest: payload_digest(&payload),
            record_kind,
            run_id: run_id.into(),
            sample_id: sample_id.into(),
            condition,
            payload,
            written_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
        })
    }

    pub fn digest_valid(&self) -> bool {
        payload_digest(&self.payload) == self.content_digest
    }

    pub fn key(&self) -> RecordKey {
        RecordKey {
            kind: self.record_kind.clone(),
            run_id: self.run_id.clone(),
            sample_id: self.sample_id.clone(),
            condition: self.condition.clone(),
        }
    }

    pub fn payload_as<T: DeserializeOwned>(&self) -> Result<T, StoreError> {
        serde_json::from_value(self.payload.clone())
            .map_err(|e| StoreError::PayloadType { kind: self.record_kind.clone(), reason: e.to_string() })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RecordKey {
    pub kind: String,
    pub run_id: String,
    pub sample_id: String,
    pub condition: Option<String>,
}

/// Truncates a torn final line. Returns the number of bytes removed.
pub fn recover_torn_tail(path: &Path) -> io::Result<u64> {
    let mut file = OpenOptions::new().read(true).write(true).open(path)?;
    let len = file.metadata()?.len();
    if len == 0 {
        return Ok(0);
    }
    // Scan backwards in chunks for the last newline.
    let mut end = len;
    let mut buf = vec![0u8; 8192];
    let keep = loop {
        let start = end.saturating_sub(buf.len() as u64);
        let chunk = &mut buf[..(end - start) as usize];
        file.seek(SeekFrom::Start(start))?;
        file.read_exact(chunk)?;
        if let Some(pos) = chunk.iter().rposition(|&b| b == b'\n') {
            break start + pos as u64 + 1;
        }
        if start == 0 {
            break 0;
        }
        end = start;
    };
    if keep < len {
        file.set_len(keep)?;
        file.sync_data()?;
        tracing::warn!(path = %path.display(), dropped = len - keep, "truncated torn record tail");
    }
    Ok(len - keep)
}

/// Reads every digest-valid envelope, optionally filtered by kind, in write order.
pub fn read_all(path: &Path, kind: Option<&str>) -> Result<Vec<RecordEnvelope>, StoreError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    let mut reader = BufReader::new(file);
    let mut line = Vec::new();
    let mut lineno = 0;
    loop {
        line.clear();
        let n = reader.read_until(b'\n', &mut line).map_err(io_err(path))?;
        if n == 0 {
            break;
        }
        lineno += 1;
        if line.last() != Some(&b'\n') {
            // torn tail
            break;
        }
        let env: RecordEnvelope = serde_json::from_slice(&line).map_err(|e| StoreError::CorruptRecord {
            path: path.to_path_buf(),
            line: lineno,
            reason: e.to_string(),
        })?;
        if !env.digest_valid() {
            return Err(StoreError::CorruptRecord {
                path: path.to_path_buf(),
                line: lineno,
                reason: "content digest mismatch".into(),
            });
        }
        if kind.is_none_or(|k| k == env.record_kind) {
            out.push(env);
        }
    }
    Ok(out)
}

/// Like [`read_all`] but a missing file reads as empty.
pub fn read_all_or_empty(path: &Path, kind: Option<&str>) -> Result<Vec<RecordEnvelope>, StoreError> {
    if path.exists() {
        read_all(path, kind)
    } else {
        Ok(Vec::new())
    }
}

/// Single writer for one record file.
#[derive(Debug)]
pub struct RecordWriter {
    path: PathBuf,
    file: File,
    keys: HashSet<RecordKey>,
}

impl RecordWriter {
    /// Opens for append, recovering a torn tail and indexing existing keys.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let path = path.into();
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(io_err(&path))?;
        }
        let mut keys = HashSet::new();
        if path.exists() {
            recover_torn_tail(&path).map_err(io_err(&path))?;
            for env in read_all(&path, None)? {
                keys.insert(env.key());
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(io_err(&path))?;
        Ok(Self { path, file, keys })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn contains(&self, key: &RecordKey) -> bool {
        self.keys.contains(key)
    }

    pub fn append(&mut self, env: &RecordEnvelope) -> Result<(), StoreError> {
        let key = env.key();
        if self.keys.contains(&key) {
            return Err(StoreError::DuplicateKey {
                kind: key.kind,
                run_id: key.run_id,
                sample_id: key.sample_id,
                condition: key.condition,
            });
        }
        let mut line = serde_json::to_vec(env).expect("envelopes serialize");
        line.push(b'\n');
        self.file.write_all(&line).map_err(io_err(&self.path))?;
        self.file.sync_data().map_err(io_err(&self.path))?;
        self.keys.insert(key);
        Ok(())
    }
}
