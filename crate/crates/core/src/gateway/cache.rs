use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::GatewayError;
use crate::store::recover_torn_tail;

/// One line of a fixture or cache file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub fingerprint: String,
    pub response: Value,
}

/// Loads `{fingerprint, response}` lines. A torn final line is ignored.
pub fn read_fixture_file(path: &Path) -> Result<HashMap<String, Value>, GatewayError> {
    let file = File::open(path).map_err(|e| GatewayError::Io(format!("{}: {e}", path.display())))?;
    let mut out = HashMap::new();
    let mut lines = BufReader::new(file).split(b'\n').peekable();
    let mut lineno = 0usize;
    while let Some(line) = lines.next() {
        lineno += 1;
        let line = line.map_err(|e| GatewayError::Io(e.to_string()))?;
        let is_last = lines.peek().is_none();
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        match serde_json::from_slice::<FixtureRecord>(&line) {
            Ok(rec) => {
                out.insert(rec.fingerprint, rec.response);
            }
            Err(_) if is_last => break,
            Err(e) => return Err(GatewayError::InvalidConfig(format!("{} line {lineno}: {e}", path.display()))),
        }
    }
    Ok(out)
}

type Slot = Arc<Mutex<Option<Value>>>;

/// Fingerprint-keyed response cache.
///
/// Lookups take a per-fingerprint slot lock, so concurrent identical
/// requests wait on the first one instead of reaching the backend twice.
/// When persistent, every newly filled entry is appended to a JSONL file in
/// the fixture record format.
pub struct ResponseCache {
    slots: Mutex<HashMap<String, Slot>>,
    sink: Option<Mutex<File>>,
    path: Option<PathBuf>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl std::fmt::Debug for ResponseCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ResponseCache")
            .field("path", &self.path)
            .field("hits", &self.hits())
            .field("misses", &self.misses())
            .finish()
    }
}

impl Default for ResponseCache {
    fn default() -> Self {
        Self::in_memory()
    }
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self {
            slots: Mutex::new(HashMap::new()),
            sink: None,
            path: None,
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    /// Opens (or creates) a cache file, loading any entries it already holds.
    pub fn persistent(path: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        let path = path.into();
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| GatewayError::Io(e.to_string()))?;
        }
        let mut slots = HashMap::new();
        if path.exists() {
            recover_torn_tail(&path).map_err(|e| GatewayError::Io(e.to_string()))?;
            for (fp, v) in read_fixture_file(&path)? {
                slots.insert(fp, Arc::new(Mutex::new(Some(v))));
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| GatewayError::Io(format!("{}: {e}", path.display())))?;
        Ok(Self {
            slots: Mutex::new(slots),
            sink: Some(Mutex::new(file)),
            path: Some(path),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        let slots = self.slots.lock().unwrap();
        slots.values().filter(|s| s.lock().unwrap().is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, fingerprint: &str) -> Option<Value> {
        let slot = self.slots.lock().unwrap().get(fingerprint).cloned()?;
        let v = slot.lock().unwrap().clone();
        v
    }

    /// Returns the cached value (`true`) or runs `fetch` and stores its
    /// success (`false`). Failures are not cached.
    pub fn get_or_insert_with<F>(&self, fingerprint: &str, fetch: F) -> Result<(Value, bool), GatewayError>
    where
        F: FnOnce() -> Result<Value, GatewayError>,
    {
        let slot = {
            let mut slots = self.slots.lock().unwrap();
            slots.entry(fingerprint.to_string()).or_default().clone()
        };
        let mut guard = slot.lock().unwrap();
        if let Some(v) = guard.as_ref() {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok((v.clone(), true));
        }
        let value = fetch()?;
        self.misses.fetch_add(1, Ordering::Relaxed);
        if let Some(sink) = &self.sink {
            let rec = FixtureRecord { fingerprint: fingerprint.to_string(), response: value.clone() };
            let mut line = serde_json::to_vec(&rec).expect("fixture records serialize");
            line.push(b'\n');
            let mut file = sink.lock().unwrap();
            file.write_all(&line).and_then(|_| file.flush()).map_err(|e| GatewayError::Io(e.to_string()))?;
        }
        *guard = Some(value.clone());
        Ok((value, false))
    }
}
