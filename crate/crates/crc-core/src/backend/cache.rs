//! Persistent generation cache: an append-only file of checksummed JSON
//! records.
//!
//! Each line is `{"checksum": <sha256 of the canonical record JSON>,
//! "record": {...}}`. A torn final line (crash during append) is truncated
//! on open; a checksum mismatch or unparseable line anywhere else is
//! corruption and refuses to load.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{BackendError, GenerationRecord};
use crate::hashutil;

#[derive(Serialize, Deserialize)]
struct StoredLine {
    checksum: String,
    record: serde_json::Value,
}

fn record_checksum(record_value: &serde_json::Value) -> String {
    let canonical = serde_json::to_string(record_value).expect("value serializes");
    hashutil::hex_digest(&[canonical.as_bytes()])
}

/// Parse a cache store image. Returns the records plus the byte length of
/// the valid prefix; bytes past that length belong to a torn final line.
pub fn parse_store(bytes: &[u8]) -> Result<(Vec<GenerationRecord>, usize), BackendError> {
    let mut records = Vec::new();
    let mut valid_len = 0usize;
    let mut offset = 0usize;
    let mut line_no = 0usize;

    while offset < bytes.len() {
        let rest = &bytes[offset..];
        let (line_bytes, consumed, complete) = match rest.iter().position(|&b| b == b'\n') {
            Some(pos) => (&rest[..pos], pos + 1, true),
            None => (rest, rest.len(), false),
        };
        line_no += 1;

        let parse_line = || -> Result<GenerationRecord, String> {
            let text = std::str::from_utf8(line_bytes).map_err(|_| "not UTF-8".to_string())?;
            let stored: StoredLine = serde_json::from_str(text).map_err(|e| e.to_string())?;
            let actual = record_checksum(&stored.record);
            if actual != stored.checksum {
                return Err(format!(
                    "checksum mismatch (stored {}, computed {})",
                    stored.checksum, actual
                ));
            }
            serde_json::from_value(stored.record).map_err(|e| e.to_string())
        };

        if line_bytes.iter().all(|b| b.is_ascii_whitespace()) {
            offset += consumed;
            if complete {
                valid_len = offset;
            }
            continue;
        }

        match parse_line() {
            Ok(record) => {
                records.push(record);
                offset += consumed;
                // A valid record missing its trailing newline still counts;
                // open() repairs the newline before the next append.
                valid_len = offset;
            }
            Err(reason) => {
                if complete {
                    return Err(BackendError::CorruptCache {
                        line: line_no,
                        reason,
                    });
                }
                // Torn tail from an interrupted append; drop it.
                offset += consumed;
            }
        }
    }

    Ok((records, valid_len))
}

/// On-disk record cache keyed by [`GenerationRecord::cache_key`].
#[derive(Debug)]
pub struct GenerationCache {
    path: PathBuf,
    map: HashMap<String, GenerationRecord>,
}

impl GenerationCache {
    /// Open (or create) the store at `path`, truncating any torn tail
    /// left by an interrupted append.
    pub fn open(path: &Path) -> Result<Self, BackendError> {
        let io_err = |source: std::io::Error| BackendError::CacheIo {
            path: path.display().to_string(),
            source,
        };
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent).map_err(io_err)?;
            }
        }
        let bytes = match fs::read(path) {
            Ok(bytes) => bytes,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(io_err(e)),
        };
        let (records, valid_len) = parse_store(&bytes)?;
        if valid_len < bytes.len() {
            let file = fs::OpenOptions::new().write(true).open(path).map_err(io_err)?;
            file.set_len(valid_len as u64).map_err(io_err)?;
        } else if valid_len > 0 && bytes.last() != Some(&b'\n') {
            let mut file = fs::OpenOptions::new().append(true).open(path).map_err(io_err)?;
            file.write_all(b"\n").map_err(io_err)?;
        }
        let mut map = HashMap::with_capacity(records.len());
        for record in records {
            map.insert(record.cache_key.clone(), record);
        }
        Ok(Self {
            path: path.to_path_buf(),
            map,
        })
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Absent keys are a none-result, not an error.
    pub fn get(&self, key: &str) -> Option<&GenerationRecord> {
        self.map.get(key)
    }

    /// Append a record and fsync-flush the line. Last write wins for
    /// duplicate keys, matching replay order.
    pub fn put(&mut self, record: GenerationRecord) -> Result<(), BackendError> {
        let io_err = |source: std::io::Error| BackendError::CacheIo {
            path: self.path.display().to_string(),
            source,
        };
        let value = serde_json::to_value(&record).expect("record serializes");
        let line = StoredLine {
            checksum: record_checksum(&value),
            record: value,
        };
        let mut file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(io_err)?;
        let mut text = serde_json::to_string(&line).expect("line serializes");
        text.push('\n');
        file.write_all(text.as_bytes()).map_err(io_err)?;
        file.flush().map_err(io_err)?;
        self.map.insert(record.cache_key.clone(), record);
        Ok(())
    }
}
