//! Run manifests: the immutable record binding a stage's outputs to the
//! configuration, corpus, templates, and backends that produced them.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::hashutil;

/// Sealed description of one stage run. Every artifact file references
/// exactly one manifest by `run_id`; a run is reconstructible from the
/// config hash, the corpus fingerprint, and the caches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub stage: String,
    pub config_hash: String,
    pub corpus_fingerprint: String,
    pub split_seed: u64,
    pub split_ratio: f64,
    pub block_syntax: String,
    pub style: String,
    pub scheme_name: String,
    pub delimiter: String,
    pub char_budget: Option<usize>,
    pub backend_fingerprints: BTreeMap<String, String>,
    pub counts: BTreeMap<String, u64>,
    pub notes: Vec<String>,
    pub started_at: u64,
    pub finished_at: u64,
}

/// Builder for a manifest; sealing consumes it so a sealed manifest can
/// never be edited.
#[derive(Debug, Clone)]
pub struct ManifestDraft {
    stage: String,
    config_hash: String,
    corpus_fingerprint: String,
    split_seed: u64,
    split_ratio: f64,
    style: String,
    scheme_name: String,
    delimiter: String,
    char_budget: Option<usize>,
    backend_fingerprints: BTreeMap<String, String>,
    notes: Vec<String>,
    started_at: u64,
}

impl ManifestDraft {
    pub fn new(stage: &str, config_hash: &str, corpus_fingerprint: &str) -> Self {
        Self {
            stage: stage.to_string(),
            config_hash: config_hash.to_string(),
            corpus_fingerprint: corpus_fingerprint.to_string(),
            split_seed: 0,
            split_ratio: 0.0,
            style: String::new(),
            scheme_name: String::new(),
            delimiter: String::new(),
            char_budget: None,
            backend_fingerprints: BTreeMap::new(),
            notes: Vec::new(),
            started_at: 0,
        }
    }

    pub fn split(mut self, seed: u64, ratio: f64) -> Self {
        self.split_seed = seed;
        self.split_ratio = ratio;
        self
    }

    pub fn templates(
        mut self,
        style: &str,
        scheme_name: &str,
        delimiter: &str,
        char_budget: Option<usize>,
    ) -> Self {
        self.style = style.to_string();
        self.scheme_name = scheme_name.to_string();
        self.delimiter = delimiter.to_string();
        self.char_budget = char_budget;
        self
    }

    pub fn backend(mut self, role: &str, fingerprint: &str) -> Self {
        self.backend_fingerprints
            .insert(role.to_string(), fingerprint.to_string());
        self
    }

    pub fn note(mut self, note: impl Into<String>) -> Self {
        self.notes.push(note.into());
        self
    }

    pub fn started_at(mut self, timestamp: u64) -> Self {
        self.started_at = timestamp;
        self
    }

    /// Derived, deterministic run id: two runs of the same stage over the
    /// same config and corpus are the same run.
    pub fn run_id(&self) -> String {
        hashutil::short_hex_digest(&[
            self.stage.as_bytes(),
            b"|",
            self.config_hash.as_bytes(),
            b"|",
            self.corpus_fingerprint.as_bytes(),
        ])
    }

    pub fn seal(self, counts: BTreeMap<String, u64>, finished_at: u64) -> RunManifest {
        RunManifest {
            run_id: self.run_id(),
            stage: self.stage,
            config_hash: self.config_hash,
            corpus_fingerprint: self.corpus_fingerprint,
            split_seed: self.split_seed,
            split_ratio: self.split_ratio,
            block_syntax: crate::promptkit::BLOCK_SYNTAX_VERSION.to_string(),
            style: self.style,
            scheme_name: self.scheme_name,
            delimiter: self.delimiter,
            char_budget: self.char_budget,
            backend_fingerprints: self.backend_fingerprints,
            counts,
            notes: self.notes,
            started_at: self.started_at,
            finished_at,
        }
    }
}
