//! Output-directory layout and prerequisite checks between commands.
//!
//! Every command writes its artifacts plus a manifest under the run's
//! output directory; later commands refuse to start until the artifacts
//! they consume exist, naming the command that produces them.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crc_core::pipeline::RunManifest;

use crate::CliError;

#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn split_file(&self) -> PathBuf {
        self.root.join("split.json")
    }

    pub fn experience_generations(&self) -> PathBuf {
        self.root.join("experience_generations.jsonl")
    }

    pub fn annotations(&self) -> PathBuf {
        self.root.join("annotations.jsonl")
    }

    pub fn annotation_rejects(&self) -> PathBuf {
        self.root.join("annotation_rejects.jsonl")
    }

    pub fn train_experience(&self) -> PathBuf {
        self.root.join("train_experience.jsonl")
    }

    pub fn train_reflection(&self) -> PathBuf {
        self.root.join("train_reflection.jsonl")
    }

    pub fn train_correction(&self) -> PathBuf {
        self.root.join("train_correction.jsonl")
    }

    pub fn export_rejects(&self) -> PathBuf {
        self.root.join("export_rejects.jsonl")
    }

    pub fn predictions(&self) -> PathBuf {
        self.root.join("predictions.jsonl")
    }

    pub fn eval_report(&self) -> PathBuf {
        self.root.join("eval_report.json")
    }

    pub fn cache(&self) -> PathBuf {
        self.root.join("cache").join("generations.jsonl")
    }

    pub fn manifest(&self, stage: &str) -> PathBuf {
        self.root.join("manifests").join(format!("{stage}.json"))
    }

    /// Fail with a pointer to the producing command when `path` is absent.
    pub fn require(&self, path: &Path, producer: &str) -> Result<(), CliError> {
        if path.exists() {
            Ok(())
        } else {
            Err(CliError::Domain(format!(
                "missing {}; run `crc {producer}` first",
                path.display()
            )))
        }
    }

    pub fn write_manifest(&self, manifest: &RunManifest) -> Result<(), CliError> {
        let path = self.manifest(&manifest.stage);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(CliError::domain)?;
        }
        let mut text = serde_json::to_string_pretty(manifest).map_err(CliError::domain)?;
        text.push('\n');
        std::fs::write(&path, text).map_err(CliError::domain)?;
        Ok(())
    }

    pub fn read_manifest(&self, stage: &str) -> Result<RunManifest, CliError> {
        let path = self.manifest(stage);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::Domain(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(CliError::domain)
    }
}

/// The persisted split: dialogue ids per side, plus the parameters that
/// produced them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitFile {
    pub manifest_ref: String,
    pub seed: u64,
    pub ratio: f64,
    pub experience_ids: Vec<String>,
    pub reflection_ids: Vec<String>,
}

impl SplitFile {
    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(CliError::domain)?;
        }
        let mut text = serde_json::to_string_pretty(self).map_err(CliError::domain)?;
        text.push('\n');
        std::fs::write(path, text).map_err(CliError::domain)
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Domain(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(CliError::domain)
    }
}
