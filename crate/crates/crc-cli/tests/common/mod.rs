//! Shared helpers for CLI integration tests: fixture setup and running
//! the compiled binary.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const FIXTURE_CORPUS: &str = include_str!("../fixtures/five_dialogues.jsonl");

/// Mock-backed config covering all four roles; relative paths keep the
/// artifact tree byte-identical across temp roots.
pub const MOCK_CONFIG: &str = r####"corpus = "corpus.jsonl"
output_dir = "out"
workers = 1

[split]
ratio = 0.75
seed = 7

[templates]
style = "bare"
scheme = "sep"
char_budget = 4096

[backends.generator]
kind = "mock"
model = "mock-generator"

[backends.annotator]
kind = "mock"
model = "mock-annotator"

[[backends.annotator.script]]
default = true
output = "The reply does not use the domain knowledge.\nVERDICT: DK|mention the director by name"

[backends.reflector]
kind = "mock"
model = "mock-reflector"

[[backends.reflector.script]]
matches = "###stage2_R"
output = "I think you might like this one.###SG:###name the exact topic in the reply"

[backends.corrector]
kind = "mock"
model = "mock-corrector"

[[backends.corrector.script]]
matches = "###stage3_C"
output = "Have you seen Grandpa's Love? I think you would enjoy it."
"####;

/// Write the fixture corpus and a config into `root`.
pub fn setup_run(root: &Path) -> PathBuf {
    setup_run_with(root, FIXTURE_CORPUS, MOCK_CONFIG)
}

pub fn setup_run_with(root: &Path, corpus: &str, config: &str) -> PathBuf {
    std::fs::create_dir_all(root).unwrap();
    std::fs::write(root.join("corpus.jsonl"), corpus).unwrap();
    let config_path = root.join("run.toml");
    std::fs::write(&config_path, config).unwrap();
    config_path
}

pub fn crc(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crc"))
        .current_dir(root)
        .args(["--config", "run.toml"])
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn assert_success(output: &Output, what: &str) {
    assert!(
        output.status.success(),
        "{what} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

pub fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).to_string()
}

pub fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).to_string()
}

/// Run the full command sequence; panics on the first failure.
pub fn run_full_sequence(root: &Path, workers: &str) {
    for command in [
        "ingest",
        "split",
        "gen-experience",
        "annotate",
        "export-train",
        "infer",
        "eval",
    ] {
        let output = crc(root, &[command, "--workers", workers]);
        assert_success(&output, command);
    }
}

/// Collect `(relative path, bytes)` for every file under `root`, sorted.
pub fn snapshot_tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    collect_files(root, root, &mut files);
    files.sort();
    files
}

fn collect_files(base: &Path, dir: &Path, files: &mut Vec<(String, Vec<u8>)>) {
    for entry in std::fs::read_dir(dir).unwrap() {
        let entry = entry.unwrap();
        let path = entry.path();
        if path.is_dir() {
            collect_files(base, &path, files);
        } else {
            let rel = path.strip_prefix(base).unwrap().to_string_lossy().to_string();
            files.push((rel, std::fs::read(&path).unwrap()));
        }
    }
}
