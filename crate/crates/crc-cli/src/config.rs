//! Run configuration: one TOML file describing corpus, split, templates,
//! backends, and metrics policy for a reproducible run.
//!
//! Credentials never live in configs; backends name an environment
//! variable instead, and loading rejects anything that looks like an
//! embedded API key. Unknown fields are errors, so a literal `api_key`
//! cannot slip through either.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crc_core::backend::{
    BackendConfig, BackendKind, HttpParams, MockEntry, MockRule, MockScript, WireProtocol,
};
use crc_core::metrics::{TokenMode, TokenizationPolicy};
use crc_core::pipeline::MalformedPolicy;
use crc_core::promptkit::{SchemeRegistry, Style};
use crc_core::short_hex_digest;

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub templates: TemplatesConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub export: ExportConfig,
    #[serde(default)]
    pub infer: InferConfig,
    pub backends: BackendsConfig,
}

fn default_workers() -> usize {
    1
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    #[serde(default = "default_ratio")]
    pub ratio: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_ratio() -> f64 {
    0.75
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            ratio: default_ratio(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TemplatesConfig {
    #[serde(default = "default_style")]
    pub style: String,
    #[serde(default = "default_scheme")]
    pub scheme: String,
    /// Characters, roughly four per model token.
    #[serde(default = "default_char_budget")]
    pub char_budget: usize,
    /// Optional registry override file (delimiters + instructions).
    #[serde(default, skip_serializing)]
    pub registry: Option<PathBuf>,
}

fn default_style() -> String {
    "bare".to_string()
}

fn default_scheme() -> String {
    "sep".to_string()
}

fn default_char_budget() -> usize {
    2048
}

impl Default for TemplatesConfig {
    fn default() -> Self {
        Self {
            style: default_style(),
            scheme: default_scheme(),
            char_budget: default_char_budget(),
            registry: None,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    #[serde(default)]
    pub mode: Option<String>,
    #[serde(default)]
    pub lowercase: Option<bool>,
    #[serde(default)]
    pub strip_punct: Option<bool>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExportConfig {
    /// Keep fully consistent reflection pairs in the training exports.
    #[serde(default = "default_true")]
    pub include_consistent: bool,
}

fn default_true() -> bool {
    true
}

impl Default for ExportConfig {
    fn default() -> Self {
        Self {
            include_consistent: true,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct InferConfig {
    /// `fail` or `fallback` on unparseable first-pass output.
    #[serde(default = "default_on_malformed")]
    pub on_malformed: String,
    /// Which dialogues to run inference over: `all`, `reflection`, or
    /// `experience`.
    #[serde(default = "default_infer_split")]
    pub split: String,
}

fn default_on_malformed() -> String {
    "fail".to_string()
}

fn default_infer_split() -> String {
    "all".to_string()
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            on_malformed: default_on_malformed(),
            split: default_infer_split(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendsConfig {
    pub generator: BackendEntry,
    pub annotator: BackendEntry,
    pub reflector: BackendEntry,
    pub corrector: BackendEntry,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendEntry {
    pub kind: String,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub wire: Option<String>,
    #[serde(default)]
    pub max_new_tokens: Option<u32>,
    #[serde(default)]
    pub timeout_secs: Option<u64>,
    #[serde(default)]
    pub max_retries: Option<u32>,
    #[serde(default)]
    pub requests_per_minute: Option<u32>,
    #[serde(default)]
    pub initial_backoff_ms: Option<u64>,
    #[serde(default)]
    pub script: Vec<ScriptEntry>,
}

fn default_model() -> String {
    "mock".to_string()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptEntry {
    #[serde(default)]
    pub matches: Option<String>,
    #[serde(default)]
    pub default: bool,
    pub output: String,
}

impl BackendEntry {
    pub fn to_backend_config(&self, role: &str) -> Result<BackendConfig, CliError> {
        let kind = match self.kind.as_str() {
            "mock" => {
                let entries = self
                    .script
                    .iter()
                    .map(|entry| {
                        let rule = match (&entry.matches, entry.default) {
                            (Some(needle), false) => MockRule::Substring(needle.clone()),
                            (None, true) => MockRule::Default,
                            _ => {
                                return Err(CliError::usage(format!(
                                    "backends.{role}: a script entry needs exactly one of `matches` or `default = true`"
                                )))
                            }
                        };
                        Ok(MockEntry {
                            rule,
                            output: entry.output.clone(),
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                BackendKind::Mock(MockScript { entries })
            }
            "http" => {
                let endpoint = self.endpoint.clone().ok_or_else(|| {
                    CliError::usage(format!("backends.{role}: http backend needs an endpoint"))
                })?;
                let wire = match self.wire.as_deref() {
                    None | Some("chat") => WireProtocol::ChatCompletions,
                    Some("completion") => WireProtocol::Completions,
                    Some(other) => {
                        return Err(CliError::usage(format!(
                            "backends.{role}: unknown wire {other:?} (chat or completion)"
                        )))
                    }
                };
                BackendKind::Http(HttpParams {
                    endpoint,
                    api_key_env: self.api_key_env.clone(),
                    wire,
                })
            }
            other => {
                return Err(CliError::usage(format!(
                    "backends.{role}: unknown kind {other:?} (mock or http)"
                )))
            }
        };

        let mut config = match kind {
            BackendKind::Mock(script) => BackendConfig::mock(script),
            BackendKind::Http(params) => {
                let mut config = BackendConfig::http(params.endpoint.clone(), self.model.clone());
                config.kind = BackendKind::Http(params);
                config
            }
        };
        config.model_name = self.model.clone();
        if let Some(tokens) = self.max_new_tokens {
            config.max_new_tokens = tokens;
        }
        if let Some(secs) = self.timeout_secs {
            config.timeout = Duration::from_secs(secs);
        }
        if let Some(retries) = self.max_retries {
            config.max_retries = retries;
        }
        config.requests_per_minute = self.requests_per_minute;
        if let Some(ms) = self.initial_backoff_ms {
            config.initial_backoff = Duration::from_millis(ms);
        }
        Ok(config)
    }

    pub fn is_mock(&self) -> bool {
        self.kind == "mock"
    }
}

/// The resolved, validated view of a config that commands consume.
#[derive(Debug)]
pub struct ResolvedConfig {
    pub raw: RunConfig,
    pub registry: SchemeRegistry,
    pub style: Style,
    pub policy: TokenizationPolicy,
    pub on_malformed: MalformedPolicy,
    pub backends: BTreeMap<String, BackendConfig>,
}

impl ResolvedConfig {
    pub fn scheme(&self) -> Result<crc_core::promptkit::DelimiterScheme, CliError> {
        self.registry
            .lookup(&self.raw.templates.scheme)
            .cloned()
            .map_err(CliError::usage)
    }

    pub fn all_backends_mock(&self) -> bool {
        self.backends
            .values()
            .all(|b| matches!(b.kind, BackendKind::Mock(_)))
    }

    /// Hash of the semantic run parameters. Paths are deliberately
    /// excluded so the same run in a different directory hashes the same;
    /// corpus content is covered separately by the corpus fingerprint.
    pub fn config_hash(&self) -> String {
        #[derive(Serialize)]
        struct Semantic<'a> {
            split: &'a SplitConfig,
            templates: &'a TemplatesConfig,
            metrics_fingerprint: String,
            export: &'a ExportConfig,
            infer: &'a InferConfig,
            backend_fingerprints: BTreeMap<&'a str, String>,
        }
        let semantic = Semantic {
            split: &self.raw.split,
            templates: &self.raw.templates,
            metrics_fingerprint: self.policy.fingerprint(),
            export: &self.raw.export,
            infer: &self.raw.infer,
            backend_fingerprints: self
                .backends
                .iter()
                .map(|(role, config)| (role.as_str(), config.fingerprint()))
                .collect(),
        };
        let canonical = serde_json::to_string(&semantic).expect("semantic config serializes");
        short_hex_digest(&[canonical.as_bytes()])
    }
}

/// Reject configs that appear to embed credentials: `sk-`-style tokens or
/// bearer strings. Secrets belong in environment variables.
pub fn scan_for_secrets(text: &str) -> Vec<String> {
    let mut findings = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        for marker in ["sk-", "Bearer "] {
            if let Some(pos) = line.find(marker) {
                let tail = &line[pos + marker.len()..];
                let token_len = tail
                    .chars()
                    .take_while(|c| c.is_ascii_alphanumeric() || *c == '_' || *c == '-')
                    .count();
                if token_len >= 16 {
                    findings.push(format!(
                        "line {}: credential-like string starting with {marker:?}",
                        lineno + 1
                    ));
                }
            }
        }
    }
    findings
}

pub fn parse_config_str(text: &str) -> Result<RunConfig, CliError> {
    toml::from_str(text).map_err(|e| CliError::usage(format!("config: {e}")))
}

pub fn load_config(path: &Path) -> Result<ResolvedConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?;
    let secrets = scan_for_secrets(&text);
    if !secrets.is_empty() {
        return Err(CliError::usage(format!(
            "config contains credential-like strings; move secrets to environment variables ({})",
            secrets.join("; ")
        )));
    }
    let mut raw = parse_config_str(&text)?;

    // Paths in the config resolve relative to the config file.
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    if raw.corpus.is_relative() {
        raw.corpus = base.join(&raw.corpus);
    }
    if raw.output_dir.is_relative() {
        raw.output_dir = base.join(&raw.output_dir);
    }
    if let Some(registry) = raw.templates.registry.take() {
        raw.templates.registry = Some(if registry.is_relative() {
            base.join(registry)
        } else {
            registry
        });
    }

    resolve(raw)
}

pub fn resolve(raw: RunConfig) -> Result<ResolvedConfig, CliError> {
    if !(raw.split.ratio > 0.0 && raw.split.ratio < 1.0) {
        return Err(CliError::usage(format!(
            "split.ratio {} must lie in (0, 1)",
            raw.split.ratio
        )));
    }
    if !raw.corpus.exists() {
        return Err(CliError::usage(format!(
            "corpus path {} does not exist",
            raw.corpus.display()
        )));
    }
    let registry = match &raw.templates.registry {
        Some(path) => SchemeRegistry::load_overrides(path).map_err(CliError::usage)?,
        None => SchemeRegistry::builtin(),
    };
    registry
        .lookup(&raw.templates.scheme)
        .map_err(CliError::usage)?;
    let style = match raw.templates.style.as_str() {
        "bare" => Style::Bare,
        "instructed" => Style::Instructed,
        other => {
            return Err(CliError::usage(format!(
                "templates.style {other:?} (bare or instructed)"
            )))
        }
    };
    let mode = match raw.metrics.mode.as_deref() {
        None | Some("auto") => TokenMode::Auto,
        Some("word") => TokenMode::Word,
        Some("char") => TokenMode::Char,
        Some(other) => {
            return Err(CliError::usage(format!(
                "metrics.mode {other:?} (auto, word, or char)"
            )))
        }
    };
    let policy = TokenizationPolicy {
        mode,
        lowercase: raw.metrics.lowercase.unwrap_or(true),
        strip_punct: raw.metrics.strip_punct.unwrap_or(true),
    };
    let on_malformed = match raw.infer.on_malformed.as_str() {
        "fail" => MalformedPolicy::Fail,
        "fallback" => MalformedPolicy::Fallback,
        other => {
            return Err(CliError::usage(format!(
                "infer.on_malformed {other:?} (fail or fallback)"
            )))
        }
    };
    match raw.infer.split.as_str() {
        "all" | "reflection" | "experience" => {}
        other => {
            return Err(CliError::usage(format!(
                "infer.split {other:?} (all, reflection, or experience)"
            )))
        }
    }

    let mut backends = BTreeMap::new();
    for (role, entry) in [
        ("generator", &raw.backends.generator),
        ("annotator", &raw.backends.annotator),
        ("reflector", &raw.backends.reflector),
        ("corrector", &raw.backends.corrector),
    ] {
        backends.insert(role.to_string(), entry.to_backend_config(role)?);
    }

    Ok(ResolvedConfig {
        raw,
        registry,
        style,
        policy,
        on_malformed,
        backends,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_config(dir: &Path) -> String {
        let corpus = dir.join("corpus.jsonl");
        std::fs::write(&corpus, "").unwrap();
        r#"
corpus = "corpus.jsonl"
output_dir = "out"

[backends.generator]
kind = "mock"

[backends.annotator]
kind = "mock"

[backends.reflector]
kind = "mock"

[backends.corrector]
kind = "mock"
"#
        .to_string()
    }

    #[test]
    fn minimal_config_parses_with_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let text = minimal_config(dir.path());
        let path = dir.path().join("run.toml");
        std::fs::write(&path, text).unwrap();
        let resolved = load_config(&path).unwrap();
        assert_eq!(resolved.raw.split.ratio, 0.75);
        assert_eq!(resolved.raw.templates.scheme, "sep");
        assert_eq!(resolved.raw.templates.char_budget, 2048);
        assert!(resolved.all_backends_mock());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let err = parse_config_str("corpus = \"c\"\noutput_dir = \"o\"\napi_key = \"x\"\n")
            .unwrap_err();
        assert!(matches!(err, CliError::Usage(_)));
    }

    #[test]
    fn credential_like_strings_are_rejected() {
        let findings = scan_for_secrets("token = \"sk-abcdefghijKLMNOP1234\"");
        assert_eq!(findings.len(), 1);
        assert!(scan_for_secrets("scheme = \"sep\"").is_empty());
        // Short sk- prefixes (e.g. ordinary words) are fine.
        assert!(scan_for_secrets("note = \"sk-12\"").is_empty());
    }

    #[test]
    fn bad_ratio_and_bad_scheme_are_usage_errors() {
        let dir = tempfile::tempdir().unwrap();
        let mut text = minimal_config(dir.path());
        text.push_str("\n[split]\nratio = 1.5\n");
        let path = dir.path().join("run.toml");
        std::fs::write(&path, &text).unwrap();
        assert!(matches!(load_config(&path).unwrap_err(), CliError::Usage(_)));

        let mut text = minimal_config(dir.path());
        text.push_str("\n[templates]\nscheme = \"nope\"\n");
        std::fs::write(&path, &text).unwrap();
        let err = load_config(&path).unwrap_err();
        assert!(err.to_string().contains("nope"));
    }

    #[test]
    fn config_hash_ignores_paths() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let path_a = dir_a.path().join("run.toml");
        let path_b = dir_b.path().join("run.toml");
        std::fs::write(&path_a, minimal_config(dir_a.path())).unwrap();
        std::fs::write(&path_b, minimal_config(dir_b.path())).unwrap();
        let a = load_config(&path_a).unwrap();
        let b = load_config(&path_b).unwrap();
        assert_eq!(a.config_hash(), b.config_hash());
    }

    #[test]
    fn script_entries_validate() {
        let dir = tempfile::tempdir().unwrap();
        let mut text = minimal_config(dir.path());
        text.push_str("\n[[backends.generator.script]]\noutput = \"x\"\n");
        let path = dir.path().join("run.toml");
        std::fs::write(&path, &text).unwrap();
        let err = load_config(&path).unwrap_err();
        assert!(err.to_string().contains("matches"));
    }
}
