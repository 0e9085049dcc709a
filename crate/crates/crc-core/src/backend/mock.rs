//! Deterministic scripted backend for desk-scale pipeline runs and tests.

use serde::{Deserialize, Serialize};

use super::BackendConfig;
use crate::hashutil;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum MockRule {
    /// Matches when the prompt contains this literal substring.
    Substring(String),
    /// Matches any prompt.
    Default,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockEntry {
    pub rule: MockRule,
    pub output: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockScript {
    pub entries: Vec<MockEntry>,
}

impl MockScript {
    /// First matching entry wins. With no match and no default, the reply
    /// is a digest-derived echo so unscripted prompts still get stable,
    /// distinct outputs.
    pub fn respond(&self, prompt: &str) -> String {
        for entry in &self.entries {
            match &entry.rule {
                MockRule::Substring(needle) if prompt.contains(needle.as_str()) => {
                    return entry.output.clone();
                }
                MockRule::Default => return entry.output.clone(),
                _ => {}
            }
        }
        format!("mock:{}", hashutil::short_hex_digest(&[prompt.as_bytes()]))
    }

    pub fn digest(&self) -> String {
        let mut canonical = String::new();
        for entry in &self.entries {
            match &entry.rule {
                MockRule::Substring(s) => {
                    canonical.push_str("sub\x1f");
                    canonical.push_str(s);
                }
                MockRule::Default => canonical.push_str("default"),
            }
            canonical.push('\x1f');
            canonical.push_str(&entry.output);
            canonical.push('\x1e');
        }
        hashutil::short_hex_digest(&[canonical.as_bytes()])
    }
}

/// Build a mock backend config from a `(matcher, output)` table. The
/// matcher `"default"` matches any prompt; everything else is a literal
/// substring.
pub fn mock_script(table: &[(&str, &str)]) -> BackendConfig {
    let entries = table
        .iter()
        .map(|(matcher, output)| MockEntry {
            rule: if *matcher == "default" {
                MockRule::Default
            } else {
                MockRule::Substring(matcher.to_string())
            },
            output: output.to_string(),
        })
        .collect();
    BackendConfig::mock(MockScript { entries })
}
