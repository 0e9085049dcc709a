//! Shared digest helpers: every fingerprint in the crate is a SHA-256 hex
//! string so that manifests, cache keys, and reports stay comparable.

use sha2::{Digest, Sha256};

pub fn hex_digest(parts: &[&[u8]]) -> String {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update(part);
    }
    let digest = hasher.finalize();
    let mut out = String::with_capacity(digest.len() * 2);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

/// First 16 hex chars of the SHA-256 digest; used for run ids and
/// human-facing fingerprints.
pub fn short_hex_digest(parts: &[&[u8]]) -> String {
    let mut full = hex_digest(parts);
    full.truncate(16);
    full
}
