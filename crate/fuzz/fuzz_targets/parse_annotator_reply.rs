#![no_main]

use libfuzzer_sys::fuzz_target;

use crc_core::reflection::parse_annotator_reply;

fuzz_target!(|data: &str| {
    if let Ok(verdict) = parse_annotator_reply(data) {
        // Normalization invariant: empty types pair with the sentinel.
        if verdict.types.is_empty() {
            assert_eq!(verdict.suggestion, "none");
        } else {
            assert!(!verdict.suggestion.is_empty());
        }
    }
});
