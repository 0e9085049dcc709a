#![no_main]

use libfuzzer_sys::fuzz_target;

use crc_core::promptkit::{SchemeRegistry, Stage};

fuzz_target!(|data: &str| {
    if let Ok(registry) = SchemeRegistry::parse_overrides(data) {
        // Built-in names survive any merge, and every stage still
        // resolves to some instruction text.
        for name in ["sep", "eos", "endoftext", "space"] {
            assert!(registry.lookup(name).is_ok());
        }
        for stage in Stage::ALL {
            let _ = registry.instruction(stage);
        }
    }
});
