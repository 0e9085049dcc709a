#![no_main]

use libfuzzer_sys::fuzz_target;

use crc_core::promptkit::{
    registry_lookup, reparse_stage_input, Stage, StageTemplate,
};

fuzz_target!(|data: &str| {
    // Exported inputs are untrusted by the time they are re-parsed; the
    // re-parser must never panic and, on success, must return exactly the
    // advertised section count.
    for scheme_name in ["sep", "eos", "endoftext", "space"] {
        let scheme = registry_lookup(scheme_name).unwrap();
        for stage in Stage::ALL {
            for template in [StageTemplate::bare(stage), StageTemplate::instructed(stage)] {
                if let Ok(reparsed) = reparse_stage_input(data, &template, &scheme) {
                    match stage {
                        Stage::Correction => assert!(reparsed.reflection_envelope.is_some()),
                        _ => assert!(reparsed.reflection_envelope.is_none()),
                    }
                }
            }
        }
    }
});
