#![no_main]

use libfuzzer_sys::fuzz_target;

use crc_core::reflection::{parse_c, serialize_c};

fuzz_target!(|data: &str| {
    if let Ok(result) = parse_c(data) {
        // Anything that parses must survive a canonical round trip.
        let envelope = serialize_c(&result);
        let reparsed = parse_c(&envelope).expect("canonical envelope parses");
        assert_eq!(reparsed, result);
        assert_eq!(serialize_c(&reparsed), envelope);
    }
});
