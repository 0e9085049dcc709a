#![no_main]

use libfuzzer_sys::fuzz_target;

use crc_core::backend::parse_store;

fuzz_target!(|data: &[u8]| {
    if let Ok((records, valid_len)) = parse_store(data) {
        assert!(valid_len <= data.len());
        // The valid prefix must parse to the same records.
        let (again, len_again) = parse_store(&data[..valid_len]).expect("valid prefix parses");
        assert_eq!(records, again);
        assert_eq!(valid_len, len_again);
    }
});
