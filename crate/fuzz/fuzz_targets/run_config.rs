#![no_main]

use libfuzzer_sys::fuzz_target;

use crc_cli::config::{parse_config_str, scan_for_secrets};

fuzz_target!(|data: &str| {
    let _ = scan_for_secrets(data);
    let _ = parse_config_str(data);
});
