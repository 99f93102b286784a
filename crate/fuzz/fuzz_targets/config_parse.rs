//! Fuzz the flat key-value config parser.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = detkit::config::parse_config_bytes(data);
});
