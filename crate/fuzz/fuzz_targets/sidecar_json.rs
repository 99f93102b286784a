//! Fuzz the fused-kernel JSON sidecar parser.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = detkit::eeconv::parse_sidecar_bytes(data);
});
