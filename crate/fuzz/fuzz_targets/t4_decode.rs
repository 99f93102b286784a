//! Fuzz the `.t4` binary tensor decoder: arbitrary bytes must never panic,
//! over-allocate from a dimension-bombed header, or round-trip unfaithfully.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(tensor) = detkit::tensor::read_t4_bytes(data) {
        // Anything that decodes must re-encode to the identical bytes.
        let mut buf = Vec::with_capacity(data.len());
        detkit::tensor::write_t4(&tensor, &mut buf).unwrap();
        assert_eq!(buf, data);
    }
});
