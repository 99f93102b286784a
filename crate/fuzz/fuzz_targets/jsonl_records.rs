//! Fuzz the JSON-lines box-record parsers (ground truth and predictions).
//! Errors are fine; panics and hangs are not.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = detkit::metrics::parse_records_jsonl(data);
    let _ = detkit::metrics::parse_gt_jsonl(data);
    let _ = detkit::metrics::parse_pred_jsonl(data);
});
