#![no_main]

use libfuzzer_sys::fuzz_target;
use qvsum_core::dataset::{assemble_annotations, parse_annotations_csv, parse_queries_csv};

fuzz_target!(|data: &[u8]| {
    let _ = parse_queries_csv(data);
    if let Ok(rows) = parse_annotations_csv(data) {
        let refs: Vec<_> = rows.iter().collect();
        let frames = rows.len().clamp(1, 199);
        let _ = assemble_annotations(&refs, frames);
    }
});
