#![no_main]

use libfuzzer_sys::fuzz_target;
use qvsum_service::SummarizeRequest;

fuzz_target!(|data: &[u8]| {
    let _ = serde_json::from_slice::<SummarizeRequest>(data);
});
