#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = qvsum_core::dataset::decode_frame_cache(data);
});
