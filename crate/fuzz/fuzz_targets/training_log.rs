#![no_main]

use libfuzzer_sys::fuzz_target;
use qvsum_core::checkpoint::{decode_training_log, encode_training_log};

fuzz_target!(|data: &[u8]| {
    if let Ok(log) = decode_training_log(data) {
        let _ = encode_training_log(&log);
    }
});
