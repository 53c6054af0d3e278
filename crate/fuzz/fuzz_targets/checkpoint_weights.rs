#![no_main]

use libfuzzer_sys::fuzz_target;
use qvsum_core::weights::{decode_weights, encode_weights};

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = decode_weights(data) {
        assert_eq!(decode_weights(&encode_weights(&t)).unwrap(), t);
    }
});
