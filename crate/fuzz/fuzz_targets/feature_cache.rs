#![no_main]

use libfuzzer_sys::fuzz_target;
use qvsum_core::features::{decode_feature_cache, encode_feature_cache};

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = decode_feature_cache(data) {
        let back = decode_feature_cache(&encode_feature_cache(&m)).unwrap();
        assert_eq!(back.dim(), m.dim());
    }
});
