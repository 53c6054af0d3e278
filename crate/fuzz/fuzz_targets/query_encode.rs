#![no_main]

use libfuzzer_sys::fuzz_target;
use qvsum_core::query::{encode_query, tokenize, Dictionary};
use qvsum_core::MAX_QUERY_WORDS;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let dict = Dictionary::build(&["beach city forest snow", "sunset at the beach"]).unwrap();
    let q = encode_query(text, &dict);
    assert_eq!(q.values.len(), dict.len());
    assert!(q.nonzero() <= MAX_QUERY_WORDS);
    if tokenize(text).is_empty() {
        assert!(!q.oov_warning);
    }
});
