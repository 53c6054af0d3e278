#![no_main]

use libfuzzer_sys::fuzz_target;
use qvsum_core::query::Dictionary;

fuzz_target!(|data: &[u8]| {
    if let Ok(d) = Dictionary::parse(data) {
        let mut seen = vec![false; d.len()];
        for (_, i) in d.words() {
            assert!(!std::mem::replace(&mut seen[i], true));
        }
    }
});
