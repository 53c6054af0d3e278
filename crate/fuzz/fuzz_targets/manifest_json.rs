#![no_main]

use libfuzzer_sys::fuzz_target;
use qvsum_core::manifest::{validate_manifest, DatasetManifest, ValidationOptions};

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = DatasetManifest::parse(data) {
        // Whatever parses must validate without panicking and re-serialize.
        let _ = validate_manifest(&m, &ValidationOptions::default());
        let again = DatasetManifest::parse(m.to_canonical_json().as_bytes()).unwrap();
        assert_eq!(again, m);
    }
});
