#![no_main]

use libfuzzer_sys::fuzz_target;
use pcg_core::formats::feature_cache::{decode, encode};

fuzz_target!(|data: &[u8]| {
    if let Ok(f) = decode(data) {
        let again = decode(&encode(&f)).expect("re-encoded cache decodes");
        assert_eq!(again.kind, f.kind);
        assert_eq!(again.values.dim(), f.values.dim());
    }
});
