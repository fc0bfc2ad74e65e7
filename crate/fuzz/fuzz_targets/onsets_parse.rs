#![no_main]

use libfuzzer_sys::fuzz_target;
use pcg_core::formats::onsets::{parse, render};

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(v) = parse(text) {
            assert_eq!(parse(&render(&v)).expect("rendered onsets parse"), v);
        }
    }
});
