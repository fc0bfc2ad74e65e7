#![no_main]

use libfuzzer_sys::fuzz_target;
use pcg_core::formats::report::{parse_lines, parse_records};

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_lines(text);
        let _ = parse_records(text);
    }
});
