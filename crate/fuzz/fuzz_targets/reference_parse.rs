#![no_main]

use libfuzzer_sys::fuzz_target;
use pcg_cli::physionet::{parse_record_list, parse_reference};

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_reference(text);
        let _ = parse_record_list(text);
    }
});
