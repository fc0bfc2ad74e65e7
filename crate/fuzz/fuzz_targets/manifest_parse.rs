#![no_main]

use libfuzzer_sys::fuzz_target;
use pcg_core::formats::manifest::parse;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(m) = parse(text) {
            let csv = m.to_csv().expect("valid manifest serializes");
            assert_eq!(parse(&csv).expect("written manifest parses").rows.len(), m.rows.len());
        }
    }
});
