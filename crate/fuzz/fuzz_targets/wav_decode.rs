#![no_main]

use libfuzzer_sys::fuzz_target;
use pcg_core::formats::wav::decode;

fuzz_target!(|data: &[u8]| {
    let _ = decode(data);
});
