#![no_main]

use libfuzzer_sys::fuzz_target;
use pcg_core::formats::checkpoint::{decode, decode_tensors, encode, encode_tensors};

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = decode_tensors(data) {
        assert_eq!(decode_tensors(&encode_tensors(&t)).expect("round trip").len(), t.len());
    }
    if let Ok(p) = decode(data) {
        assert_eq!(decode(&encode(&p)).expect("round trip").config(), p.config());
    }
});
