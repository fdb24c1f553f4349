#![no_main]

use libfuzzer_sys::fuzz_target;
use pda_core::io::{decode_params, encode_params};

fuzz_target!(|data: &[u8]| {
    if let Ok(file) = decode_params(data) {
        assert_eq!(encode_params(&file.params, file.aligner.as_ref()), data);
    }
});
