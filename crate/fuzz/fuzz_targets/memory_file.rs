#![no_main]

use libfuzzer_sys::fuzz_target;
use pda_core::io::{decode_memory, decode_memory_header, encode_memory};

fuzz_target!(|data: &[u8]| {
    let header = decode_memory_header(data);
    if let Ok(memory) = decode_memory(data) {
        let header = header.expect("full decode implies a valid header");
        assert_eq!(header.num_classes, memory.num_classes());
        assert_eq!(encode_memory(&memory), data);
    }
});
