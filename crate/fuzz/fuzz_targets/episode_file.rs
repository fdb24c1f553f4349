#![no_main]

use libfuzzer_sys::fuzz_target;
use pda_core::io::{decode_items, decode_split_header, encode_items};

fuzz_target!(|data: &[u8]| {
    let header = decode_split_header(data);
    if let Ok((h, items)) = decode_items(data) {
        assert_eq!(header.expect("full decode implies a valid header"), h);
        let again = encode_items(&items, h.num_classes, (h.channels, h.height, h.width)).unwrap();
        assert_eq!(again, data);
    }
});
