#![no_main]

use deepseg::data::{decode_slice, encode_slice};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // Anything that decodes must re-encode to the same bytes.
    if let Ok(slice) = decode_slice(data) {
        assert_eq!(encode_slice(&slice), data);
    }
});
