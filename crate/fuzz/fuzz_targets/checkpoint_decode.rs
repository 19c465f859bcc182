#![no_main]

use deepseg::nn::{decode_checkpoint, encode_checkpoint};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(model) = decode_checkpoint(data) {
        let again = encode_checkpoint(&model).expect("decoded model re-encodes");
        let round = decode_checkpoint(&again).expect("re-encoded checkpoint decodes");
        assert_eq!(round.graph().params(), model.graph().params());
    }
});
