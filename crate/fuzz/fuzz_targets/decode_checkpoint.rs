#![no_main]

use guirl_core::policy::{decode_checkpoint, encode_checkpoint};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ck) = decode_checkpoint(data) {
        let bytes = encode_checkpoint(&ck);
        assert!(decode_checkpoint(&bytes).is_ok());
    }
});
