#![no_main]

use guirl_core::taskgen::parse_label_response;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_label_response(text);
    }
});
