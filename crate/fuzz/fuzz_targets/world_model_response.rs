#![no_main]

use guirl_core::filter::parse_world_model_response;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_world_model_response(text);
    }
});
