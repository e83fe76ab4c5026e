#![no_main]

use guirl_core::harness::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = RunConfig::from_json(text) {
        let again = RunConfig::from_json(&serde_json::to_string(&cfg).unwrap()).expect("valid config round-trips");
        assert_eq!(again, cfg);
    }
});
