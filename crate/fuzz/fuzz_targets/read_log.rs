#![no_main]

use guirl_core::rollout::{read_log, replay_record};
use guirl_core::world::bundled;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(records) = read_log(data) {
        let apps = bundled::app_set();
        for r in records.iter().take(4) {
            let _ = replay_record(&apps, r);
        }
    }
});
