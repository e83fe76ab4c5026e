#![no_main]

use guirl_core::eval::{parse_task_set, task_set_json};
use guirl_core::world::bundled;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(tasks) = parse_task_set(text) {
        let again = parse_task_set(&task_set_json(&tasks)).expect("written task set parses");
        assert_eq!(again, tasks);
        for t in &tasks {
            let _ = t.validate(&bundled::app_set());
        }
    }
});
