#![no_main]

use guirl_core::world::{load_app, render_text, reset};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(app) = load_app(text) {
        let state = reset(&app, 0);
        render_text(&app, &state);
    }
});
