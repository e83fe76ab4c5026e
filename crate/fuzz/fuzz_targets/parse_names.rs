#![no_main]

use guirl_core::policy::{Vocab, DEFAULT_BINS};
use guirl_core::world::bundled;
use libfuzzer_sys::fuzz_target;
use std::sync::OnceLock;

static VOCAB: OnceLock<Vocab> = OnceLock::new();

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let vocab = VOCAB.get_or_init(|| Vocab::from_apps(&bundled::app_set(), DEFAULT_BINS));
    if let Ok(tokens) = vocab.parse_names(text) {
        let _ = vocab.decode(&tokens);
    }
});
