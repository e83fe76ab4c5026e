#![no_main]

use guirl_core::policy::{Vocab, DEFAULT_BINS};
use guirl_core::world::bundled;
use libfuzzer_sys::fuzz_target;
use std::sync::OnceLock;

static VOCAB: OnceLock<Vocab> = OnceLock::new();

fuzz_target!(|data: &[u8]| {
    let vocab = VOCAB.get_or_init(|| Vocab::from_apps(&bundled::app_set(), DEFAULT_BINS));
    let tokens: Vec<u32> = data.chunks(2).map(|c| c.iter().fold(0u32, |a, b| a << 8 | *b as u32)).collect();
    if let Ok(action) = vocab.decode(&tokens) {
        let again = vocab.encode(&action).expect("decoded action encodes");
        assert_eq!(vocab.decode(&again).expect("encoded action decodes"), action);
    }
});
