//! Observation features.
//!
//! A [`FeatureVector`] has a hashed block (screen identity, instruction words,
//! element contents and instruction/element matches) followed by a dense
//! history block holding one-hot action types of the last `H` actions.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::vocab::{kind_index, N_KINDS};
use crate::world::{Action, ElementKind, TextObservation};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureConfig {
    /// The hashed block has `2^hash_bits` entries.
    pub hash_bits: u32,
    /// Number of past actions in the history block.
    pub history: usize,
    /// Width of the weight matrix (hashed observation x context columns).
    pub columns: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig { hash_bits: 16, history: 4, columns: 4096 }
    }
}

impl FeatureConfig {
    pub fn hashed_dim(&self) -> usize {
        1 << self.hash_bits
    }

    pub fn dim(&self) -> usize {
        self.hashed_dim() + self.history * N_KINDS
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(4..=24).contains(&self.hash_bits) {
            return Err(format!("hash_bits {} outside 4..=24", self.hash_bits));
        }
        if self.columns == 0 || self.columns > 1 << 22 {
            return Err(format!("columns {} outside 1..=2^22", self.columns));
        }
        if self.history > 64 {
            return Err(format!("history {} above 64", self.history));
        }
        Ok(())
    }
}

/// Sparse fixed-length vector; entries sorted by index with no duplicates.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    pub dim: usize,
    pub entries: Vec<(u32, f64)>,
}

impl FeatureVector {
    pub fn to_dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for &(i, x) in &self.entries {
            v[i as usize] = x;
        }
        v
    }
}

/// 64-bit FNV-1a; stable across platforms and runs.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3))
}

/// splitmix64 finalizer.
pub(crate) fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const STOPWORDS: [&str; 8] = ["a", "an", "the", "my", "to", "of", "for", "in"];

/// Lowercase alphanumeric words with a plural `s` stripped.
pub fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| {
            let w = w.to_lowercase();
            if w.len() > 3 && w.ends_with('s') && !w.ends_with("ss") {
                w[..w.len() - 1].to_string()
            } else {
                w
            }
        })
        .filter(|w| !STOPWORDS.contains(&w.as_str()))
        .collect()
}

fn bin(v: f64, bins: usize) -> usize {
    ((v * bins as f64).floor() as usize).min(bins - 1)
}

/// Coordinate resolution used by the match features.
const MATCH_BINS: usize = 20;

/// Encodes `(observation, instruction, history)`. Only the last
/// `cfg.history` actions of `history` are used, most recent first.
pub fn encode_obs(cfg: &FeatureConfig, obs: &TextObservation, instruction: &str, history: &[Action]) -> FeatureVector {
    let mask = cfg.hashed_dim() as u64 - 1;
    let mut idx: Vec<u32> = Vec::with_capacity(64);
    let mut put = |key: &str| idx.push((fnv1a(key.as_bytes()) & mask) as u32);

    let screen = format!("{}/{}", obs.app_id, obs.screen_id);
    put("bias");
    put(&format!("app:{}", obs.app_id));
    put(&format!("scr:{screen}"));
    let query: BTreeSet<String> = words(instruction).into_iter().collect();
    for w in &query {
        put(&format!("w:{w}"));
        put(&format!("sw:{screen}|{w}"));
    }
    if let Some(f) = &obs.focused_element {
        let kind = obs.elements.iter().find(|e| &e.element_id == f).map_or("?", |e| e.kind.as_str());
        put(&format!("focus:{kind}"));
    }

    let mut best: Option<(usize, &crate::world::ObservedElement)> = None;
    for e in &obs.elements {
        put(&format!("e:{}:{}", e.kind.as_str(), e.content.to_lowercase()));
        let matched = words(&e.content).into_iter().collect::<BTreeSet<_>>().intersection(&query).count();
        if matched == 0 {
            continue;
        }
        put(&format!("mk:{}:{}", e.kind.as_str(), matched.min(3)));
        if e.kind != ElementKind::Label && best.is_none_or(|(m, _)| matched > m) {
            best = Some((matched, e));
        }
    }
    match best {
        Some((m, e)) => {
            let (x, y) = e.bounds.center();
            put(&format!("cx:{}", bin(x, MATCH_BINS)));
            put(&format!("cy:{}", bin(y, MATCH_BINS)));
            put(&format!("ck:{}:{}", e.kind.as_str(), m.min(3)));
        }
        None => put("c:none"),
    }

    let mut entries: Vec<(u32, f64)> = Vec::with_capacity(idx.len() + cfg.history);
    idx.sort_unstable();
    for i in idx {
        match entries.last_mut() {
            Some((j, x)) if *j == i => *x += 1.0,
            _ => entries.push((i, 1.0)),
        }
    }
    let base = cfg.hashed_dim();
    for (h, action) in history.iter().rev().take(cfg.history).enumerate() {
        entries.push(((base + h * N_KINDS + kind_index(action)) as u32, 1.0));
    }
    FeatureVector { dim: cfg.dim(), entries }
}
