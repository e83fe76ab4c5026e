//! Autoregressive linear-softmax policy over action tokens.
//!
//! Each action is emitted token by token (see [`vocab`]). The logit of token
//! `v` at a position is `sum_i sum_c x_i * W[v, col(i, c)]`, where `x_i` are
//! the observation features, `c` ranges over the context features of the
//! position (grammar slot, and slot plus previous token), and `col` hashes the
//! pair into one of `columns` weight columns. Illegal tokens are masked out, so
//! every sampled sequence decodes to a valid action.

mod checkpoint;
mod features;
mod vocab;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, ArraySpec, Checkpoint, CheckpointError, CheckpointHeader};
pub use features::{encode_obs, words, FeatureConfig, FeatureVector};
pub use vocab::{kind_index, GrammarState, Slot, Tok, Vocab, DEFAULT_BINS, DURATIONS, KIND_NAMES, N_KINDS};

use features::{fnv1a, mix};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolicyError {
    #[error("token {token} is not legal at position {position}")]
    IllegalToken { position: usize, token: u32 },
    #[error("token sequence ends before END")]
    Incomplete,
    #[error("cannot encode action: {0}")]
    Unencodable(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// Weights plus the vocabulary and feature map they were built for.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    pub vocab: Vocab,
    pub features: FeatureConfig,
    /// Row-major `vocab.len() x features.columns`.
    pub weights: Vec<f64>,
}

/// Forward pass at one token position.
#[derive(Clone, Debug)]
pub struct Position {
    /// Legal token ids, ascending.
    pub legal: Vec<u32>,
    pub logits: Vec<f64>,
    /// Softmax of `logits` at temperature 1.
    pub probs: Vec<f64>,
    /// Weight columns touched at this position with their feature values.
    cols: Vec<(usize, f64)>,
}

impl Position {
    pub fn index_of(&self, token: u32) -> Option<usize> {
        self.legal.binary_search(&token).ok()
    }

    pub fn logprob(&self, token: u32) -> f64 {
        let i = self.index_of(token).expect("token legal at position");
        self.log_probs()[i]
    }

    pub fn log_probs(&self) -> Vec<f64> {
        let m = self.logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + self.logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
        self.logits.iter().map(|z| z - lse).collect()
    }

    /// Shannon entropy of the masked distribution.
    pub fn entropy(&self) -> f64 {
        -self.probs.iter().zip(self.log_probs()).map(|(p, lp)| if *p > 0.0 { p * lp } else { 0.0 }).sum::<f64>()
    }
}

/// One sampled action.
#[derive(Clone, Debug, PartialEq)]
pub struct Sampled {
    pub tokens: Vec<u32>,
    pub action: crate::world::Action,
    /// `log pi(token | prefix)` at temperature 1, one per token.
    pub logprobs: Vec<f64>,
}

fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| ((z - m) / temperature).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

impl PolicyParams {
    /// All-zero weights: the uniform policy over legal tokens.
    pub fn zeros(vocab: Vocab, features: FeatureConfig) -> Self {
        let n = vocab.len() * features.columns;
        PolicyParams { vocab, features, weights: vec![0.0; n] }
    }

    /// Weights drawn uniformly from `[-scale, scale]`.
    pub fn random(vocab: Vocab, features: FeatureConfig, seed: u64, scale: f64) -> Self {
        let mut p = Self::zeros(vocab, features);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for w in &mut p.weights {
            *w = rng.gen_range(-scale..=scale);
        }
        p
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    fn context_keys(&self, state: &GrammarState, prefix: &[u32]) -> Vec<u64> {
        let slot = fnv1a(format!("{:?}@{}:{:?}", state.slot, state.position, state.kind).as_bytes());
        match prefix.last() {
            Some(&prev) => vec![slot, mix(slot ^ u64::from(prev).wrapping_mul(0x9e37_79b9_7f4a_7c15))],
            None => vec![slot],
        }
    }

    /// Forward pass for the position after `prefix`.
    pub fn position(&self, f: &FeatureVector, prefix: &[u32]) -> Result<Position, PolicyError> {
        let state = self.vocab.state_after(prefix)?;
        let legal = self.vocab.legal(&state);
        if legal.is_empty() {
            return Err(PolicyError::IllegalToken { position: prefix.len(), token: u32::MAX });
        }
        Ok(self.position_at(f, &state, prefix, legal))
    }

    fn position_at(&self, f: &FeatureVector, state: &GrammarState, prefix: &[u32], legal: Vec<u32>) -> Position {
        let p = self.features.columns;
        let mut cols = Vec::with_capacity(f.entries.len() * 2);
        for c in self.context_keys(state, prefix) {
            for &(i, x) in &f.entries {
                let col = (mix(u64::from(i) ^ c.rotate_left(29)) % p as u64) as usize;
                cols.push((col, x));
            }
        }
        cols.sort_unstable_by_key(|&(c, _)| c);
        cols.dedup_by(|b, a| {
            if a.0 == b.0 {
                a.1 += b.1;
                true
            } else {
                false
            }
        });
        let logits: Vec<f64> = legal
            .iter()
            .map(|&v| {
                let row = &self.weights[v as usize * p..(v as usize + 1) * p];
                cols.iter().map(|&(c, x)| x * row[c]).sum()
            })
            .collect();
        let probs = softmax(&logits, 1.0);
        Position { legal, logits, probs, cols }
    }

    /// Full-vocabulary distribution after `prefix`; illegal tokens get 0.
    pub fn token_dist(&self, f: &FeatureVector, prefix: &[u32]) -> Result<Vec<f64>, PolicyError> {
        let pos = self.position(f, prefix)?;
        let mut out = vec![0.0; self.vocab.len()];
        for (&v, &p) in pos.legal.iter().zip(&pos.probs) {
            out[v as usize] = p;
        }
        Ok(out)
    }

    /// Forward passes for every position of `tokens`.
    pub fn positions(&self, f: &FeatureVector, tokens: &[u32]) -> Result<Vec<Position>, PolicyError> {
        self.vocab.state_after(tokens)?;
        (0..tokens.len()).map(|t| self.position(f, &tokens[..t])).collect()
    }

    /// Adds `scale * sum_v dlogits[v] * d logit_v / dW` into `out`.
    pub fn backprop(&self, pos: &Position, dlogits: &[f64], scale: f64, out: &mut [f64]) {
        let p = self.features.columns;
        for (&v, &d) in pos.legal.iter().zip(dlogits) {
            let g = scale * d;
            if g == 0.0 {
                continue;
            }
            let row = &mut out[v as usize * p..(v as usize + 1) * p];
            for &(c, x) in &pos.cols {
                row[c] += g * x;
            }
        }
    }

    /// Adds `scale * d log pi(token | pos) / dW` into `out`.
    pub fn backprop_logprob(&self, pos: &Position, token: u32, scale: f64, out: &mut [f64]) {
        let chosen = pos.index_of(token).expect("token legal at position");
        let d: Vec<f64> = pos.probs.iter().enumerate().map(|(j, p)| if j == chosen { 1.0 - p } else { -p }).collect();
        self.backprop(pos, &d, scale, out);
    }

    /// Per-token log-probabilities of `tokens` and the gradient of their sum.
    pub fn logprob_grad(&self, f: &FeatureVector, tokens: &[u32]) -> Result<(Vec<f64>, Vec<f64>), PolicyError> {
        let positions = self.positions(f, tokens)?;
        let mut grad = vec![0.0; self.weights.len()];
        let mut lps = Vec::with_capacity(tokens.len());
        for (pos, &tok) in positions.iter().zip(tokens) {
            lps.push(pos.logprob(tok));
            self.backprop_logprob(pos, tok, 1.0, &mut grad);
        }
        Ok((lps, grad))
    }

    /// Per-token log-probabilities of a sequence.
    pub fn logprobs(&self, f: &FeatureVector, tokens: &[u32]) -> Result<Vec<f64>, PolicyError> {
        Ok(self.positions(f, tokens)?.iter().zip(tokens).map(|(p, &t)| p.logprob(t)).collect())
    }

    fn generate(&self, f: &FeatureVector, mut pick: impl FnMut(&Position) -> usize) -> Sampled {
        let mut tokens = Vec::with_capacity(6);
        let mut logprobs = Vec::with_capacity(6);
        let mut state = GrammarState { slot: Slot::Start, position: 0, kind: None };
        loop {
            let legal = self.vocab.legal(&state);
            let pos = self.position_at(f, &state, &tokens, legal);
            let i = pick(&pos);
            let tok = pos.legal[i];
            logprobs.push(pos.log_probs()[i]);
            tokens.push(tok);
            if tok == self.vocab.end() {
                break;
            }
            state = self.vocab.state_after(&tokens).expect("sampled from legal set");
        }
        let action = self.vocab.decode(&tokens).expect("grammar guarantees a complete sequence");
        Sampled { tokens, action, logprobs }
    }

    /// Samples one action at `temperature`.
    ///
    /// # Panics
    /// If `temperature` is not a positive finite number.
    pub fn sample_with(&self, f: &FeatureVector, rng: &mut impl Rng, temperature: f64) -> Sampled {
        assert!(temperature.is_finite() && temperature > 0.0, "temperature must be positive");
        self.generate(f, |pos| {
            let probs = if temperature == 1.0 { pos.probs.clone() } else { softmax(&pos.logits, temperature) };
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            for (i, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    return i;
                }
            }
            // Rounding left u above the cumulative sum: take the last
            // token with nonzero probability.
            probs.iter().rposition(|&p| p > 0.0).expect("distribution has support")
        })
    }

    /// [`PolicyParams::sample_with`] under a fresh generator seeded by `seed`.
    pub fn sample_action(&self, f: &FeatureVector, seed: u64, temperature: f64) -> Sampled {
        self.sample_with(f, &mut ChaCha8Rng::seed_from_u64(seed), temperature)
    }

    /// Most likely token at every position; ties go to the lowest id.
    pub fn greedy(&self, f: &FeatureVector) -> Sampled {
        self.generate(f, |pos| {
            let mut best = 0;
            for (i, z) in pos.logits.iter().enumerate() {
                if *z > pos.logits[best] {
                    best = i;
                }
            }
            best
        })
    }
}
