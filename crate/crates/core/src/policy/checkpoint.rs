//! Binary checkpoint container.
//!
//! Layout: the 8-byte magic `GUIRLCKP`, a little-endian `u32` format version,
//! a little-endian `u64` header length, the UTF-8 JSON header, then every
//! array listed in the header as raw little-endian `f64`s, in header order.
//! Floats are stored bit-for-bit, so a round trip is exact.

use serde::{Deserialize, Serialize};

use super::{FeatureConfig, PolicyParams, Vocab};

pub const MAGIC: &[u8; 8] = b"GUIRLCKP";
pub const FORMAT_VERSION: u32 = 1;
/// Name of the policy weight array.
pub const WEIGHTS: &str = "weights";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArraySpec {
    pub name: String,
    pub len: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub vocab: Vocab,
    pub features: FeatureConfig,
    /// Optimizer steps taken.
    pub step: u64,
    /// Free-form state owned by the writer (optimizer counters, RNG position).
    #[serde(default)]
    pub meta: serde_json::Value,
    pub arrays: Vec<ArraySpec>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    /// Arrays in header order.
    pub arrays: Vec<Vec<f64>>,
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    Magic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("truncated checkpoint: {0}")]
    Truncated(&'static str),
    #[error("bad checkpoint header: {0}")]
    Header(String),
    #[error("{0} trailing bytes after last array")]
    Trailing(usize),
    #[error("checkpoint does not hold a policy: {0}")]
    Policy(String),
}

impl Checkpoint {
    pub fn array(&self, name: &str) -> Option<&[f64]> {
        self.header.arrays.iter().position(|a| a.name == name).map(|i| self.arrays[i].as_slice())
    }

    pub fn policy(&self) -> Result<PolicyParams, CheckpointError> {
        self.header.features.validate().map_err(CheckpointError::Policy)?;
        if self.header.vocab.bins == 0 {
            return Err(CheckpointError::Policy("zero coordinate bins".into()));
        }
        if !self.header.vocab.texts.windows(2).all(|w| w[0] < w[1]) {
            return Err(CheckpointError::Policy("text vocabulary not sorted and distinct".into()));
        }
        let weights = self.array(WEIGHTS).ok_or_else(|| CheckpointError::Policy("no weights array".into()))?;
        let expected = self.header.vocab.len() * self.header.features.columns;
        if weights.len() != expected {
            return Err(CheckpointError::Policy(format!("weights length {} != {expected}", weights.len())));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(CheckpointError::Policy("non-finite weight".into()));
        }
        Ok(PolicyParams {
            vocab: self.header.vocab.clone(),
            features: self.header.features.clone(),
            weights: weights.to_vec(),
        })
    }

    /// Checkpoint holding `params` as its first array followed by `extra`.
    pub fn from_policy(
        params: &PolicyParams,
        step: u64,
        meta: serde_json::Value,
        extra: Vec<(String, Vec<f64>)>,
    ) -> Self {
        let mut specs = vec![ArraySpec { name: WEIGHTS.into(), len: params.weights.len() as u64 }];
        let mut arrays = vec![params.weights.clone()];
        for (name, a) in extra {
            specs.push(ArraySpec { name, len: a.len() as u64 });
            arrays.push(a);
        }
        Checkpoint {
            header: CheckpointHeader {
                vocab: params.vocab.clone(),
                features: params.features.clone(),
                step,
                meta,
                arrays: specs,
            },
            arrays,
        }
    }
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let header = serde_json::to_vec(&ck.header).expect("header serializes");
    let floats: usize = ck.arrays.iter().map(Vec::len).sum();
    let mut out = Vec::with_capacity(20 + header.len() + 8 * floats);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for a in &ck.arrays {
        for x in a {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
    if bytes.len() < n {
        return Err(CheckpointError::Truncated(what));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

pub fn decode_checkpoint(mut bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let b = &mut bytes;
    if take(b, 8, "magic").map_err(|_| CheckpointError::Magic)? != MAGIC {
        return Err(CheckpointError::Magic);
    }
    let version = u32::from_le_bytes(take(b, 4, "version")?.try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version(version));
    }
    let header_len = u64::from_le_bytes(take(b, 8, "header length")?.try_into().expect("8 bytes"));
    let header_len = usize::try_from(header_len).map_err(|_| CheckpointError::Truncated("header"))?;
    let header: CheckpointHeader =
        serde_json::from_slice(take(b, header_len, "header")?).map_err(|e| CheckpointError::Header(e.to_string()))?;
    let mut arrays = Vec::with_capacity(header.arrays.len());
    for spec in &header.arrays {
        let n =
            usize::try_from(spec.len).ok().and_then(|n| n.checked_mul(8)).ok_or(CheckpointError::Truncated("array"))?;
        let raw = take(b, n, "array")?;
        arrays.push(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect());
    }
    if !b.is_empty() {
        return Err(CheckpointError::Trailing(b.len()));
    }
    Ok(Checkpoint { header, arrays })
}
