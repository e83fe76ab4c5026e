//! JSONL trajectory log and replay.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Terminal, Trajectory};
use crate::world::{render_text, reset, step, Action, AppSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRecord {
    pub tokens: Vec<u32>,
    pub logprobs: Vec<f64>,
    pub action: Action,
    pub clock_before: f64,
    pub clock_after: f64,
    pub state_digest: String,
}

/// One line of the trajectory log. Field order is fixed, so equal records
/// serialize to equal bytes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryRecord {
    pub task_id: String,
    pub app_id: String,
    pub seed: u64,
    pub initial_digest: String,
    pub steps: Vec<StepRecord>,
    pub terminal: Terminal,
    pub success: Option<u8>,
    pub reward: Option<f64>,
}

impl TrajectoryRecord {
    pub fn from_trajectory(t: &Trajectory, success: Option<u8>, reward: Option<f64>) -> Self {
        TrajectoryRecord {
            task_id: t.task_id.clone(),
            app_id: t.app_id.clone(),
            seed: t.seed,
            initial_digest: t.initial_digest.clone(),
            steps: t
                .steps
                .iter()
                .map(|s| StepRecord {
                    tokens: s.tokens.clone(),
                    logprobs: s.logprobs.clone(),
                    action: s.action.clone(),
                    clock_before: s.clock_before,
                    clock_after: s.clock_after,
                    state_digest: s.state_digest.clone(),
                })
                .collect(),
            terminal: t.terminal,
            success,
            reward,
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }

    /// Hex SHA-256 of the serialized record.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_line().as_bytes()))
    }
}

pub fn write_record(w: &mut impl Write, record: &TrajectoryRecord) -> std::io::Result<()> {
    writeln!(w, "{}", record.to_line())
}

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("cannot read trajectory log: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Reads every non-blank line of a JSONL log.
pub fn read_log(r: impl BufRead) -> Result<Vec<TrajectoryRecord>, LogError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| LogError::Parse { line: i + 1, message: e.to_string() })?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReplayError {
    #[error("unknown app {0}")]
    UnknownApp(String),
    /// `step` 0 is the reset state; step `i` is the state after action `i`.
    #[error("state digest mismatch at step {step}")]
    Mismatch { step: usize },
    #[error("step {step}: {message}")]
    Step { step: usize, message: String },
}

/// Re-simulates a record and checks every state digest. Returns a textual
/// rendering, one block per step.
pub fn replay_record(apps: &AppSet, record: &TrajectoryRecord) -> Result<String, ReplayError> {
    let app = apps.get(&record.app_id).ok_or_else(|| ReplayError::UnknownApp(record.app_id.clone()))?;
    let mut state = reset(app, record.seed);
    if state.digest() != record.initial_digest {
        return Err(ReplayError::Mismatch { step: 0 });
    }
    let mut out = format!("# {} seed={} terminal={:?}\n", record.task_id, record.seed, record.terminal);
    for (i, s) in record.steps.iter().enumerate() {
        out.push_str(&format!("step {}\n{}", i + 1, render_text(app, &state)));
        out.push_str(&format!("  -> {}\n", s.action));
        let (next, _) =
            step(app, &state, &s.action).map_err(|e| ReplayError::Step { step: i + 1, message: e.to_string() })?;
        if next.digest() != s.state_digest {
            return Err(ReplayError::Mismatch { step: i + 1 });
        }
        state = next;
    }
    Ok(out)
}
