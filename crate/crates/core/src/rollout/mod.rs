//! Grouped trajectory collection.
//!
//! [`collect_group`] runs `G` independent episodes of one task from fresh
//! resets (seeds `seed`, `seed + 1`, ...). [`RolloutPool`] runs groups on
//! worker threads that read the latest published policy snapshot when they
//! start a group.

mod log;
mod pool;

use std::collections::VecDeque;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use log::{read_log, replay_record, write_record, LogError, ReplayError, StepRecord, TrajectoryRecord};
pub use pool::{run_pool, GroupOutcome, Job, PolicySource, RolloutPool};

use crate::eval::Task;
use crate::policy::{encode_obs, PolicyParams, Sampled};
use crate::world::{reset, step, Action, AppDefinition, AppSet, EnvState, TerminalStatus, TextObservation};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub observation: TextObservation,
    /// Free-text reasoning preceding the action; this policy leaves it empty.
    pub reasoning: Option<String>,
    pub tokens: Vec<u32>,
    /// Log-probabilities of `tokens` under the sampling snapshot.
    pub logprobs: Vec<f64>,
    pub action: Action,
    pub clock_before: f64,
    pub clock_after: f64,
    /// Digest of the state after the action.
    pub state_digest: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminal {
    TerminatedSuccessClaimed,
    TerminatedFailureClaimed,
    StepLimit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: String,
    pub app_id: String,
    pub instruction: String,
    pub seed: u64,
    pub initial_digest: String,
    pub steps: Vec<Step>,
    pub terminal: Terminal,
    /// The last `min(k, |steps| + 1)` states, oldest first.
    pub final_states: Vec<EnvState>,
}

impl Trajectory {
    /// `|tau|`, the number of actions taken.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn token_count(&self) -> usize {
        self.steps.iter().map(|s| s.tokens.len()).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryGroup {
    pub task_id: String,
    /// Version of the policy snapshot every trajectory was sampled from.
    pub policy_version: u64,
    pub trajectories: Vec<Trajectory>,
}

impl TrajectoryGroup {
    /// Digest of every trajectory's log record, in order.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.trajectories {
            h.update(TrajectoryRecord::from_trajectory(t, None, None).digest());
        }
        hex::encode(h.finalize())
    }
}

/// Chooses actions during a rollout.
pub trait Agent: Send + Sync {
    fn act(
        &self,
        app: &AppDefinition,
        state: &EnvState,
        obs: &TextObservation,
        instruction: &str,
        history: &[Action],
        rng: &mut ChaCha8Rng,
    ) -> Sampled;
}

/// Samples from (or, with `greedy`, maximizes) a policy snapshot.
#[derive(Clone, Debug)]
pub struct PolicyAgent {
    pub params: Arc<PolicyParams>,
    pub temperature: f64,
    pub greedy: bool,
}

impl Agent for PolicyAgent {
    fn act(
        &self,
        _app: &AppDefinition,
        _state: &EnvState,
        obs: &TextObservation,
        instruction: &str,
        history: &[Action],
        rng: &mut ChaCha8Rng,
    ) -> Sampled {
        let f = encode_obs(&self.params.features, obs, instruction, history);
        if self.greedy {
            self.params.greedy(&f)
        } else {
            self.params.sample_with(&f, rng, self.temperature)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutConfig {
    /// Rollouts per task, `G`.
    pub group_size: usize,
    pub t_max: usize,
    /// Evaluation window.
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RolloutError {
    #[error("unknown app {0}")]
    UnknownApp(String),
    #[error("bad rollout config: {0}")]
    Config(String),
    #[error("rollout {index} of task {task_id} failed: {message}")]
    Rollout { task_id: String, index: usize, message: String },
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<(), RolloutError> {
        if self.group_size < 2 {
            return Err(RolloutError::Config(format!("group size {} < 2", self.group_size)));
        }
        if self.t_max < 1 || self.k < 1 {
            return Err(RolloutError::Config("t_max and k must be at least 1".into()));
        }
        Ok(())
    }
}

/// One episode from a fresh reset.
pub fn rollout(app: &AppDefinition, task: &Task, agent: &dyn Agent, t_max: usize, k: usize, seed: u64) -> Trajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = reset(app, seed);
    let initial_digest = state.digest();
    let mut window: VecDeque<EnvState> = VecDeque::with_capacity(k + 1);
    window.push_back(state.clone());
    let mut steps = Vec::new();
    let mut history: Vec<Action> = Vec::new();
    let mut terminal = Terminal::StepLimit;
    while steps.len() < t_max {
        let obs = crate::world::render_text(app, &state);
        let sampled = agent.act(app, &state, &obs, &task.instruction, &history, &mut rng);
        let (next, _) = step(app, &state, &sampled.action).expect("agents emit valid actions on live states");
        steps.push(Step {
            observation: obs,
            reasoning: None,
            tokens: sampled.tokens,
            logprobs: sampled.logprobs,
            action: sampled.action.clone(),
            clock_before: state.clock,
            clock_after: next.clock,
            state_digest: next.digest(),
        });
        history.push(sampled.action);
        window.push_back(next.clone());
        if window.len() > k {
            window.pop_front();
        }
        state = next;
        match state.terminated {
            Some(TerminalStatus::Success) => terminal = Terminal::TerminatedSuccessClaimed,
            Some(TerminalStatus::Failure) => terminal = Terminal::TerminatedFailureClaimed,
            None => continue,
        }
        break;
    }
    Trajectory {
        task_id: task.task_id.clone(),
        app_id: app.app_id.clone(),
        instruction: task.instruction.clone(),
        seed,
        initial_digest,
        steps,
        terminal,
        final_states: window.into(),
    }
}

fn panic_message(payload: Box<dyn std::any::Any + Send>) -> String {
    payload
        .downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| payload.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "panic".to_string())
}

/// `G` rollouts of `task` with seeds `seed + i`.
pub fn collect_group(
    apps: &AppSet,
    task: &Task,
    agent: &dyn Agent,
    cfg: &RolloutConfig,
    seed: u64,
    policy_version: u64,
) -> Result<TrajectoryGroup, RolloutError> {
    cfg.validate()?;
    let app = apps.get(&task.app_id).ok_or_else(|| RolloutError::UnknownApp(task.app_id.clone()))?;
    let mut trajectories = Vec::with_capacity(cfg.group_size);
    for i in 0..cfg.group_size {
        let s = seed.wrapping_add(i as u64);
        let t = catch_unwind(AssertUnwindSafe(|| rollout(app, task, agent, cfg.t_max, cfg.k, s))).map_err(|p| {
            RolloutError::Rollout { task_id: task.task_id.clone(), index: i, message: panic_message(p) }
        })?;
        trajectories.push(t);
    }
    Ok(TrajectoryGroup { task_id: task.task_id.clone(), policy_version, trajectories })
}
