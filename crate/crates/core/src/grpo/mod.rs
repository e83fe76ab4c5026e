//! Trajectory-level group policy optimization.
//!
//! A group of `G` rollouts of one task is scored with the composite reward
//! (efficiency-scaled success, length-scaled early-exit penalty on failure),
//! normalized into one advantage per trajectory, and that advantage is applied
//! to every token of every step of the trajectory in a clipped-ratio loss.

mod adam;
mod loss;

use serde::{Deserialize, Serialize};

pub use adam::{update, AdamState, OptimizerConfig, UpdateError, UpdateReport};
pub use loss::{surrogate_loss, LossError, LossReport};

use crate::eval::{evaluate, Task};
use crate::rollout::TrajectoryGroup;
use crate::world::AppDefinition;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConfig {
    pub r_base: f64,
    /// Per-step decay rate of the efficiency factor.
    pub lambda: f64,
    pub alpha_min: f64,
    pub alpha_max: f64,
    /// Penalty for failing at step 0.
    pub beta_max: f64,
    pub t_max: usize,
    /// Added to the standard deviation in advantages.
    pub eps_adv: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            r_base: 1.0,
            lambda: 0.05,
            alpha_min: 0.5,
            alpha_max: 1.0,
            beta_max: 0.5,
            t_max: 25,
            eps_adv: 1e-8,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), String> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !pos(self.r_base) || !pos(self.lambda) {
            return Err("r_base and lambda must be positive".into());
        }
        if !(pos(self.alpha_min) && self.alpha_min <= self.alpha_max && self.alpha_max.is_finite()) {
            return Err(format!("need 0 < alpha_min <= alpha_max, got [{}, {}]", self.alpha_min, self.alpha_max));
        }
        if !(self.beta_max.is_finite() && self.beta_max >= 0.0) {
            return Err("beta_max must be non-negative".into());
        }
        if self.t_max < 1 {
            return Err("t_max must be at least 1".into());
        }
        if !(self.eps_adv.is_finite() && self.eps_adv >= 0.0) {
            return Err("eps_adv must be non-negative".into());
        }
        Ok(())
    }
}

/// How trajectory rewards are computed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// Efficiency factor on success, early-exit penalty on failure.
    #[default]
    Composite,
    /// 1 on success, 0 on failure.
    Binary,
}

/// `clip(exp(-lambda * len), alpha_min, alpha_max)`.
pub fn efficiency_factor(len: usize, cfg: &RewardConfig) -> f64 {
    (-cfg.lambda * len as f64).exp().clamp(cfg.alpha_min, cfg.alpha_max)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("trajectory length {len} exceeds t_max {t_max}")]
pub struct LengthError {
    pub len: usize,
    pub t_max: usize,
}

/// `beta_max * (1 - len / t_max)`.
pub fn early_exit_penalty(len: usize, cfg: &RewardConfig) -> Result<f64, LengthError> {
    if len > cfg.t_max {
        return Err(LengthError { len, t_max: cfg.t_max });
    }
    Ok(cfg.beta_max * (1.0 - len as f64 / cfg.t_max as f64))
}

pub fn trajectory_reward(len: usize, success: bool, cfg: &RewardConfig) -> Result<f64, LengthError> {
    if success {
        if len > cfg.t_max {
            return Err(LengthError { len, t_max: cfg.t_max });
        }
        Ok(cfg.r_base * efficiency_factor(len, cfg))
    } else {
        Ok(-early_exit_penalty(len, cfg)?)
    }
}

/// `(R - mean) / (sigma + eps)` with the population standard deviation.
///
/// # Panics
/// If fewer than two rewards are given.
pub fn group_advantages(rewards: &[f64], eps_adv: f64) -> Vec<f64> {
    assert!(rewards.len() >= 2, "group normalization needs at least two rewards");
    if all_equal(rewards) {
        return vec![0.0; rewards.len()];
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let sigma = reward_std(rewards);
    rewards.iter().map(|r| (r - mean) / (sigma + eps_adv)).collect()
}

fn all_equal(rewards: &[f64]) -> bool {
    rewards.iter().all(|r| *r == rewards[0])
}

/// Population standard deviation; exactly 0 when all rewards are equal.
pub fn reward_std(rewards: &[f64]) -> f64 {
    if rewards.is_empty() || all_equal(rewards) {
        return 0.0;
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    (rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// A group with per-trajectory success bits, rewards and advantages.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredGroup {
    pub group: TrajectoryGroup,
    pub success: Vec<u8>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    /// Reward standard deviation is exactly zero.
    pub degenerate: bool,
}

impl ScoredGroup {
    /// Trajectories whose terminate claim disagrees with the evaluator.
    pub fn claim_disagreements(&self) -> usize {
        use crate::rollout::Terminal;
        self.group
            .trajectories
            .iter()
            .zip(&self.success)
            .filter(|(t, &s)| (t.terminal == Terminal::TerminatedSuccessClaimed) != (s == 1))
            .count()
    }
}

/// Scores a group. Success comes from the evaluator over each trajectory's
/// final states, not from the agent's terminate claim.
pub fn score_group(
    group: TrajectoryGroup,
    app: &AppDefinition,
    task: &Task,
    k: usize,
    cfg: &RewardConfig,
    mode: RewardMode,
) -> Result<ScoredGroup, LengthError> {
    let success: Vec<u8> = group.trajectories.iter().map(|t| evaluate(app, &t.final_states, task, k)).collect();
    let rewards = group
        .trajectories
        .iter()
        .zip(&success)
        .map(|(t, &s)| match mode {
            RewardMode::Composite => trajectory_reward(t.len(), s == 1, cfg),
            RewardMode::Binary => Ok(f64::from(s)),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let degenerate = reward_std(&rewards) == 0.0;
    let advantages = group_advantages(&rewards, cfg.eps_adv);
    Ok(ScoredGroup { group, success, rewards, advantages, degenerate })
}

/// Splits off groups with zero reward variance.
pub fn filter_degenerate(groups: Vec<ScoredGroup>) -> (Vec<ScoredGroup>, usize) {
    let before = groups.len();
    let kept: Vec<ScoredGroup> = groups.into_iter().filter(|g| !g.degenerate).collect();
    let dropped = before - kept.len();
    (kept, dropped)
}

#[cfg(test)]
mod tests;
