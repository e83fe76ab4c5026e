//! The training loop.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{HarnessError, RunConfig};
use crate::eval::Task;
use crate::grpo::{filter_degenerate, score_group, surrogate_loss, trajectory_reward, update, AdamState, ScoredGroup};
use crate::policy::{Checkpoint, PolicyParams, Vocab};
use crate::rollout::{Job, PolicySource, RolloutPool, TrajectoryRecord};
use crate::world::AppSet;

/// Position of a run; everything needed to continue it besides the weights
/// and optimizer moments.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Progress {
    /// Optimizer steps taken (including skipped ones).
    pub step: u64,
    pub tasks_seen: u64,
    pub epoch: u64,
    /// Index of the next task within the current epoch's order.
    pub cursor: u64,
    pub policy_version: u64,
    pub adam_t: u64,
}

/// One row of the metrics CSV. Optional columns are empty when no update
/// ran or no trajectory succeeded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub tasks_seen: u64,
    pub groups_kept: usize,
    pub groups_dropped: usize,
    pub mean_base_reward: f64,
    pub mean_composite_reward: f64,
    pub impossible_task_ratio: f64,
    pub mean_success_len: Option<f64>,
    pub loss: Option<f64>,
    pub grad_norm: Option<f64>,
    pub entropy: Option<f64>,
    pub kl: Option<f64>,
}

pub struct StepOutcome {
    pub metrics: MetricsRow,
    /// One record per collected trajectory, in group then rollout order.
    pub records: Vec<TrajectoryRecord>,
    /// Task ids of this step's groups, in order.
    pub visited: Vec<String>,
    /// The update was skipped because the loss or gradient was not finite.
    pub skipped: bool,
}

pub struct Trainer {
    cfg: RunConfig,
    apps: Arc<AppSet>,
    tasks: Vec<Task>,
    params: PolicyParams,
    adam: AdamState,
    progress: Progress,
    source: Arc<PolicySource>,
    pool: RolloutPool,
    seed_base: u64,
}

/// Training order of `tasks` for curriculum runs: by complexity, unknown
/// complexity last, ties by task id.
pub fn curriculum_order(tasks: &[Task]) -> Vec<Task> {
    let mut v = tasks.to_vec();
    v.sort_by(|a, b| {
        a.complexity.unwrap_or(u32::MAX).cmp(&b.complexity.unwrap_or(u32::MAX)).then_with(|| a.task_id.cmp(&b.task_id))
    });
    v
}

impl Trainer {
    /// Fresh run with seeded random weights.
    pub fn new(cfg: RunConfig, apps: Arc<AppSet>, tasks: Vec<Task>) -> Result<Self, HarnessError> {
        let vocab = Vocab::from_apps(&apps, cfg.coord_bins);
        let params = PolicyParams::random(vocab, cfg.features(), cfg.seed, cfg.init_scale);
        let adam = AdamState::new(params.len());
        Self::assemble(cfg, apps, tasks, params, adam, Progress::default())
    }

    /// Continues the run saved in `ck`.
    pub fn resume(cfg: RunConfig, apps: Arc<AppSet>, tasks: Vec<Task>, ck: &Checkpoint) -> Result<Self, HarnessError> {
        let bad = |m: String| HarnessError::Input(format!("checkpoint: {m}"));
        let params = ck.policy().map_err(|e| bad(e.to_string()))?;
        if params.features != cfg.features() {
            return Err(bad("feature map differs from the config".into()));
        }
        let meta: CheckpointMeta = serde_json::from_value(ck.header.meta.clone()).map_err(|e| bad(e.to_string()))?;
        let m = ck.array(ADAM_M).ok_or_else(|| bad("no optimizer state".into()))?;
        let v = ck.array(ADAM_V).ok_or_else(|| bad("no optimizer state".into()))?;
        if m.len() != params.len() || v.len() != params.len() {
            return Err(bad("optimizer state has the wrong length".into()));
        }
        let adam = AdamState { m: m.to_vec(), v: v.to_vec(), t: meta.progress.adam_t };
        Self::assemble(cfg, apps, tasks, params, adam, meta.progress)
    }

    fn assemble(
        cfg: RunConfig,
        apps: Arc<AppSet>,
        tasks: Vec<Task>,
        params: PolicyParams,
        adam: AdamState,
        progress: Progress,
    ) -> Result<Self, HarnessError> {
        cfg.validate()?;
        for t in &tasks {
            t.validate(&apps).map_err(|e| HarnessError::Input(e.to_string()))?;
        }
        let source = Arc::new(PolicySource::with_version(params.clone(), progress.policy_version));
        let pool = RolloutPool::new(cfg.worker_count, apps.clone(), source.clone(), cfg.rollout(), cfg.temperature);
        let seed_base = ChaCha8Rng::seed_from_u64(cfg.seed).next_u64();
        Ok(Trainer { cfg, apps, tasks, params, adam, progress, source, pool, seed_base })
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn progress(&self) -> &Progress {
        &self.progress
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    /// Task order of `epoch`: the curriculum, or a shuffle seeded by
    /// `seed + epoch`.
    pub fn epoch_order(&self, epoch: u64) -> Vec<Task> {
        if self.cfg.curriculum {
            curriculum_order(&self.tasks)
        } else {
            let mut v = self.tasks.clone();
            v.shuffle(&mut ChaCha8Rng::seed_from_u64(self.cfg.seed.wrapping_add(epoch)));
            v
        }
    }

    pub fn finished(&self) -> bool {
        let p = &self.progress;
        self.tasks.is_empty()
            || p.epoch >= self.cfg.epochs as u64
            || (self.cfg.max_steps > 0 && p.step >= self.cfg.max_steps as u64)
    }

    /// Runs one optimizer step, or returns `None` when training is over.
    pub fn step(&mut self) -> Option<StepOutcome> {
        if self.finished() {
            return None;
        }
        let order = self.epoch_order(self.progress.epoch);
        let start = self.progress.cursor as usize;
        let end = (start + self.cfg.groups_per_step).min(order.len());
        let g = self.cfg.group_size as u64;
        let jobs: Vec<Job> = order[start..end]
            .iter()
            .enumerate()
            .map(|(i, task)| {
                let n = self.progress.tasks_seen + i as u64;
                Job { id: n, task: task.clone(), seed: self.seed_base.wrapping_add(n.wrapping_mul(g)) }
            })
            .collect();
        let visited: Vec<String> = jobs.iter().map(|j| j.task.task_id.clone()).collect();
        let snapshot = self.source.snapshot().1;
        let outcomes = self.pool.run_batch(jobs);

        let reward_cfg = self.cfg.reward();
        let mut scored = Vec::new();
        let mut records = Vec::new();
        for o in outcomes {
            let Ok(group) = o.result else {
                continue;
            };
            let task = &order[start + (o.job_id - self.progress.tasks_seen) as usize];
            let app = self.apps.get(&task.app_id).expect("tasks validated against apps");
            let sg = score_group(group, app, task, self.cfg.k, &reward_cfg, self.cfg.reward_mode)
                .expect("rollouts never exceed t_max");
            for ((t, &s), &r) in sg.group.trajectories.iter().zip(&sg.success).zip(&sg.rewards) {
                records.push(TrajectoryRecord::from_trajectory(t, Some(s), Some(r)));
            }
            scored.push(sg);
        }
        let mut metrics = batch_metrics(&scored, &reward_cfg);
        metrics.step = self.progress.step + 1;
        metrics.tasks_seen = self.progress.tasks_seen + (end - start) as u64;

        let (kept, dropped) = filter_degenerate(scored);
        metrics.groups_kept = kept.len();
        metrics.groups_dropped = dropped;
        let mut skipped = false;
        if !kept.is_empty() {
            match self.optimize(&kept, &snapshot) {
                Ok((loss, grad_norm, entropy, kl)) => {
                    metrics.loss = Some(loss);
                    metrics.grad_norm = Some(grad_norm);
                    metrics.entropy = Some(entropy);
                    metrics.kl = Some(kl);
                }
                Err(loss) => {
                    tracing::warn!(step = metrics.step, loss, "non-finite loss or gradient, update skipped");
                    metrics.loss = Some(loss);
                    skipped = true;
                }
            }
        }

        self.progress.step += 1;
        self.progress.tasks_seen = metrics.tasks_seen;
        self.progress.cursor = end as u64;
        if end >= order.len() {
            self.progress.epoch += 1;
            self.progress.cursor = 0;
        }
        Some(StepOutcome { metrics, records, visited, skipped })
    }

    /// Loss, update and snapshot publication. On a non-finite loss or
    /// gradient nothing changes and the loss is returned as the error.
    fn optimize(&mut self, kept: &[ScoredGroup], snapshot: &PolicyParams) -> Result<(f64, f64, f64, f64), f64> {
        let opt = self.cfg.optimizer();
        let report = surrogate_loss(kept, &self.params, Some(snapshot), &opt).expect("groups come from this policy");
        if !report.loss.is_finite() {
            return Err(report.loss);
        }
        let mut next = self.params.weights.clone();
        let mut adam = self.adam.clone();
        let upd = update(&mut next, &report.grad, &mut adam, &opt).map_err(|_| report.loss)?;
        if next.iter().any(|w| !w.is_finite()) {
            return Err(report.loss);
        }
        self.params.weights = next;
        self.adam = adam;
        self.progress.adam_t = self.adam.t;
        self.progress.policy_version = self.source.publish(self.params.clone());
        Ok((report.loss, upd.grad_norm, report.entropy, report.kl))
    }

    /// Checkpoint of the current state. `files` records output lengths so a
    /// resumed run can truncate what was written after it.
    pub fn checkpoint(&self, files: FileMarks) -> Checkpoint {
        let meta = CheckpointMeta { progress: self.progress.clone(), files };
        Checkpoint::from_policy(
            &self.params,
            self.progress.step,
            serde_json::to_value(meta).expect("meta serializes"),
            vec![(ADAM_M.into(), self.adam.m.clone()), (ADAM_V.into(), self.adam.v.clone())],
        )
    }
}

pub const ADAM_M: &str = "adam_m";
pub const ADAM_V: &str = "adam_v";

/// Byte lengths of the run's append-only outputs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileMarks {
    pub metrics_bytes: u64,
    pub log_bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub progress: Progress,
    pub files: FileMarks,
}

impl CheckpointMeta {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, HarnessError> {
        serde_json::from_value(ck.header.meta.clone())
            .map_err(|e| HarnessError::Input(format!("checkpoint has no run state: {e}")))
    }
}

/// Reward statistics over every collected group, degenerate or not. The
/// composite reward is reported even in binary-reward runs.
fn batch_metrics(groups: &[ScoredGroup], reward: &crate::grpo::RewardConfig) -> MetricsRow {
    let mut n = 0usize;
    let (mut base, mut composite) = (0.0, 0.0);
    let (mut succ_n, mut succ_len) = (0usize, 0usize);
    let mut impossible = 0usize;
    for g in groups {
        if g.success.iter().all(|&s| s == 0) {
            impossible += 1;
        }
        for (t, &s) in g.group.trajectories.iter().zip(&g.success) {
            n += 1;
            base += f64::from(s);
            composite += trajectory_reward(t.len(), s == 1, reward).expect("rollouts never exceed t_max");
            if s == 1 {
                succ_n += 1;
                succ_len += t.len();
            }
        }
    }
    let mean = |x: f64, d: usize| if d == 0 { 0.0 } else { x / d as f64 };
    MetricsRow {
        step: 0,
        tasks_seen: 0,
        groups_kept: 0,
        groups_dropped: 0,
        mean_base_reward: mean(base, n),
        mean_composite_reward: mean(composite, n),
        impossible_task_ratio: mean(impossible as f64, groups.len()),
        mean_success_len: (succ_n > 0).then(|| succ_len as f64 / succ_n as f64),
        loss: None,
        grad_norm: None,
        entropy: None,
        kl: None,
    }
}
