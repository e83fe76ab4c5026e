//! Run configuration.
//!
//! A config file is a JSON object whose keys are [`RunConfig`] field names.
//! The optional `"preset"` key (`"default"` or `"large_model"`) picks the base
//! values; every other key overrides its preset value.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::grpo::{OptimizerConfig, RewardConfig, RewardMode};
use crate::policy::FeatureConfig;
use crate::rollout::RolloutConfig;
use crate::taskgen::ExplorationConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Directory of app documents; the bundled apps when unset.
    pub app_dir: Option<PathBuf>,
    /// Task set for `train` and `eval`; the bundled easy-5 set when unset.
    pub tasks: Option<PathBuf>,
    /// Candidate task set read by `filter`, and by `train` with `no_filter`.
    /// Defaults to `<out>/candidates.json`.
    pub candidates: Option<PathBuf>,
    /// Checkpoint for `eval`, or to resume `train` from.
    pub checkpoint: Option<PathBuf>,
    /// Trajectory log for `replay`; defaults to `<out>/trajectories.jsonl`.
    pub trajectory_log: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,

    pub r_base: f64,
    pub lambda: f64,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub beta_max: f64,
    pub eps_adv: f64,

    pub clip_eps: f64,
    pub lr: f64,
    pub grad_clip: f64,
    pub entropy_coef: f64,
    pub kl_coef: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub adam_eps: f64,

    /// Rollouts per task.
    pub group_size: usize,
    /// Episode step limit, also the filter's budget.
    pub t_max: usize,
    /// Evaluation window.
    pub k: usize,
    /// Actions of history in the observation features.
    pub history: usize,
    pub hash_bits: u32,
    pub columns: usize,
    pub coord_bins: usize,
    /// Initial weights are uniform in `[-init_scale, init_scale]`.
    pub init_scale: f64,
    pub temperature: f64,
    pub worker_count: usize,

    pub epochs: usize,
    /// Stop after this many optimizer steps; 0 means no limit.
    pub max_steps: usize,
    /// Tasks (groups) per optimizer step.
    pub groups_per_step: usize,
    pub curriculum: bool,
    pub no_filter: bool,
    pub reward_mode: RewardMode,
    /// Checkpoint every this many steps; 0 writes only the final one.
    pub checkpoint_interval: usize,

    pub walks: usize,
    pub walk_steps: usize,
    pub novelty_bias: f64,
    pub revisit_cap: u32,
}

impl Default for RunConfig {
    fn default() -> Self {
        let r = RewardConfig::default();
        let o = OptimizerConfig::default();
        let f = FeatureConfig::default();
        let x = ExplorationConfig::default();
        RunConfig {
            app_dir: None,
            tasks: None,
            candidates: None,
            checkpoint: None,
            trajectory_log: None,
            out: PathBuf::from("runs"),
            seed: 0,
            r_base: r.r_base,
            lambda: r.lambda,
            alpha_min: r.alpha_min,
            alpha_max: r.alpha_max,
            beta_max: r.beta_max,
            eps_adv: r.eps_adv,
            clip_eps: o.clip_eps,
            lr: 0.005,
            grad_clip: o.grad_clip,
            entropy_coef: o.entropy_coef,
            kl_coef: o.kl_coef,
            beta1: o.beta1,
            beta2: o.beta2,
            weight_decay: o.weight_decay,
            adam_eps: o.adam_eps,
            group_size: 8,
            t_max: r.t_max,
            k: crate::eval::DEFAULT_K,
            history: f.history,
            hash_bits: 12,
            columns: 1024,
            coord_bins: crate::policy::DEFAULT_BINS,
            init_scale: 0.01,
            temperature: 1.0,
            worker_count: 1,
            epochs: 1,
            max_steps: 0,
            groups_per_step: 1,
            curriculum: true,
            no_filter: false,
            reward_mode: RewardMode::Composite,
            checkpoint_interval: 50,
            walks: 200,
            walk_steps: x.max_steps,
            novelty_bias: x.novelty_bias,
            revisit_cap: x.revisit_cap,
        }
    }
}

impl RunConfig {
    /// Defaults with the large-backbone optimizer settings.
    pub fn large_model() -> Self {
        let o = OptimizerConfig::large_model();
        RunConfig { lr: o.lr, weight_decay: o.weight_decay, ..Self::default() }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "default" => Some(Self::default()),
            "large_model" => Some(Self::large_model()),
            _ => None,
        }
    }

    /// Parses and validates a config document. Paths are not checked.
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let mut doc: serde_json::Value =
            serde_json::from_str(text).map_err(|e| HarnessError::Input(format!("config: {e}")))?;
        let obj = doc.as_object_mut().ok_or_else(|| HarnessError::Input("config: expected a JSON object".into()))?;
        let preset = match obj.remove("preset") {
            None => Self::default(),
            Some(serde_json::Value::String(name)) => {
                Self::preset(&name).ok_or_else(|| HarnessError::Input(format!("config: unknown preset {name:?}")))?
            }
            Some(other) => return Err(HarnessError::Input(format!("config: preset must be a string, got {other}"))),
        };
        let mut merged = serde_json::to_value(preset).expect("config serializes");
        let base = merged.as_object_mut().expect("config is an object");
        for (key, value) in std::mem::take(obj) {
            base.insert(key, value);
        }
        let cfg: RunConfig = serde_path_to_error::deserialize(merged)
            .map_err(|e| HarnessError::Input(format!("config field {}: {}", e.path(), e.inner())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Input(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn reward(&self) -> RewardConfig {
        RewardConfig {
            r_base: self.r_base,
            lambda: self.lambda,
            alpha_min: self.alpha_min,
            alpha_max: self.alpha_max,
            beta_max: self.beta_max,
            t_max: self.t_max,
            eps_adv: self.eps_adv,
        }
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            clip_eps: self.clip_eps,
            lr: self.lr,
            grad_clip: self.grad_clip,
            entropy_coef: self.entropy_coef,
            kl_coef: self.kl_coef,
            beta1: self.beta1,
            beta2: self.beta2,
            weight_decay: self.weight_decay,
            adam_eps: self.adam_eps,
        }
    }

    pub fn features(&self) -> FeatureConfig {
        FeatureConfig { hash_bits: self.hash_bits, history: self.history, columns: self.columns }
    }

    pub fn rollout(&self) -> RolloutConfig {
        RolloutConfig { group_size: self.group_size, t_max: self.t_max, k: self.k }
    }

    pub fn exploration(&self) -> ExplorationConfig {
        ExplorationConfig {
            max_steps: self.walk_steps,
            novelty_bias: self.novelty_bias,
            revisit_cap: self.revisit_cap,
            seed: self.seed,
        }
    }

    /// Numeric constraints of every module the config feeds.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Input(format!("config: {m}")));
        if let Err(m) = self.reward().validate() {
            return bad(m);
        }
        if let Err(m) = self.optimizer().validate() {
            return bad(m);
        }
        if let Err(m) = self.features().validate() {
            return bad(m);
        }
        if let Err(m) = self.exploration().validate() {
            return bad(m);
        }
        if let Err(e) = self.rollout().validate() {
            return bad(e.to_string());
        }
        if self.coord_bins < 2 {
            return bad(format!("coord_bins {} < 2", self.coord_bins));
        }
        if !(self.init_scale.is_finite() && self.init_scale >= 0.0) {
            return bad("init_scale must be non-negative".into());
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return bad("temperature must be positive".into());
        }
        if self.worker_count < 1 {
            return bad("worker_count must be at least 1".into());
        }
        if self.groups_per_step < 1 {
            return bad("groups_per_step must be at least 1".into());
        }
        Ok(())
    }

    /// Fails when a configured input path does not exist.
    pub fn check_paths(&self) -> Result<(), HarnessError> {
        let inputs = [
            ("app_dir", &self.app_dir),
            ("tasks", &self.tasks),
            ("candidates", &self.candidates),
            ("checkpoint", &self.checkpoint),
            ("trajectory_log", &self.trajectory_log),
        ];
        for (name, path) in inputs {
            if let Some(p) = path {
                if !p.exists() {
                    return Err(HarnessError::Input(format!("{name}: {} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }

    pub fn candidates_path(&self) -> PathBuf {
        self.candidates.clone().unwrap_or_else(|| self.out.join(CANDIDATES_FILE))
    }

    pub fn trajectory_log_path(&self) -> PathBuf {
        self.trajectory_log.clone().unwrap_or_else(|| self.out.join(TRAJECTORY_LOG))
    }
}

pub const CANDIDATES_FILE: &str = "candidates.json";
pub const EXPLORATION_LOG: &str = "exploration.jsonl";
pub const CURRICULUM_FILE: &str = "curriculum.json";
pub const FILTER_STATS: &str = "filter_stats.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const TRAJECTORY_LOG: &str = "trajectories.jsonl";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const EVAL_FILE: &str = "eval.json";
