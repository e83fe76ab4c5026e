//! Pipeline commands behind the `guirl` binary.
//!
//! `explore` writes candidate tasks, `filter` turns them into a curriculum,
//! `train` runs grouped rollouts and optimizer steps over a task set, `eval`
//! measures greedy success and `replay` re-simulates a trajectory log.
//!
//! Every command reads a [`RunConfig`] and writes under its `out` directory.
//! Errors carry the process exit code: 2 for bad input, 3 for failed writes.

mod config;
mod train;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use config::{
    RunConfig, CANDIDATES_FILE, CHECKPOINT_DIR, CURRICULUM_FILE, EVAL_FILE, EXPLORATION_LOG, FILTER_STATS,
    FINAL_CHECKPOINT, METRICS_FILE, TRAJECTORY_LOG,
};
pub use train::{curriculum_order, CheckpointMeta, FileMarks, MetricsRow, Progress, StepOutcome, Trainer};

use crate::eval::{evaluate, load_task_set, read_task_set, task_set_json, Task, TaskError};
use crate::filter::{
    admitted, build_curriculum, filter_task, FilterReason, FilterVerdict, PlannerProxy, TrueSimWorldModel,
};
use crate::policy::{decode_checkpoint, encode_checkpoint, Checkpoint, PolicyParams, Vocab};
use crate::rollout::{read_log, replay_record, rollout, write_record, Agent, PolicyAgent, ReplayError};
use crate::taskgen::{explore, reverse_label, Coverage, TemplateLabeler};
use crate::world::{bundled, AppSet};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Io(String),
    #[error("trajectory {index} ({task_id}): {source}")]
    Replay { index: usize, task_id: String, source: ReplayError },
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Input(_) => 2,
            HarnessError::Io(_) => 3,
            HarnessError::Replay { .. } => 1,
        }
    }
}

fn input(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Input(e.to_string())
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Io(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn create_out(cfg: &RunConfig) -> Result<(), HarnessError> {
    fs::create_dir_all(&cfg.out).map_err(|e| io_err(&cfg.out, e))
}

/// Apps from `app_dir`, or the bundled ones.
pub fn load_apps(cfg: &RunConfig) -> Result<AppSet, HarnessError> {
    match &cfg.app_dir {
        Some(dir) => {
            let apps = AppSet::load_dir(dir).map_err(input)?;
            if apps.is_empty() {
                return Err(HarnessError::Input(format!("no apps in {}", dir.display())));
            }
            Ok(apps)
        }
        None => Ok(bundled::app_set()),
    }
}

fn task_input(e: TaskError) -> HarnessError {
    HarnessError::Input(e.to_string())
}

/// The `tasks` set, or the bundled easy-5 set.
pub fn load_tasks(cfg: &RunConfig, apps: &AppSet) -> Result<Vec<Task>, HarnessError> {
    match &cfg.tasks {
        Some(p) => read_task_set(p, apps).map_err(task_input),
        None => load_task_set(bundled::EASY_5, apps).map_err(task_input),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExploreSummary {
    pub walks: usize,
    /// Walks the labeler turned into a valid task, before deduplication.
    pub labeled: usize,
    pub candidates: usize,
}

/// Random walks round-robin over the apps with a shared coverage record.
/// Each labeled walk becomes a candidate unless an earlier one has the same
/// app and goal.
pub fn cmd_explore(cfg: &RunConfig) -> Result<ExploreSummary, HarnessError> {
    let apps = load_apps(cfg)?;
    let apps: Vec<_> = apps.iter().cloned().collect();
    create_out(cfg)?;
    let log_path = cfg.out.join(EXPLORATION_LOG);
    let mut log = Vec::new();
    let mut coverage = Coverage::default();
    let mut seen = BTreeSet::new();
    let mut candidates = Vec::new();
    let mut labeled = 0;
    for i in 0..cfg.walks {
        let app = &apps[i % apps.len()];
        let ecfg = crate::taskgen::ExplorationConfig { seed: cfg.seed.wrapping_add(i as u64), ..cfg.exploration() };
        let walk = explore(app, &ecfg, &mut coverage);
        serde_json::to_writer(&mut log, &walk).expect("walk serializes");
        log.push(b'\n');
        let Some(task) = reverse_label(app, &walk, &TemplateLabeler, format!("{}-{i:04}", app.app_id)) else {
            continue;
        };
        labeled += 1;
        let key = (task.app_id.clone(), serde_json::to_string(&task.goal).expect("goal serializes"));
        if seen.insert(key) {
            candidates.push(task);
        }
    }
    write_file(&log_path, &log)?;
    write_file(&cfg.out.join(CANDIDATES_FILE), task_set_json(&candidates).as_bytes())?;
    Ok(ExploreSummary { walks: cfg.walks, labeled, candidates: candidates.len() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterStats {
    pub total: usize,
    pub admitted: usize,
    pub rejected: BTreeMap<String, usize>,
    pub verdicts: Vec<(String, FilterVerdict)>,
}

/// Filters the candidate set with the planner proxy in the simulator and
/// writes the admitted tasks in curriculum order.
pub fn cmd_filter(cfg: &RunConfig) -> Result<FilterStats, HarnessError> {
    let apps = load_apps(cfg)?;
    let candidates = read_task_set(&cfg.candidates_path(), &apps).map_err(task_input)?;
    create_out(cfg)?;
    let (curriculum, stats) = filter_tasks(cfg, &apps, candidates)?;
    write_file(&cfg.out.join(CURRICULUM_FILE), task_set_json(&curriculum).as_bytes())?;
    let mut stats_json = serde_json::to_vec_pretty(&stats).expect("stats serialize");
    stats_json.push(b'\n');
    write_file(&cfg.out.join(FILTER_STATS), &stats_json)?;
    Ok(stats)
}

/// Filter verdicts and the resulting curriculum, without touching disk.
pub fn filter_tasks(
    cfg: &RunConfig,
    apps: &AppSet,
    candidates: Vec<Task>,
) -> Result<(Vec<Task>, FilterStats), HarnessError> {
    let mut proxy = PlannerProxy::new(Vocab::from_apps(apps, cfg.coord_bins));
    let mut results = Vec::with_capacity(candidates.len());
    for task in candidates {
        let app = apps.get(&task.app_id).expect("task set validated");
        let verdict = filter_task(app, &task, &TrueSimWorldModel, &mut proxy, cfg.t_max, cfg.k).map_err(input)?;
        results.push((task, verdict));
    }
    let mut rejected = BTreeMap::new();
    for (_, v) in results.iter().filter(|(_, v)| !v.admitted) {
        let name = match v.reason {
            FilterReason::Success => "success",
            FilterReason::StepLimit => "step_limit",
            FilterReason::DeclaredFailure => "declared_failure",
            FilterReason::Unconfirmed => "unconfirmed",
        };
        *rejected.entry(name.to_string()).or_insert(0) += 1;
    }
    let verdicts = results.iter().map(|(t, v)| (t.task_id.clone(), v.clone())).collect();
    let total = results.len();
    let curriculum = build_curriculum(admitted(results)).expect("admitted tasks have a complexity");
    let stats = FilterStats { total, admitted: curriculum.len(), rejected, verdicts };
    Ok((curriculum, stats))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task_id: String,
    pub success: u8,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tasks: Vec<TaskResult>,
    pub success_rate: f64,
}

/// One greedy rollout per task, scored by the evaluator.
pub fn greedy_eval(
    apps: &AppSet,
    params: Arc<PolicyParams>,
    tasks: &[Task],
    t_max: usize,
    k: usize,
) -> Result<EvalReport, HarnessError> {
    agent_eval(apps, &PolicyAgent { params, temperature: 1.0, greedy: true }, tasks, t_max, k)
}

/// One rollout of `agent` per task with seed 0.
pub fn agent_eval(
    apps: &AppSet,
    agent: &dyn Agent,
    tasks: &[Task],
    t_max: usize,
    k: usize,
) -> Result<EvalReport, HarnessError> {
    if tasks.is_empty() {
        return Err(HarnessError::Input("empty task set: success rate undefined".into()));
    }
    let mut results = Vec::with_capacity(tasks.len());
    for task in tasks {
        let app = apps.get(&task.app_id).ok_or_else(|| input(format!("unknown app {}", task.app_id)))?;
        let t = rollout(app, task, agent, t_max, k, 0);
        let success = evaluate(app, &t.final_states, task, k);
        results.push(TaskResult { task_id: task.task_id.clone(), success, steps: t.len() });
    }
    let sr = results.iter().map(|r| f64::from(r.success)).sum::<f64>() / results.len() as f64;
    Ok(EvalReport { tasks: results, success_rate: sr })
}

fn write_report(cfg: &RunConfig, report: &EvalReport) -> Result<(), HarnessError> {
    let mut bytes = serde_json::to_vec_pretty(report).expect("report serializes");
    bytes.push(b'\n');
    write_file(&cfg.out.join(EVAL_FILE), &bytes)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, HarnessError> {
    let bytes = fs::read(path).map_err(|e| HarnessError::Input(format!("checkpoint {}: {e}", path.display())))?;
    decode_checkpoint(&bytes).map_err(|e| HarnessError::Input(format!("checkpoint {}: {e}", path.display())))
}

/// Greedy success rate of the `checkpoint` policy on the `tasks` set.
pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalReport, HarnessError> {
    let path = cfg.checkpoint.as_ref().ok_or_else(|| HarnessError::Input("eval needs a checkpoint".into()))?;
    let params = read_checkpoint(path)?.policy().map_err(input)?;
    let apps = load_apps(cfg)?;
    let tasks = load_tasks(cfg, &apps)?;
    let report = greedy_eval(&apps, Arc::new(params), &tasks, cfg.t_max, cfg.k)?;
    create_out(cfg)?;
    write_report(cfg, &report)?;
    Ok(report)
}

const METRICS_HEADER: &str = "step,tasks_seen,groups_kept,groups_dropped,mean_base_reward,mean_composite_reward,\
impossible_task_ratio,mean_success_len,loss,grad_norm,entropy,kl\n";

fn metrics_line(row: &MetricsRow) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.serialize(row).expect("row serializes");
    w.into_inner().expect("in-memory writer")
}

/// Reads a metrics CSV written by `train`.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>, HarnessError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| HarnessError::Input(format!("{}: {e}", path.display())))?;
    r.deserialize().collect::<Result<_, _>>().map_err(|e| HarnessError::Input(format!("{}: {e}", path.display())))
}

/// Append-only outputs of a training run.
struct RunFiles {
    metrics_path: PathBuf,
    log_path: PathBuf,
    metrics: File,
    log: File,
    marks: FileMarks,
}

impl RunFiles {
    fn open(cfg: &RunConfig, resume: Option<FileMarks>) -> Result<Self, HarnessError> {
        let metrics_path = cfg.out.join(METRICS_FILE);
        let log_path = cfg.out.join(TRAJECTORY_LOG);
        let open = |p: &Path| OpenOptions::new().create(true).append(true).open(p).map_err(|e| io_err(p, e));
        let marks = match resume {
            Some(m) => {
                for (p, len) in [(&metrics_path, m.metrics_bytes), (&log_path, m.log_bytes)] {
                    let f = OpenOptions::new().write(true).open(p).map_err(|e| io_err(p, e))?;
                    let have = f.metadata().map_err(|e| io_err(p, e))?.len();
                    if have < len {
                        return Err(HarnessError::Input(format!(
                            "{} is shorter than the checkpoint recorded ({have} < {len} bytes)",
                            p.display()
                        )));
                    }
                    f.set_len(len).map_err(|e| io_err(p, e))?;
                }
                m
            }
            None => {
                write_file(&metrics_path, METRICS_HEADER.as_bytes())?;
                write_file(&log_path, b"")?;
                FileMarks { metrics_bytes: METRICS_HEADER.len() as u64, log_bytes: 0 }
            }
        };
        Ok(RunFiles { metrics: open(&metrics_path)?, log: open(&log_path)?, metrics_path, log_path, marks })
    }

    fn append(&mut self, outcome: &StepOutcome) -> Result<(), HarnessError> {
        let line = metrics_line(&outcome.metrics);
        self.metrics.write_all(&line).map_err(|e| io_err(&self.metrics_path, e))?;
        self.marks.metrics_bytes += line.len() as u64;
        let mut buf = Vec::new();
        for r in &outcome.records {
            write_record(&mut buf, r).expect("in-memory write");
        }
        self.log.write_all(&buf).map_err(|e| io_err(&self.log_path, e))?;
        self.marks.log_bytes += buf.len() as u64;
        Ok(())
    }

    fn sync(&mut self) -> Result<(), HarnessError> {
        self.metrics.sync_data().map_err(|e| io_err(&self.metrics_path, e))?;
        self.log.sync_data().map_err(|e| io_err(&self.log_path, e))
    }
}

fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    write_file(&tmp, &encode_checkpoint(ck))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: u64,
    pub skipped_updates: u64,
    pub final_eval: EvalReport,
}

/// Path of the periodic checkpoint written after `step`.
pub fn checkpoint_path(out: &Path, step: u64) -> PathBuf {
    out.join(CHECKPOINT_DIR).join(format!("step-{step:06}.ckpt"))
}

/// Trains on the task set (the candidates with `no_filter`), resuming from
/// `checkpoint` when one is configured.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary, HarnessError> {
    let apps = Arc::new(load_apps(cfg)?);
    let tasks = if cfg.no_filter {
        read_task_set(&cfg.candidates_path(), &apps).map_err(task_input)?
    } else {
        load_tasks(cfg, &apps)?
    };
    if tasks.is_empty() {
        return Err(HarnessError::Input("empty task set".into()));
    }
    create_out(cfg)?;
    let (mut trainer, mut files) = match &cfg.checkpoint {
        Some(path) => {
            let ck = read_checkpoint(path)?;
            let meta = CheckpointMeta::from_checkpoint(&ck)?;
            let trainer = Trainer::resume(cfg.clone(), apps.clone(), tasks.clone(), &ck)?;
            (trainer, RunFiles::open(cfg, Some(meta.files))?)
        }
        None => (Trainer::new(cfg.clone(), apps.clone(), tasks.clone())?, RunFiles::open(cfg, None)?),
    };
    tracing::info!(
        tasks = tasks.len(),
        curriculum = cfg.curriculum,
        mode = ?cfg.reward_mode,
        start_step = trainer.progress().step,
        "training"
    );
    let mut skipped = 0;
    let mut last_epoch = trainer.progress().epoch;
    while let Some(outcome) = trainer.step() {
        files.append(&outcome)?;
        let step = outcome.metrics.step;
        skipped += u64::from(outcome.skipped);
        tracing::debug!(step, tasks = ?outcome.visited, "visited");
        if trainer.progress().epoch != last_epoch {
            tracing::info!(epoch = last_epoch, step, "epoch finished");
            last_epoch = trainer.progress().epoch;
        }
        if cfg.checkpoint_interval > 0 && step % cfg.checkpoint_interval as u64 == 0 {
            files.sync()?;
            save_checkpoint(&checkpoint_path(&cfg.out, step), &trainer.checkpoint(files.marks))?;
        }
    }
    files.sync()?;
    save_checkpoint(&cfg.out.join(CHECKPOINT_DIR).join(FINAL_CHECKPOINT), &trainer.checkpoint(files.marks))?;
    let report = greedy_eval(&apps, Arc::new(trainer.params().clone()), &tasks, cfg.t_max, cfg.k)?;
    write_report(cfg, &report)?;
    tracing::info!(steps = trainer.progress().step, success_rate = report.success_rate, "training done");
    Ok(TrainSummary { steps: trainer.progress().step, skipped_updates: skipped, final_eval: report })
}

/// Re-simulates every logged trajectory (of `task` only, when given) and
/// returns the rendering. Fails at the first digest mismatch.
pub fn cmd_replay(cfg: &RunConfig, task: Option<&str>) -> Result<String, HarnessError> {
    let apps = load_apps(cfg)?;
    let path = cfg.trajectory_log_path();
    let file = File::open(&path).map_err(|e| HarnessError::Input(format!("{}: {e}", path.display())))?;
    let records =
        read_log(BufReader::new(file)).map_err(|e| HarnessError::Input(format!("{}: {e}", path.display())))?;
    let mut out = String::new();
    for (index, r) in records.iter().enumerate() {
        if task.is_some_and(|t| t != r.task_id) {
            continue;
        }
        let text = replay_record(&apps, r).map_err(|source| HarnessError::Replay {
            index,
            task_id: r.task_id.clone(),
            source,
        })?;
        out.push_str(&text);
    }
    Ok(out)
}
