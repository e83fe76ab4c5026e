use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::JoinHandle;

use super::{collect_group, panic_message, PolicyAgent, RolloutConfig, TrajectoryGroup};
use crate::eval::Task;
use crate::policy::PolicyParams;
use crate::world::AppSet;

/// Latest published policy snapshot. Publication swaps an `Arc`, so readers
/// holding an older snapshot keep it unchanged.
#[derive(Debug)]
pub struct PolicySource {
    current: RwLock<(u64, Arc<PolicyParams>)>,
}

impl PolicySource {
    pub fn new(params: PolicyParams) -> Self {
        Self::with_version(params, 0)
    }

    /// Source whose first snapshot carries `version`, for resumed runs.
    pub fn with_version(params: PolicyParams, version: u64) -> Self {
        PolicySource { current: RwLock::new((version, Arc::new(params))) }
    }

    pub fn publish(&self, params: PolicyParams) -> u64 {
        let mut cur = self.current.write().expect("policy lock");
        let version = cur.0 + 1;
        *cur = (version, Arc::new(params));
        version
    }

    /// Version number and snapshot.
    pub fn snapshot(&self) -> (u64, Arc<PolicyParams>) {
        let cur = self.current.read().expect("policy lock");
        (cur.0, Arc::clone(&cur.1))
    }
}

#[derive(Clone, Debug)]
pub struct Job {
    pub id: u64,
    pub task: Task,
    pub seed: u64,
}

#[derive(Debug)]
pub struct GroupOutcome {
    pub job_id: u64,
    pub task_id: String,
    /// Failed groups carry the error of their last attempt.
    pub result: Result<TrajectoryGroup, String>,
}

#[derive(Clone)]
struct WorkerContext {
    apps: Arc<AppSet>,
    source: Arc<PolicySource>,
    cfg: RolloutConfig,
    temperature: f64,
}

fn run_job(ctx: &WorkerContext, job: &Job) -> Result<TrajectoryGroup, String> {
    let (version, params) = ctx.source.snapshot();
    let agent = PolicyAgent { params, temperature: ctx.temperature, greedy: false };
    catch_unwind(AssertUnwindSafe(|| collect_group(&ctx.apps, &job.task, &agent, &ctx.cfg, job.seed, version)))
        .map_err(panic_message)
        .and_then(|r| r.map_err(|e| e.to_string()))
}

fn worker(ctx: WorkerContext, jobs: Arc<Mutex<Receiver<Job>>>, out: Sender<GroupOutcome>) {
    loop {
        let job = match jobs.lock().expect("job queue lock").recv() {
            Ok(job) => job,
            Err(_) => return,
        };
        let result = run_job(&ctx, &job).or_else(|first| {
            tracing::warn!(job = job.id, task = %job.task.task_id, error = %first, "group failed, retrying");
            run_job(&ctx, &job)
        });
        if let Err(e) = &result {
            tracing::error!(job = job.id, task = %job.task.task_id, error = %e, "group failed twice, skipping");
        }
        if out.send(GroupOutcome { job_id: job.id, task_id: job.task.task_id.clone(), result }).is_err() {
            return;
        }
    }
}

/// Fixed set of rollout workers fed through a job queue.
pub struct RolloutPool {
    jobs: Option<Sender<Job>>,
    results: Receiver<GroupOutcome>,
    workers: Vec<JoinHandle<()>>,
    pending: usize,
}

impl RolloutPool {
    /// # Panics
    /// If `worker_count` is 0.
    pub fn new(
        worker_count: usize,
        apps: Arc<AppSet>,
        source: Arc<PolicySource>,
        cfg: RolloutConfig,
        temperature: f64,
    ) -> Self {
        assert!(worker_count >= 1, "worker_count must be at least 1");
        let (job_tx, job_rx) = channel();
        let (out_tx, out_rx) = channel();
        let job_rx = Arc::new(Mutex::new(job_rx));
        let ctx = WorkerContext { apps, source, cfg, temperature };
        let workers = (0..worker_count)
            .map(|i| {
                let (ctx, jobs, out) = (ctx.clone(), Arc::clone(&job_rx), out_tx.clone());
                std::thread::Builder::new()
                    .name(format!("rollout-{i}"))
                    .spawn(move || worker(ctx, jobs, out))
                    .expect("spawn rollout worker")
            })
            .collect();
        RolloutPool { jobs: Some(job_tx), results: out_rx, workers, pending: 0 }
    }

    pub fn submit(&mut self, job: Job) {
        self.jobs.as_ref().expect("pool open").send(job).expect("workers alive");
        self.pending += 1;
    }

    /// Next finished group, or `None` once every submitted job is done.
    pub fn next_outcome(&mut self) -> Option<GroupOutcome> {
        if self.pending == 0 {
            return None;
        }
        let outcome = self.results.recv().expect("workers alive while jobs pending");
        self.pending -= 1;
        Some(outcome)
    }

    /// Runs `jobs` to completion and returns outcomes in job order.
    pub fn run_batch(&mut self, jobs: Vec<Job>) -> Vec<GroupOutcome> {
        for job in jobs {
            self.submit(job);
        }
        let mut out: Vec<GroupOutcome> = std::iter::from_fn(|| self.next_outcome()).collect();
        out.sort_by_key(|o| o.job_id);
        out
    }
}

impl Iterator for RolloutPool {
    type Item = GroupOutcome;

    fn next(&mut self) -> Option<GroupOutcome> {
        self.next_outcome()
    }
}

impl Drop for RolloutPool {
    fn drop(&mut self) {
        self.jobs.take();
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

/// Runs every job in `queue` on `worker_count` workers; outcomes arrive in
/// completion order.
pub fn run_pool(
    queue: Vec<Job>,
    apps: Arc<AppSet>,
    source: Arc<PolicySource>,
    cfg: RolloutConfig,
    temperature: f64,
    worker_count: usize,
) -> RolloutPool {
    let mut pool = RolloutPool::new(worker_count, apps, source, cfg, temperature);
    for job in queue {
        pool.submit(job);
    }
    pool.jobs.take();
    pool
}
