//! Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
//! fails.
//!
//! `cargo run --release -p guirl-core --example acceptance`

#[path = "../tests/common/mod.rs"]
mod common;

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use guirl_core::eval::{load_task_set, read_task_set, Atom, Task};
use guirl_core::filter::{filter_task, FilterReason, PlannerProxy, TrueSimWorldModel};
use guirl_core::grpo::{
    early_exit_penalty, efficiency_factor, group_advantages, reward_std, surrogate_loss, trajectory_reward,
    OptimizerConfig, RewardConfig, RewardMode, ScoredGroup,
};
use guirl_core::harness::{self, greedy_eval, RunConfig, Trainer};
use guirl_core::policy::{encode_obs, FeatureConfig, PolicyParams, Vocab};
use guirl_core::rollout::{collect_group, run_pool, Job, PolicyAgent, PolicySource, RolloutConfig, TrajectoryRecord};
use guirl_core::world::{bundled, AppSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

// 1 ------------------------------------------------------------------------

/// `e^x` for `x >= 0` by its Taylor series; every term is positive, so the
/// sum has no cancellation.
fn exp_series(x: f64) -> f64 {
    let (mut sum, mut term, mut n) = (1.0f64, 1.0f64, 0u32);
    loop {
        n += 1;
        term *= x / n as f64;
        sum += term;
        if term < sum * 1e-19 {
            return sum;
        }
    }
}

fn reward_oracle() -> Verdict {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    let mut hit = [0usize; 3];
    for _ in 0..200 {
        let t_max = rng.gen_range(1..=60usize);
        let alpha_min = rng.gen_range(0.01..0.9);
        let cfg = RewardConfig {
            r_base: rng.gen_range(0.1..3.0),
            lambda: rng.gen_range(0.001..0.5),
            alpha_min,
            alpha_max: rng.gen_range(alpha_min..1.2),
            beta_max: rng.gen_range(0.0..2.0),
            t_max,
            eps_adv: 0.0,
        };
        let len = rng.gen_range(0..=t_max);
        let raw = 1.0 / exp_series(cfg.lambda * len as f64);
        let f = if raw < cfg.alpha_min {
            hit[0] += 1;
            cfg.alpha_min
        } else if raw > cfg.alpha_max {
            hit[2] += 1;
            cfg.alpha_max
        } else {
            hit[1] += 1;
            raw
        };
        let p = cfg.beta_max * (t_max - len) as f64 / t_max as f64;
        let errs = [
            (efficiency_factor(len, &cfg) - f).abs(),
            (early_exit_penalty(len, &cfg).unwrap() - p).abs(),
            (trajectory_reward(len, true, &cfg).unwrap() - cfg.r_base * f).abs(),
            (trajectory_reward(len, false, &cfg).unwrap() + p).abs(),
        ];
        worst = errs.iter().fold(worst, |m, e| m.max(*e));
    }
    let t = started.elapsed();
    verdict(
        worst <= 1e-9 && within(t, 1.0),
        format!(
            "max abs error {worst:.2e} over 200 cases (below/inside/above clip: {}/{}/{}), {t:.2?}",
            hit[0], hit[1], hit[2]
        ),
    )
}

// 2 ------------------------------------------------------------------------

fn advantage_contract() -> Verdict {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst_mean, mut worst_std) = (0.0f64, 0.0f64);
    let (mut degenerate, mut mislabeled) = (0, 0);
    for i in 0..1000 {
        let g = [2, 4, 8][i % 3];
        let rewards: Vec<f64> = match rng.gen_range(0..4) {
            // all equal
            0 => vec![rng.gen_range(-1.0..1.0); g],
            // few distinct values, as binary or composite rewards give
            1 => (0..g).map(|_| [-0.5, 0.0, 0.6, 1.0][rng.gen_range(0..4)]).collect(),
            _ => (0..g).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        };
        let n = g as f64;
        let mean = rewards.iter().sum::<f64>() / n;
        let sigma = (rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
        let all_equal = rewards.iter().all(|r| *r == rewards[0]);
        let a = group_advantages(&rewards, 0.0);
        let a_mean = a.iter().sum::<f64>() / n;
        worst_mean = worst_mean.max(a_mean.abs());
        if all_equal {
            degenerate += 1;
            if a.iter().any(|x| *x != 0.0) {
                mislabeled += 1;
            }
        } else {
            assert!(sigma > 0.0);
            let a_std = (a.iter().map(|x| (x - a_mean).powi(2)).sum::<f64>() / n).sqrt();
            worst_std = worst_std.max((a_std - 1.0).abs());
        }
        if (reward_std(&rewards) == 0.0) != all_equal {
            mislabeled += 1;
        }
    }
    let t = started.elapsed();
    verdict(
        worst_mean <= 1e-12 && worst_std <= 1e-9 && mislabeled == 0 && within(t, 1.0),
        format!(
            "max |mean| {worst_mean:.1e}, max |std-1| {worst_std:.1e}, {degenerate} degenerate groups, \
             {mislabeled} mislabeled, {t:.2?}"
        ),
    )
}

// 3, 4 ---------------------------------------------------------------------

fn toy_vocab() -> Vocab {
    Vocab::new(4, ["Alpha".to_string(), "Beta".to_string(), "Gamma".to_string()])
}

fn toy_features() -> FeatureConfig {
    FeatureConfig { hash_bits: 6, history: 2, columns: 8 }
}

/// Groups of three rollouts of two easy tasks from `old`, with random
/// advantages.
fn toy_batch(apps: &AppSet, tasks: &[Task], old: &PolicyParams, seed: u64) -> Vec<ScoredGroup> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let agent = PolicyAgent { params: Arc::new(old.clone()), temperature: 1.0, greedy: false };
    let cfg = RolloutConfig { group_size: 3, t_max: 4, k: 3 };
    (0..2)
        .map(|i| {
            let task = &tasks[rng.gen_range(0..tasks.len())];
            let group = collect_group(apps, task, &agent, &cfg, seed * 10 + i, 0).unwrap();
            let advantages: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.5..1.5)).collect();
            ScoredGroup { success: vec![0; 3], rewards: advantages.clone(), group, advantages, degenerate: false }
        })
        .collect()
}

fn perturbed(p: &PolicyParams, seed: u64, scale: f64) -> PolicyParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = p.clone();
    for w in &mut q.weights {
        *w += rng.gen_range(-scale..scale);
    }
    q
}

fn gradient_check() -> Verdict {
    let started = Instant::now();
    let apps = bundled::app_set();
    let tasks = load_task_set(bundled::EASY_5, &apps).unwrap();
    let full = OptimizerConfig { entropy_coef: 0.05, kl_coef: 0.1, ..OptimizerConfig::default() };
    let plain = OptimizerConfig { entropy_coef: 0.0, kl_coef: 0.0, ..OptimizerConfig::default() };
    let (mut worst_fd, mut worst_pg) = (0.0f64, 0.0f64);
    let mut weights = 0;
    for b in 0..20u64 {
        let old = PolicyParams::random(toy_vocab(), toy_features(), b, 0.5);
        weights = old.len();
        let groups = toy_batch(&apps, &tasks, &old, b);
        let reference = perturbed(&old, 1000 + b, 0.3);
        let params = perturbed(&old, 2000 + b, 0.02 + 0.02 * b as f64);
        let report = surrogate_loss(&groups, &params, Some(&reference), &full).unwrap();
        let h = 1e-6;
        let mut p = params.clone();
        let (mut diff, mut scale) = (0.0f64, 0.0f64);
        for i in 0..params.len() {
            p.weights[i] = params.weights[i] + h;
            let up = surrogate_loss(&groups, &p, Some(&reference), &full).unwrap().loss;
            p.weights[i] = params.weights[i] - h;
            let down = surrogate_loss(&groups, &p, Some(&reference), &full).unwrap().loss;
            p.weights[i] = params.weights[i];
            let numeric = (up - down) / (2.0 * h);
            diff = diff.max((report.grad[i] - numeric).abs());
            scale = scale.max(report.grad[i].abs());
        }
        worst_fd = worst_fd.max(diff / scale);

        // At new = old the surrogate gradient is -(1/N) sum A grad log pi.
        let at_old = surrogate_loss(&groups, &old, None, &plain).unwrap();
        let mut expected = vec![0.0; old.len()];
        let mut n = 0;
        for g in &groups {
            for (t, &a) in g.group.trajectories.iter().zip(&g.advantages) {
                let mut history = Vec::new();
                for s in &t.steps {
                    let f = encode_obs(&old.features, &s.observation, &t.instruction, &history);
                    let (_, grad) = old.logprob_grad(&f, &s.tokens).unwrap();
                    for (e, g) in expected.iter_mut().zip(grad) {
                        *e -= a * g;
                    }
                    n += s.tokens.len();
                    history.push(s.action.clone());
                }
            }
        }
        for (got, e) in at_old.grad.iter().zip(&expected) {
            worst_pg = worst_pg.max((got - e / n as f64).abs());
        }
    }
    let t = started.elapsed();
    verdict(
        worst_fd <= 1e-5 && worst_pg <= 1e-10 && within(t, 30.0),
        format!(
            "finite-difference relative error {worst_fd:.1e}, policy-gradient deviation at new=old {worst_pg:.1e}, \
             20 batches x {weights} weights, {t:.2?}"
        ),
    )
}

fn clip_check() -> Verdict {
    let started = Instant::now();
    let apps = bundled::app_set();
    let tasks = load_task_set(bundled::EASY_5, &apps).unwrap();
    let cfg = OptimizerConfig { entropy_coef: 0.0, kl_coef: 0.0, ..OptimizerConfig::default() };
    let mut worst_change = 0.0f64;
    let mut worst_grad = 0.0f64;
    let mut min_live_change = f64::INFINITY;
    let mut clipped = 0;
    for b in 0..10u64 {
        let params = PolicyParams::random(toy_vocab(), toy_features(), 50 + b, 0.5);
        let mut batch = toy_batch(&apps, &tasks, &params, 50 + b);
        for g in &mut batch {
            g.advantages.iter_mut().for_each(|a| *a = a.abs() + 0.1);
        }
        // Stored logprobs one nat low: r = e > 1 + eps on every token.
        let mut high = batch.clone();
        for g in &mut high {
            for t in &mut g.group.trajectories {
                for s in &mut t.steps {
                    s.logprobs.iter_mut().for_each(|l| *l -= 1.0);
                }
            }
        }
        let base = surrogate_loss(&high, &params, None, &cfg).unwrap();
        clipped += base.clipped_tokens;
        assert_eq!(base.clipped_tokens, base.tokens);
        worst_grad = base.grad.iter().fold(worst_grad, |m, g| m.max(g.abs()));
        let live_base = surrogate_loss(&batch, &params, None, &cfg).unwrap();
        for d in 0..5 {
            let moved = perturbed(&params, 100 * b + d, 1e-3);
            let change = (surrogate_loss(&high, &moved, None, &cfg).unwrap().loss - base.loss).abs();
            worst_change = worst_change.max(change);
            let live = (surrogate_loss(&batch, &moved, None, &cfg).unwrap().loss - live_base.loss).abs();
            min_live_change = min_live_change.min(live);
        }
    }
    let t = started.elapsed();
    verdict(
        worst_change == 0.0 && worst_grad == 0.0 && min_live_change > 0.0 && within(t, 5.0),
        format!(
            "{clipped} clipped tokens with A>0, r=e: loss change under perturbation {worst_change:.1e}, \
             max |grad| {worst_grad:.1e} (unclipped control min change {min_live_change:.1e}), {t:.2?}"
        ),
    )
}

// 5 ------------------------------------------------------------------------

fn filter_soundness() -> Verdict {
    let started = Instant::now();
    let apps = bundled::app_set();
    let vocab = Vocab::from_apps(&apps, guirl_core::policy::DEFAULT_BINS);
    let mut fixed = load_task_set(bundled::EASY_5, &apps).unwrap();
    fixed.extend(load_task_set(bundled::MANUAL_TASKS, &apps).unwrap());
    fixed.extend(load_task_set(bundled::UNVERIFIED_TASKS, &apps).unwrap());
    let t_max = 25;
    let (mut admitted, mut rejected, mut mismatches) = (0, 0, Vec::new());
    let mut filter_time = Duration::ZERO;
    for app in apps.iter() {
        let mut tasks = common::synthetic_tasks(app);
        tasks.extend(fixed.iter().filter(|t| t.app_id == app.app_id).cloned());
        let answers: Vec<String> = tasks
            .iter()
            .flat_map(|t| t.goal.all.iter())
            .filter_map(|a| if let Atom::Answered(s) = a { Some(s.clone()) } else { None })
            .collect();
        let reach = common::reach(app, vocab.bins, &vocab.texts, &answers, t_max - 1);
        let mut proxy = PlannerProxy::new(vocab.clone());
        for task in &tasks {
            let t0 = Instant::now();
            let v = filter_task(app, task, &TrueSimWorldModel, &mut proxy, t_max, 3).unwrap();
            filter_time += t0.elapsed();
            let ok = match reach.depth_to(&task.goal) {
                Some(d) => v.admitted && v.steps_to_success == Some(d as u32 + 1),
                None => !v.admitted && v.reason == FilterReason::StepLimit,
            };
            if v.admitted {
                admitted += 1;
            } else {
                rejected += 1;
            }
            if !ok {
                mismatches.push(task.task_id.clone());
            }
        }
    }
    let t = started.elapsed();
    verdict(
        mismatches.is_empty() && within(filter_time, 10.0),
        format!(
            "{} apps, {admitted} admitted, {rejected} rejected, {} disagreements with the reachability oracle{}; \
             filter {filter_time:.2?}, with oracle {t:.2?}",
            apps.len(),
            mismatches.len(),
            if mismatches.is_empty() { String::new() } else { format!(" ({})", mismatches.join(", ")) },
        ),
    )
}

// 6 ------------------------------------------------------------------------

fn easy_config(seed: u64, mode: RewardMode) -> RunConfig {
    RunConfig {
        seed,
        reward_mode: mode,
        epochs: 1000,
        max_steps: 200,
        group_size: 8,
        groups_per_step: 1,
        ..RunConfig::default()
    }
}

struct EasyRun {
    baseline: f64,
    final_sr: f64,
    /// Mean successful length over the last 50 steps' rollouts.
    success_len: f64,
}

fn easy_run(apps: &Arc<AppSet>, tasks: &[Task], cfg: RunConfig) -> EasyRun {
    let mut tr = Trainer::new(cfg.clone(), apps.clone(), tasks.to_vec()).unwrap();
    let sr = |tr: &Trainer| greedy_eval(apps, Arc::new(tr.params().clone()), tasks, cfg.t_max, cfg.k).unwrap();
    let baseline = sr(&tr).success_rate;
    let (mut len_sum, mut len_n) = (0.0, 0);
    while let Some(out) = tr.step() {
        if out.metrics.step > cfg.max_steps as u64 - 50 {
            if let Some(l) = out.metrics.mean_success_len {
                len_sum += l;
                len_n += 1;
            }
        }
    }
    EasyRun { baseline, final_sr: sr(&tr).success_rate, success_len: len_sum / len_n.max(1) as f64 }
}

fn learning_demo(apps: &Arc<AppSet>) -> Verdict {
    let started = Instant::now();
    let tasks = load_task_set(bundled::EASY_5, apps).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for seed in 0..3 {
        let c = easy_run(apps, &tasks, easy_config(seed, RewardMode::Composite));
        let b = easy_run(apps, &tasks, easy_config(seed, RewardMode::Binary));
        pass &= c.baseline < 0.2 && c.final_sr >= 0.8 && b.success_len > c.success_len;
        parts.push(format!(
            "seed {seed}: SR {:.1}->{:.1}, |tau| binary {:.2} vs composite {:.2}",
            c.baseline, c.final_sr, b.success_len, c.success_len
        ));
    }
    let t = started.elapsed();
    verdict(pass && within(t, 600.0), format!("{}; {t:.1?}", parts.join("; ")))
}

// 7 ------------------------------------------------------------------------

fn suite_config(seed: u64, curriculum: bool) -> RunConfig {
    RunConfig { seed, curriculum, epochs: 12, group_size: 8, groups_per_step: 2, lr: 0.01, ..RunConfig::default() }
}

fn suite_sr(apps: &Arc<AppSet>, cfg: RunConfig, train: &[Task], eval: &[Task]) -> f64 {
    let mut tr = Trainer::new(cfg.clone(), apps.clone(), train.to_vec()).unwrap();
    while tr.step().is_some() {}
    greedy_eval(apps, Arc::new(tr.params().clone()), eval, cfg.t_max, cfg.k).unwrap().success_rate
}

fn ablations(apps: &Arc<AppSet>) -> Verdict {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig { out: dir.path().to_path_buf(), ..RunConfig::default() };
    harness::cmd_explore(&cfg).unwrap();
    harness::cmd_filter(&cfg).unwrap();
    let curriculum = read_task_set(&dir.path().join(harness::CURRICULUM_FILE), apps).unwrap();
    let mut unfiltered = read_task_set(&dir.path().join(harness::CANDIDATES_FILE), apps).unwrap();
    unfiltered.extend(load_task_set(bundled::MANUAL_TASKS, apps).unwrap());
    unfiltered.extend(load_task_set(bundled::UNVERIFIED_TASKS, apps).unwrap());
    let (filtered, stats) = harness::filter_tasks(&cfg, apps, unfiltered.clone()).unwrap();

    let (mut cur_wins, mut filt_wins) = (0, 0);
    let (mut cur_parts, mut filt_parts) = (Vec::new(), Vec::new());
    for seed in 0..3 {
        let on = suite_sr(apps, suite_config(seed, true), &curriculum, &curriculum);
        let off = suite_sr(apps, suite_config(seed, false), &curriculum, &curriculum);
        cur_wins += usize::from(on >= off);
        cur_parts.push(format!("{on:.3}/{off:.3}"));
        let f = suite_sr(apps, suite_config(seed, false), &filtered, &filtered);
        let u = suite_sr(apps, suite_config(seed, false), &unfiltered, &filtered);
        filt_wins += usize::from(f >= u);
        filt_parts.push(format!("{f:.3}/{u:.3}"));
    }
    let t = started.elapsed();
    verdict(
        cur_wins >= 2 && filt_wins >= 2 && within(t, 1800.0),
        format!(
            "curriculum on/off SR {} ({cur_wins}/3 on >= off); filtered/unfiltered SR {} ({filt_wins}/3, \
             {} of {} tasks admitted); {t:.1?}",
            cur_parts.join(" "),
            filt_parts.join(" "),
            stats.admitted,
            stats.total
        ),
    )
}

// 8 ------------------------------------------------------------------------

fn pool_check(apps: &Arc<AppSet>) -> Verdict {
    let started = Instant::now();
    let mut tasks = load_task_set(bundled::EASY_5, apps).unwrap();
    tasks.extend(load_task_set(bundled::MANUAL_TASKS, apps).unwrap());
    let queue: Vec<Job> =
        (0..40).map(|i| Job { id: i as u64, task: tasks[i % tasks.len()].clone(), seed: 7919 * i as u64 }).collect();
    let cfg = RunConfig::default();
    let params = PolicyParams::random(Vocab::from_apps(apps, cfg.coord_bins), cfg.features(), 8, cfg.init_scale);
    let source = Arc::new(PolicySource::new(params));
    let mut digests = Vec::new();
    let mut times = Vec::new();
    for workers in [1, 4] {
        let t0 = Instant::now();
        let mut d: BTreeMap<String, usize> = BTreeMap::new();
        for out in run_pool(queue.clone(), apps.clone(), source.clone(), cfg.rollout(), 1.0, workers) {
            for t in &out.result.unwrap().trajectories {
                *d.entry(TrajectoryRecord::from_trajectory(t, None, None).digest()).or_default() += 1;
            }
        }
        times.push(t0.elapsed());
        digests.push(d);
    }
    let same = digests[0] == digests[1];
    let ratio = times[1].as_secs_f64() / times[0].as_secs_f64();
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let t = started.elapsed();
    verdict(
        same && ratio <= 0.6 && within(t, 300.0),
        format!(
            "digest multisets {} ({} trajectories); 4-worker/1-worker wall clock {ratio:.2} on {cores} core(s) \
             ({:.2?} vs {:.2?}); {t:.1?}",
            if same { "identical" } else { "DIFFER" },
            digests[0].values().sum::<usize>(),
            times[1],
            times[0]
        ),
    )
}

// 9 ------------------------------------------------------------------------

fn determinism() -> Verdict {
    let started = Instant::now();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let csv: Vec<Vec<u8>> = dirs
        .iter()
        .map(|d| {
            let cfg = RunConfig {
                out: d.path().to_path_buf(),
                seed: 5,
                epochs: 1000,
                max_steps: 40,
                checkpoint_interval: 10,
                ..RunConfig::default()
            };
            harness::cmd_train(&cfg).unwrap();
            std::fs::read(d.path().join(harness::METRICS_FILE)).unwrap()
        })
        .collect();
    let identical = csv[0] == csv[1];
    let cfg = RunConfig { out: dirs[0].path().to_path_buf(), ..RunConfig::default() };
    let replay = harness::cmd_replay(&cfg, None);
    let log = std::fs::read_to_string(dirs[0].path().join(harness::TRAJECTORY_LOG)).unwrap();
    let records = log.lines().count();
    let t = started.elapsed();
    verdict(
        identical && replay.is_ok() && records > 0,
        format!(
            "metrics CSV {} ({} bytes), replay {} over {records} logged trajectories; {t:.1?}",
            if identical { "byte-identical" } else { "DIFFERS" },
            csv[0].len(),
            match &replay {
                Ok(_) => "ok".to_string(),
                Err(e) => format!("failed: {e}"),
            }
        ),
    )
}

fn main() -> ExitCode {
    let apps = Arc::new(bundled::app_set());
    let criteria: Vec<(&str, Box<dyn Fn() -> Verdict>)> = vec![
        ("reward formula oracle", Box::new(reward_oracle)),
        ("advantage contract", Box::new(advantage_contract)),
        ("surrogate gradient", Box::new(gradient_check)),
        ("clip behavior", Box::new(clip_check)),
        ("filter soundness", Box::new(filter_soundness)),
        (
            "learning demonstration",
            Box::new({
                let apps = apps.clone();
                move || learning_demo(&apps)
            }),
        ),
        (
            "ablation directions",
            Box::new({
                let apps = apps.clone();
                move || ablations(&apps)
            }),
        ),
        (
            "pool correctness",
            Box::new({
                let apps = apps.clone();
                move || pool_check(&apps)
            }),
        ),
        ("determinism and replay", Box::new(determinism)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let v = check();
        failed += usize::from(!v.pass);
        println!("{} {}. {name}: {}", if v.pass { "PASS" } else { "FAIL" }, i + 1, v.detail);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
