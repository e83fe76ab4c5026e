use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::eval::load_task_set;
use crate::policy::{encode_obs, FeatureConfig, PolicyParams, Sampled, Vocab};
use crate::rollout::{collect_group, Agent, PolicyAgent, RolloutConfig};
use crate::world::{bundled, render_text, reset, Action, AppDefinition, EnvState, TerminalStatus, TextObservation};

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn efficiency_factor_examples() {
    let c = RewardConfig::default();
    assert!(close(efficiency_factor(10, &c), 0.60653, 1e-5));
    assert_eq!(efficiency_factor(100, &c), 0.5);
    assert_eq!(efficiency_factor(0, &c), 1.0);
    for len in 0..200 {
        let f = efficiency_factor(len, &c);
        assert!((0.5..=1.0).contains(&f));
        assert!(f >= efficiency_factor(len + 1, &c));
    }
}

#[test]
fn penalty_examples() {
    let c = RewardConfig::default();
    assert!(close(trajectory_reward(5, false, &c).unwrap(), -0.4, 1e-12));
    assert_eq!(early_exit_penalty(25, &c).unwrap(), 0.0);
    assert_eq!(trajectory_reward(25, false, &c).unwrap(), 0.0);
    assert!(close(early_exit_penalty(0, &c).unwrap(), 0.5, 1e-15));
    assert_eq!(early_exit_penalty(26, &c), Err(LengthError { len: 26, t_max: 25 }));
    assert!(trajectory_reward(26, true, &c).is_err());
    assert!(close(trajectory_reward(10, true, &c).unwrap(), 0.60653, 1e-5));
}

#[test]
fn advantage_examples() {
    assert_eq!(group_advantages(&[1.0, 0.0], 0.0), vec![1.0, -1.0]);
    assert_eq!(group_advantages(&[2.0, 2.0, 0.0, 0.0], 0.0), vec![1.0, 1.0, -1.0, -1.0]);
    let a = group_advantages(&[1.0, 0.0], 1e-8);
    assert!(close(a[0], 1.0, 1e-7) && close(a[1], -1.0, 1e-7));
    assert_eq!(group_advantages(&[0.3; 5], 1e-8), vec![0.0; 5]);
    assert_eq!(reward_std(&[-0.1; 4]), 0.0);
}

#[test]
#[should_panic(expected = "at least two")]
fn single_reward_group_is_rejected() {
    group_advantages(&[1.0], 1e-8);
}

#[test]
fn config_validation() {
    assert!(RewardConfig::default().validate().is_ok());
    assert!(RewardConfig { alpha_min: 2.0, ..RewardConfig::default() }.validate().is_err());
    assert!(RewardConfig { t_max: 0, ..RewardConfig::default() }.validate().is_err());
    assert!(OptimizerConfig::default().validate().is_ok());
    assert_eq!(OptimizerConfig::large_model().lr, 1e-6);
    assert!(OptimizerConfig { clip_eps: 0.0, ..OptimizerConfig::default() }.validate().is_err());
    assert!(OptimizerConfig { beta2: 1.0, ..OptimizerConfig::default() }.validate().is_err());
}

/// Taps the timer button or waits on the first step depending on a coin flip,
/// then claims success.
struct CoinFlip {
    vocab: Vocab,
    timer: Action,
}

impl Agent for CoinFlip {
    fn act(
        &self,
        _: &AppDefinition,
        _: &EnvState,
        _: &TextObservation,
        _: &str,
        h: &[Action],
        rng: &mut ChaCha8Rng,
    ) -> Sampled {
        let action = match h.len() {
            0 if rng.gen::<bool>() => self.timer.clone(),
            0 => Action::Wait { seconds: 1.0 },
            _ => Action::Terminate { status: TerminalStatus::Success },
        };
        let tokens = self.vocab.encode(&action).unwrap();
        Sampled { logprobs: vec![0.0; tokens.len()], action: self.vocab.decode(&tokens).unwrap(), tokens }
    }
}

#[test]
fn scoring_uses_evaluator_not_claims() {
    let apps = bundled::app_set();
    let tasks = load_task_set(bundled::EASY_5, &apps).unwrap();
    let task = tasks.iter().find(|t| t.task_id == "easy-clock-timer").unwrap();
    let app = apps.get("clock").unwrap();
    let obs = render_text(app, &reset(app, 0));
    let (x, y) = obs.elements.iter().find(|e| e.element_id == "timer_btn").unwrap().bounds.center();
    let agent = CoinFlip { vocab: Vocab::from_apps(&apps, 20), timer: Action::Click { x, y } };
    let cfg = RolloutConfig { group_size: 8, t_max: 25, k: 3 };
    let group = collect_group(&apps, task, &agent, &cfg, 0, 0).unwrap();
    let rc = RewardConfig::default();
    let scored = score_group(group.clone(), app, task, 3, &rc, RewardMode::Composite).unwrap();
    let wins = scored.success.iter().filter(|s| **s == 1).count();
    assert!(wins > 0 && wins < 8, "seed 0 should give a mixed group, got {wins} wins");
    for (t, (&s, &r)) in scored.group.trajectories.iter().zip(scored.success.iter().zip(&scored.rewards)) {
        assert_eq!(t.len(), 2);
        let expected = if s == 1 { efficiency_factor(2, &rc) } else { -0.5 * (1.0 - 2.0 / 25.0) };
        assert!(close(r, expected, 1e-12));
    }
    assert_eq!(scored.claim_disagreements(), 8 - wins);
    assert!(!scored.degenerate);
    assert!(close(scored.advantages.iter().sum::<f64>(), 0.0, 1e-12));

    let binary = score_group(group, app, task, 3, &rc, RewardMode::Binary).unwrap();
    assert_eq!(binary.rewards, binary.success.iter().map(|s| f64::from(*s)).collect::<Vec<_>>());
}

fn fake_group(rewards: &[f64]) -> ScoredGroup {
    ScoredGroup {
        group: crate::rollout::TrajectoryGroup { task_id: "t".into(), policy_version: 0, trajectories: vec![] },
        success: vec![],
        rewards: rewards.to_vec(),
        advantages: group_advantages(rewards, 1e-8),
        degenerate: reward_std(rewards) == 0.0,
    }
}

#[test]
fn filter_examples() {
    let groups = vec![
        fake_group(&[1.0; 4]),
        fake_group(&[1.0, 0.0, 1.0, 0.0]),
        fake_group(&[-0.2; 4]),
        fake_group(&[0.6, 0.6, 0.6, 0.59]),
    ];
    let (kept, dropped) = filter_degenerate(groups);
    assert_eq!(dropped, 2);
    assert_eq!(kept.len(), 2);
    assert_eq!(kept[1].rewards[3], 0.59);
    let (kept, dropped) = filter_degenerate(vec![fake_group(&[0.0, 0.0])]);
    assert!(kept.is_empty());
    assert_eq!(dropped, 1);
}

proptest! {
    #[test]
    fn advantages_are_centered_and_unit_scale(rewards in prop::collection::vec(-1.0f64..1.0, 2..32)) {
        let a = group_advantages(&rewards, 1e-8);
        let n = a.len() as f64;
        let mean = a.iter().sum::<f64>() / n;
        prop_assert!(mean.abs() <= 1e-12);
        let sigma = reward_std(&rewards);
        if sigma > 1e-3 {
            let std = (a.iter().map(|x| x * x).sum::<f64>() / n).sqrt();
            prop_assert!((std - 1.0).abs() <= 1e-5);
        }
    }

    #[test]
    fn advantages_invariant_to_affine_maps(
        rewards in prop::collection::vec(-1.0f64..1.0, 2..16),
        scale in 0.1f64..10.0,
        shift in -5.0f64..5.0,
    ) {
        prop_assume!(reward_std(&rewards) > 1e-3);
        let moved: Vec<f64> = rewards.iter().map(|r| r * scale + shift).collect();
        for (a, b) in group_advantages(&rewards, 0.0).iter().zip(group_advantages(&moved, 0.0)) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn success_always_beats_failure(a in 0usize..=25, b in 0usize..=25) {
        let c = RewardConfig::default();
        let win = trajectory_reward(a, true, &c).unwrap();
        let loss = trajectory_reward(b, false, &c).unwrap();
        prop_assert!((0.5..=1.0).contains(&win));
        prop_assert!((-0.5..=0.0).contains(&loss));
        prop_assert!(win > loss);
    }
}

fn small_features() -> FeatureConfig {
    FeatureConfig { hash_bits: 6, history: 2, columns: 8 }
}

/// Groups sampled from a small random policy on two bundled tasks, with
/// fixed advantages.
fn sampled_groups(old: &PolicyParams) -> Vec<ScoredGroup> {
    let apps = bundled::app_set();
    let tasks = load_task_set(bundled::EASY_5, &apps).unwrap();
    let agent = PolicyAgent { params: Arc::new(old.clone()), temperature: 1.0, greedy: false };
    let cfg = RolloutConfig { group_size: 3, t_max: 4, k: 3 };
    tasks[..2]
        .iter()
        .enumerate()
        .map(|(i, task)| {
            let group = collect_group(&apps, task, &agent, &cfg, 40 + i as u64, 0).unwrap();
            let advantages = vec![1.3, -0.4, -0.9];
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

#[test]
fn surrogate_gradient_matches_finite_differences() {
    let vocab = Vocab::new(4, ["Alpha".to_string(), "Beta".to_string(), "Gamma".to_string()]);
    let old = PolicyParams::random(vocab, small_features(), 3, 0.5);
    let groups = sampled_groups(&old);
    let reference = perturbed(&old, 9, 0.3);
    let cfg = OptimizerConfig { entropy_coef: 0.05, kl_coef: 0.1, ..OptimizerConfig::default() };
    for (trial, spread) in [(0u64, 0.05), (1, 0.3)] {
        let params = perturbed(&old, 100 + trial, spread);
        let report = surrogate_loss(&groups, &params, Some(&reference), &cfg).unwrap();
        assert!(report.tokens > 0);
        let h = 1e-6;
        let mut numeric = vec![0.0; params.len()];
        for i in 0..params.len() {
            let mut p = params.clone();
            p.weights[i] += h;
            let up = surrogate_loss(&groups, &p, Some(&reference), &cfg).unwrap().loss;
            p.weights[i] -= 2.0 * h;
            let down = surrogate_loss(&groups, &p, Some(&reference), &cfg).unwrap().loss;
            numeric[i] = (up - down) / (2.0 * h);
        }
        let scale = report.grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        let diff = report.grad.iter().zip(&numeric).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(scale > 0.0);
        assert!(diff / scale < 1e-5, "spread {spread}: relative error {}", diff / scale);
    }
}

#[test]
fn surrogate_at_sampling_policy_is_policy_gradient() {
    let vocab = Vocab::new(4, ["Alpha".to_string(), "Beta".to_string(), "Gamma".to_string()]);
    let old = PolicyParams::random(vocab, small_features(), 5, 0.5);
    let groups = sampled_groups(&old);
    let cfg = OptimizerConfig { entropy_coef: 0.0, kl_coef: 0.0, ..OptimizerConfig::default() };
    let report = surrogate_loss(&groups, &old, None, &cfg).unwrap();
    assert_eq!(report.clipped_tokens, 0);

    let mut expected = vec![0.0; old.len()];
    let mut n = 0usize;
    let mut pg = 0.0;
    for g in &groups {
        for (t, &a) in g.group.trajectories.iter().zip(&g.advantages) {
            let mut history = Vec::new();
            for s in &t.steps {
                let f = encode_obs(&old.features, &s.observation, &t.instruction, &history);
                let (_, grad) = old.logprob_grad(&f, &s.tokens).unwrap();
                for (e, g) in expected.iter_mut().zip(grad) {
                    *e += a * g;
                }
                n += s.tokens.len();
                pg += a * s.tokens.len() as f64;
                history.push(s.action.clone());
            }
        }
    }
    assert_eq!(report.tokens, n);
    assert!(close(report.pg_loss, -pg / n as f64, 1e-10));
    for (got, e) in report.grad.iter().zip(&expected) {
        assert!(close(*got, -e / n as f64, 1e-10));
    }
}

#[test]
fn clipped_tokens_carry_no_gradient() {
    let vocab = Vocab::new(4, ["Alpha".to_string()]);
    let params = PolicyParams::random(vocab, small_features(), 8, 0.5);
    let cfg = OptimizerConfig { entropy_coef: 0.0, kl_coef: 0.0, ..OptimizerConfig::default() };
    let base = sampled_groups(&params);

    // Stored logprobs shifted so that r = e (A > 0) or r = 1/e (A < 0): both
    // sit in the flat arm of the clipped objective.
    let mut flat = base.clone();
    for g in &mut flat {
        for (t, a) in g.group.trajectories.iter_mut().zip(&g.advantages) {
            for s in &mut t.steps {
                let shift = if *a > 0.0 { -1.0 } else { 1.0 };
                s.logprobs.iter_mut().for_each(|l| *l += shift);
            }
        }
    }
    let report = surrogate_loss(&flat, &params, None, &cfg).unwrap();
    assert_eq!(report.clipped_tokens, report.tokens);
    assert!(report.grad.iter().all(|g| *g == 0.0));
    let expected: f64 = flat
        .iter()
        .flat_map(|g| g.group.trajectories.iter().zip(&g.advantages))
        .map(|(t, a)| -(if *a > 0.0 { 1.2 } else { 0.8 }) * a * t.token_count() as f64)
        .sum::<f64>()
        / report.tokens as f64;
    assert!(close(report.pg_loss, expected, 1e-10));

    // Opposite shift: the unclipped arm is the minimum and the gradient flows.
    let mut live = base;
    for g in &mut live {
        for (t, a) in g.group.trajectories.iter_mut().zip(&g.advantages) {
            for s in &mut t.steps {
                let shift = if *a > 0.0 { 1.0 } else { -1.0 };
                s.logprobs.iter_mut().for_each(|l| *l += shift);
            }
        }
    }
    let report = surrogate_loss(&live, &params, None, &cfg).unwrap();
    assert_eq!(report.clipped_tokens, 0);
    assert!(report.grad.iter().any(|g| *g != 0.0));
}

#[test]
fn loss_input_errors() {
    let vocab = Vocab::new(4, ["Alpha".to_string()]);
    let params = PolicyParams::random(vocab, small_features(), 8, 0.5);
    let cfg = OptimizerConfig::default();
    let mut groups = sampled_groups(&params);
    let other = PolicyParams::zeros(Vocab::new(5, Vec::<String>::new()), small_features());
    assert!(matches!(surrogate_loss(&groups, &params, Some(&other), &cfg), Err(LossError::Reference)));
    groups[1].group.trajectories[0].steps[0].logprobs.pop();
    assert!(matches!(surrogate_loss(&groups, &params, None, &cfg), Err(LossError::Misaligned { group: 1, .. })));
    groups[0].advantages.pop();
    assert!(matches!(surrogate_loss(&groups, &params, None, &cfg), Err(LossError::Advantages { group: 0, .. })));
    let empty = surrogate_loss(&[], &params, None, &cfg).unwrap();
    assert_eq!((empty.tokens, empty.loss), (0, 0.0));
}

#[test]
fn adam_zero_gradient_without_decay_is_identity() {
    let cfg = OptimizerConfig { weight_decay: 0.0, ..OptimizerConfig::default() };
    let mut w = vec![0.5, -1.0, 2.0];
    let mut st = AdamState::new(3);
    for _ in 0..5 {
        update(&mut w, &[0.0; 3], &mut st, &cfg).unwrap();
    }
    assert_eq!(w, vec![0.5, -1.0, 2.0]);
    assert_eq!(st.t, 5);
}

#[test]
fn adam_clips_global_norm() {
    let cfg = OptimizerConfig::default();
    let grad = [6.0, 8.0, 0.0];
    let mut w = vec![0.0; 3];
    let mut st = AdamState::new(3);
    let r = update(&mut w, &grad, &mut st, &cfg).unwrap();
    assert!(close(r.grad_norm, 10.0, 1e-12));
    assert!(close(r.applied_norm, 1.0, 1e-9));
    // First step with bias correction moves by lr * g / (|g| + eps).
    assert!(close(w[0], -1e-3 * 0.6 / (0.6 + 1e-8), 1e-15));
    assert!(close(w[1], -1e-3 * 0.8 / (0.8 + 1e-8), 1e-15));
    assert_eq!(w[2], 0.0);

    let small = [0.3, 0.4];
    let r = update(&mut [0.0; 2], &small, &mut AdamState::new(2), &cfg).unwrap();
    assert_eq!(r.grad_norm, r.applied_norm);
}

#[test]
fn adam_matches_reference_recurrence() {
    let cfg = OptimizerConfig { lr: 0.01, grad_clip: 1e9, ..OptimizerConfig::default() };
    let grads = [[0.5, -0.2], [0.1, 0.3], [-0.4, 0.0]];
    let mut w = vec![1.0, -1.0];
    let mut st = AdamState::new(2);
    let (mut rw, mut m, mut v) = ([1.0f64, -1.0], [0.0f64; 2], [0.0f64; 2]);
    for (t, g) in grads.iter().enumerate() {
        update(&mut w, g, &mut st, &cfg).unwrap();
        let t = (t + 1) as i32;
        for i in 0..2 {
            m[i] = 0.9 * m[i] + 0.1 * g[i];
            v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
            let mh = m[i] / (1.0 - 0.9f64.powi(t));
            let vh = v[i] / (1.0 - 0.999f64.powi(t));
            rw[i] -= 0.01 * (mh / (vh.sqrt() + 1e-8) + 0.01 * rw[i]);
        }
    }
    for i in 0..2 {
        assert!(close(w[i], rw[i], 1e-14));
    }
}

#[test]
fn adam_rejects_bad_input_without_side_effects() {
    let cfg = OptimizerConfig::default();
    let mut w = vec![1.0, 2.0];
    let mut st = AdamState::new(2);
    assert_eq!(update(&mut w, &[f64::NAN, 1.0], &mut st, &cfg), Err(UpdateError::NonFinite(1)));
    assert!(matches!(update(&mut w, &[1.0], &mut st, &cfg), Err(UpdateError::Shape { .. })));
    assert_eq!(w, vec![1.0, 2.0]);
    assert_eq!(st, AdamState::new(2));
}
