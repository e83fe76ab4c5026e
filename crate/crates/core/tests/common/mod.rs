//! Independent reachability oracle shared by integration tests.
#![allow(dead_code)]

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::hash::{Hash, Hasher};

use guirl_core::eval::{Atom, GoalPredicate, Origin, Task};
use guirl_core::world::{step, Action, AppDefinition, EnvState, SystemButton, Trigger};

/// Exhaustive breadth-first search over the app graph from `start`. Taps are
/// tried at every point of a `bins` x `bins` grid of cell centers; the other
/// moves are the canonical swipes, system buttons, waits of 1/2/5/10 s,
/// typing each of `texts` and answering each of `answers`.
pub struct Reach {
    pub app: AppDefinition,
    pub states: Vec<(EnvState, usize)>,
}

fn last_timer(app: &AppDefinition) -> f64 {
    app.rules
        .iter()
        .filter_map(|r| if let Trigger::Timer(t) = r.on.trigger { Some(t) } else { None })
        .fold(0.0f64, f64::max)
}

/// 128-bit hash of everything that shapes a state's future.
fn state_hash(s: &EnvState, last_timer: f64) -> u128 {
    let half = |salt: u8| {
        let mut h = DefaultHasher::new();
        salt.hash(&mut h);
        s.screen_id.hash(&mut h);
        s.vars.hash(&mut h);
        s.scroll_offset.hash(&mut h);
        s.focused_element.hash(&mut h);
        s.answer_text.hash(&mut h);
        s.terminated.hash(&mut h);
        s.clock.min(last_timer).to_bits().hash(&mut h);
        h.finish() as u128
    };
    half(0) << 64 | half(1)
}

pub fn reach(app: &AppDefinition, bins: usize, texts: &[String], answers: &[String], max_depth: usize) -> Reach {
    let start = guirl_core::world::reset(app, 0);
    let grid: Vec<f64> = (0..bins).map(|i| (2 * i + 1) as f64 / (2 * bins) as f64).collect();
    let mut moves = vec![
        Action::Swipe { x1: 0.5, y1: 0.7, x2: 0.5, y2: 0.3 },
        Action::Swipe { x1: 0.5, y1: 0.3, x2: 0.5, y2: 0.7 },
        Action::Swipe { x1: 0.7, y1: 0.5, x2: 0.3, y2: 0.5 },
        Action::Swipe { x1: 0.3, y1: 0.5, x2: 0.7, y2: 0.5 },
    ];
    for b in [SystemButton::Back, SystemButton::Home, SystemButton::Menu, SystemButton::Enter] {
        moves.push(Action::SystemButton { button: b });
    }
    for s in [1.0, 2.0, 5.0, 10.0] {
        moves.push(Action::Wait { seconds: s });
    }
    let types: Vec<Action> = texts.iter().map(|t| Action::Type { text: t.clone() }).collect();
    moves.extend(answers.iter().map(|t| Action::Answer { text: t.clone() }));

    let lt = last_timer(app);
    let mut seen: HashSet<u128> = HashSet::from([state_hash(&start, lt)]);
    let mut states = vec![(start, 0)];
    let mut taps: HashMap<(String, usize), Vec<Action>> = HashMap::new();
    let mut next = 0;
    while next < states.len() {
        let (s, d) = (states[next].0.clone(), states[next].1);
        next += 1;
        if d == max_depth {
            continue;
        }
        let typing = if s.focused_element.is_some() { types.as_slice() } else { &[] };
        // Grid taps landing on the same element are interchangeable; keep
        // one per element.
        let taps = taps.entry((s.screen_id.clone(), s.scroll_offset)).or_insert_with(|| {
            let screen = app.screen(&s.screen_id).unwrap();
            let mut by_element: BTreeMap<String, Action> = BTreeMap::new();
            for &x in &grid {
                for &y in &grid {
                    if let Some(e) = screen.hit_test(s.scroll_offset, x, y) {
                        by_element.entry(e.element_id.clone()).or_insert(Action::Click { x, y });
                    }
                }
            }
            by_element.into_values().collect()
        });
        for a in taps.iter().chain(&moves).chain(typing) {
            let Ok((n, _)) = step(app, &s, a) else { continue };
            if seen.insert(state_hash(&n, lt)) {
                states.push((n, d + 1));
            }
        }
    }
    Reach { app: app.clone(), states }
}

impl Reach {
    /// Fewest environment actions after which declaring success satisfies
    /// `goal`.
    pub fn depth_to(&self, goal: &GoalPredicate) -> Option<usize> {
        self.states
            .iter()
            .filter(|(s, _)| {
                !goal.all.is_empty()
                    && goal.all.iter().all(|a| match a {
                        Atom::TerminatedSuccess => true,
                        other => other.holds(&self.app, s),
                    })
            })
            .map(|(_, d)| *d)
            .min()
    }
}

/// Single-atom goals over every screen and every value each variable is ever
/// assigned, one never-assigned value per variable, plus a few conjunctions.
pub fn synthetic_tasks(app: &AppDefinition) -> Vec<Task> {
    let mut goals: Vec<GoalPredicate> = Vec::new();
    for s in &app.screen_order {
        goals.push(GoalPredicate::new(vec![Atom::OnScreen(s.clone())]));
    }
    let mut values: BTreeSet<(String, String)> = app.initial_vars.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    for r in &app.rules {
        for (k, v) in &r.effect.set_vars {
            values.insert((k.clone(), v.clone()));
        }
    }
    for (k, v) in &values {
        goals.push(GoalPredicate::new(vec![Atom::VarEquals { name: k.clone(), value: v.clone() }]));
    }
    let names: BTreeSet<&String> = values.iter().map(|(k, _)| k).collect();
    if let Some(k) = names.iter().next() {
        goals.push(GoalPredicate::new(vec![Atom::VarEquals { name: (*k).clone(), value: "never-set".into() }]));
    }
    let v: Vec<&(String, String)> = values.iter().collect();
    for w in v.windows(2).step_by(3) {
        goals.push(GoalPredicate::new(
            w.iter().map(|(k, val)| Atom::VarEquals { name: k.clone(), value: val.clone() }).collect(),
        ));
    }
    if let Some(last) = app.screen_order.last() {
        goals.push(GoalPredicate::new(vec![Atom::OnScreen(last.clone()), Atom::TerminatedSuccess]));
    }
    goals
        .into_iter()
        .enumerate()
        .map(|(i, goal)| Task {
            task_id: format!("{}-syn-{i:03}", app.app_id),
            app_id: app.app_id.clone(),
            instruction: "synthetic".into(),
            goal,
            complexity: None,
            origin: Origin::Manual,
        })
        .collect()
}
