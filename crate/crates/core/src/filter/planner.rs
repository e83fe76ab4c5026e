use std::collections::{HashMap, HashSet, VecDeque};
use std::sync::Arc;

use super::TextState;
use crate::eval::{Atom, GoalPredicate, Task};
use crate::policy::{encode_obs, PolicyParams, Vocab, DURATIONS};
use crate::world::{step, Action, AppDefinition, Direction, EnvState, SystemButton, TerminalStatus};

pub trait ProxyAgent {
    /// Called once before each episode.
    fn begin(&mut self, app: &AppDefinition, task: &Task, t_max: usize);
    /// Next action; always grammar-valid.
    fn act(&mut self, state: &TextState, instruction: &str, history: &[Action]) -> Action;
}

/// Tap points of every placed element of a screen: the bin-center point
/// closest to the element's center among those that hit it. Elements no bin
/// center reaches are skipped.
fn click_points(app: &AppDefinition, screen_id: &str, offset: usize, vocab: &Vocab) -> Vec<Action> {
    let Some(screen) = app.screen(screen_id) else {
        return Vec::new();
    };
    let centers: Vec<f64> = (0..vocab.bins).map(|b| vocab.bin_center(b)).collect();
    let mut out = Vec::new();
    for p in screen.placed(offset) {
        let (cx, cy) = p.bounds.center();
        let mut best: Option<(f64, f64, f64)> = None;
        for &x in centers.iter().filter(|x| p.bounds.x_min <= **x && **x <= p.bounds.x_max) {
            for &y in centers.iter().filter(|y| p.bounds.y_min <= **y && **y <= p.bounds.y_max) {
                let hit = screen.hit_test(offset, x, y);
                if hit.map(|e| e.element_id.as_str()) != Some(p.element.element_id.as_str()) {
                    continue;
                }
                let d = (x - cx).powi(2) + (y - cy).powi(2);
                if best.is_none_or(|b| d < b.2) {
                    best = Some((x, y, d));
                }
            }
        }
        if let Some((x, y, _)) = best {
            out.push(Action::Click { x, y });
        }
    }
    out
}

fn fixed_actions(vocab: &Vocab, answers: &[String]) -> (Vec<Action>, Vec<Action>) {
    let mut always = Vec::new();
    for d in [Direction::Up, Direction::Down, Direction::Left, Direction::Right] {
        always.push(d.canonical_swipe());
    }
    for button in SystemButton::ALL {
        always.push(Action::SystemButton { button });
    }
    for seconds in DURATIONS {
        always.push(Action::Wait { seconds });
    }
    always.extend(answers.iter().map(|t| Action::Answer { text: t.clone() }));
    let typing = vocab.texts.iter().map(|t| Action::Type { text: t.clone() }).collect();
    (always, typing)
}

/// Actions the planner considers in `state`: one tap per placed element at a
/// bin-center point that hits it, the four canonical swipes, every system
/// button, every expressible wait, answering each text in `answers`, and
/// typing each vocabulary text when a field is focused.
pub fn planner_actions(app: &AppDefinition, state: &EnvState, vocab: &Vocab, answers: &[String]) -> Vec<Action> {
    let (always, typing) = fixed_actions(vocab, answers);
    let mut out = click_points(app, &state.screen_id, state.scroll_offset, vocab);
    out.extend(always);
    if state.focused_element.is_some() {
        out.extend(typing);
    }
    out
}

/// Identity of a state for search purposes: everything that can influence
/// future transitions or goal checks.
fn key(app: &AppDefinition, s: &EnvState) -> String {
    let mut k = String::with_capacity(96);
    k.push_str(&s.screen_id);
    for v in s.vars.values() {
        k.push('\u{1f}');
        k.push_str(v);
    }
    k.push('\u{1e}');
    k.push_str(&s.scroll_offset.to_string());
    k.push('\u{1e}');
    k.push_str(s.focused_element.as_deref().unwrap_or(""));
    k.push('\u{1e}');
    if let Some(a) = &s.answer_text {
        k.push('+');
        k.push_str(a);
    }
    k.push('\u{1e}');
    k.push_str(&s.clock.min(app.max_timer()).to_bits().to_string());
    k
}

struct Node {
    state: EnvState,
    parent: usize,
    action: Option<Action>,
    depth: usize,
}

/// Breadth-first search tree from one start state, grown on demand. Nodes are
/// stored in visiting order, so the first node satisfying a goal is a
/// shallowest one; later queries reuse everything explored so far.
struct SearchTree {
    nodes: Vec<Node>,
    seen: HashSet<String>,
    next: usize,
    max_depth: usize,
    always: Vec<Action>,
    typing: Vec<Action>,
    clicks: HashMap<(String, usize), Vec<Action>>,
}

impl SearchTree {
    fn new(app: &AppDefinition, start: &EnvState, vocab: &Vocab, answers: &[String], max_depth: usize) -> Self {
        let (always, typing) = fixed_actions(vocab, answers);
        SearchTree {
            nodes: vec![Node { state: start.clone(), parent: 0, action: None, depth: 0 }],
            seen: HashSet::from([key(app, start)]),
            next: 0,
            max_depth,
            always,
            typing,
            clicks: HashMap::new(),
        }
    }

    fn path(&self, mut at: usize) -> Vec<Action> {
        let mut plan = Vec::new();
        while let Some(a) = &self.nodes[at].action {
            plan.push(a.clone());
            at = self.nodes[at].parent;
        }
        plan.reverse();
        plan
    }

    fn find(&mut self, app: &AppDefinition, vocab: &Vocab, goal: &GoalPredicate) -> Option<Vec<Action>> {
        if let Some(i) = self.nodes.iter().position(|n| goal.holds_on_success(app, &n.state)) {
            return Some(self.path(i));
        }
        while self.next < self.nodes.len() {
            let i = self.next;
            self.next += 1;
            if self.nodes[i].depth >= self.max_depth {
                continue;
            }
            let state = self.nodes[i].state.clone();
            let clicks = self
                .clicks
                .entry((state.screen_id.clone(), state.scroll_offset))
                .or_insert_with(|| click_points(app, &state.screen_id, state.scroll_offset, vocab))
                .clone();
            let typing: &[Action] = if state.focused_element.is_some() { &self.typing } else { &[] };
            let moves: Vec<Action> =
                clicks.into_iter().chain(self.always.iter().cloned()).chain(typing.iter().cloned()).collect();
            let mut found = None;
            for a in moves {
                let Ok((next, _)) = step(app, &state, &a) else {
                    continue;
                };
                if !self.seen.insert(key(app, &next)) {
                    continue;
                }
                let done = goal.holds_on_success(app, &next);
                self.nodes.push(Node { state: next, parent: i, action: Some(a), depth: self.nodes[i].depth + 1 });
                if done && found.is_none() {
                    found = Some(self.nodes.len() - 1);
                }
            }
            if let Some(j) = found {
                return Some(self.path(j));
            }
        }
        None
    }
}

fn goal_answers(goal: &GoalPredicate) -> Vec<String> {
    goal.all
        .iter()
        .filter_map(|a| match a {
            Atom::Answered(t) => Some(t.clone()),
            _ => None,
        })
        .collect()
}

/// Shortest action sequence from `start` to a state where `goal` holds once
/// success is declared, using at most `max_depth` actions.
pub fn shortest_plan(
    app: &AppDefinition,
    start: &EnvState,
    goal: &GoalPredicate,
    vocab: &Vocab,
    max_depth: usize,
) -> Option<Vec<Action>> {
    SearchTree::new(app, start, vocab, &goal_answers(goal), max_depth).find(app, vocab, goal)
}

/// Breadth-first planner with full knowledge of the goal and the simulator.
/// It follows a shortest plan, re-planning when the observed state differs
/// from the one it expected, and declares success once the goal holds. If no
/// plan fits the remaining budget it waits.
pub struct PlannerProxy {
    vocab: Vocab,
    app: Option<Arc<AppDefinition>>,
    goal: Option<GoalPredicate>,
    t_max: usize,
    plan: VecDeque<(Action, EnvState)>,
    /// State the last emitted action should have led to.
    expected: Option<EnvState>,
    hopeless: bool,
    /// Search trees reused across tasks that start from the same state.
    trees: HashMap<String, SearchTree>,
}

const MAX_TREES: usize = 16;

impl PlannerProxy {
    pub fn new(vocab: Vocab) -> Self {
        PlannerProxy {
            vocab,
            app: None,
            goal: None,
            t_max: 0,
            plan: VecDeque::new(),
            expected: None,
            hopeless: false,
            trees: HashMap::new(),
        }
    }

    fn replan(&mut self, app: &AppDefinition, goal: &GoalPredicate, from: &EnvState, budget: usize) {
        self.plan.clear();
        let answers = goal_answers(goal);
        let id = format!("{}\u{1d}{}\u{1d}{budget}\u{1d}{}", app.app_id, key(app, from), answers.join("\u{1f}"));
        if !self.trees.contains_key(&id) && self.trees.len() >= MAX_TREES {
            self.trees.clear();
        }
        let tree = self.trees.entry(id).or_insert_with(|| SearchTree::new(app, from, &self.vocab, &answers, budget));
        match tree.find(app, &self.vocab, goal) {
            Some(actions) => {
                let mut s = from.clone();
                for a in actions {
                    s = step(app, &s, &a).expect("planned actions are valid").0;
                    self.plan.push_back((a, s.clone()));
                }
            }
            None => self.hopeless = true,
        }
    }
}

impl ProxyAgent for PlannerProxy {
    fn begin(&mut self, app: &AppDefinition, task: &Task, t_max: usize) {
        self.app = Some(Arc::new(app.clone()));
        self.goal = Some(task.goal.clone());
        self.t_max = t_max;
        self.plan.clear();
        self.expected = None;
        self.hopeless = false;
    }

    fn act(&mut self, state: &TextState, _: &str, history: &[Action]) -> Action {
        let (app, goal) = match (&self.app, &self.goal) {
            (Some(a), Some(g)) => (Arc::clone(a), g.clone()),
            _ => panic!("PlannerProxy::act before begin"),
        };
        if goal.holds_on_success(&app, &state.env) {
            return Action::Terminate { status: TerminalStatus::Success };
        }
        if self.hopeless {
            return Action::Wait { seconds: 1.0 };
        }
        if self.expected.as_ref().is_some_and(|e| *e != state.env) {
            self.plan.clear();
        }
        if self.plan.is_empty() {
            // Room left for environment actions, keeping one for terminate.
            let budget = self.t_max.saturating_sub(history.len() + 1);
            self.replan(&app, &goal, &state.env, budget);
        }
        match self.plan.pop_front() {
            Some((a, expected)) => {
                self.expected = Some(expected);
                a
            }
            None => {
                self.expected = None;
                Action::Wait { seconds: 1.0 }
            }
        }
    }
}

/// Greedy decoding of a policy over the text observation.
pub struct PolicyProxy {
    pub params: Arc<PolicyParams>,
}

impl ProxyAgent for PolicyProxy {
    fn begin(&mut self, _: &AppDefinition, _: &Task, _: usize) {}

    fn act(&mut self, state: &TextState, instruction: &str, history: &[Action]) -> Action {
        let f = encode_obs(&self.params.features, &state.observation, instruction, history);
        self.params.greedy(&f).action
    }
}
