//! Task discovery by exploration.
//!
//! [`explore`] runs a random walk from the reset state that prefers UI
//! elements no walk has triggered yet and caps how often one element may be
//! re-triggered. [`reverse_label`] turns a walk into a [`Task`] whose goal
//! describes what the walk changed.

mod label;

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use label::{
    describe, parse_label_response, state_delta, ExternalLabeler, LabelRequest, LabelResponse, Labeler, TemplateLabeler,
};

use crate::eval::{Origin, Task};
use crate::world::{reset, step, Action, AppDefinition, Direction, ElementKind, EnvState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplorationConfig {
    pub max_steps: usize,
    /// Probability of picking among never-triggered targets when any exist.
    pub novelty_bias: f64,
    /// Maximum triggers of one (screen, target) pair within a walk.
    pub revisit_cap: u32,
    pub seed: u64,
}

impl Default for ExplorationConfig {
    fn default() -> Self {
        ExplorationConfig { max_steps: 6, novelty_bias: 0.8, revisit_cap: 1, seed: 0 }
    }
}

impl ExplorationConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.revisit_cap < 1 {
            return Err("revisit_cap must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.novelty_bias) {
            return Err(format!("novelty_bias {} outside [0, 1]", self.novelty_bias));
        }
        Ok(())
    }
}

/// A (screen, target) pair. Targets are element ids for taps, `type:<id>` for
/// typing into a focused field and `swipe:<dir>` for swipes.
pub type Pair = (String, String);

/// Pairs triggered by any walk so far, per app.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub triggered: BTreeMap<String, BTreeSet<Pair>>,
}

impl Coverage {
    pub fn contains(&self, app_id: &str, pair: &Pair) -> bool {
        self.triggered.get(app_id).is_some_and(|s| s.contains(pair))
    }

    pub fn len(&self) -> usize {
        self.triggered.values().map(BTreeSet::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplorationTrajectory {
    pub app_id: String,
    pub seed: u64,
    pub actions: Vec<Action>,
    /// Pair triggered by each action.
    pub targets: Vec<Pair>,
    /// Reset state followed by the state after each action.
    pub states: Vec<EnvState>,
}

impl ExplorationTrajectory {
    pub fn final_state(&self) -> &EnvState {
        self.states.last().expect("walk has a reset state")
    }
}

/// Literal list-item texts of `app`: what a walk may type.
pub fn typable_texts(app: &AppDefinition) -> Vec<String> {
    let texts: BTreeSet<String> = app
        .screen_order
        .iter()
        .flat_map(|s| app.screens[s].elements.iter())
        .filter(|e| e.kind == ElementKind::ListItem && !e.content.is_empty() && !e.content.contains('{'))
        .map(|e| e.content.clone())
        .collect();
    texts.into_iter().collect()
}

const SWIPES: [Direction; 4] = [Direction::Up, Direction::Down, Direction::Left, Direction::Right];

enum Move {
    Tap(f64, f64),
    Type,
    Swipe(Direction),
}

fn moves(app: &AppDefinition, state: &EnvState) -> Vec<(Pair, Move)> {
    let Some(screen) = app.screen(&state.screen_id) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for p in screen.placed(state.scroll_offset) {
        if p.element.kind == ElementKind::Label {
            continue;
        }
        let (x, y) = p.bounds.center();
        // Overlaps resolve to the topmost element; record what is really hit.
        if let Some(hit) = screen.hit_test(state.scroll_offset, x, y) {
            if hit.element_id == p.element.element_id {
                out.push(((state.screen_id.clone(), hit.element_id.clone()), Move::Tap(x, y)));
            }
        }
    }
    if let Some(f) = &state.focused_element {
        out.push(((state.screen_id.clone(), format!("type:{f}")), Move::Type));
    }
    for d in SWIPES {
        out.push(((state.screen_id.clone(), format!("swipe:{}", format!("{d:?}").to_lowercase())), Move::Swipe(d)));
    }
    out
}

/// One seeded random walk from the reset state. Targets recorded in
/// `coverage` count as explored; the walk's own targets are added to it.
pub fn explore(app: &AppDefinition, cfg: &ExplorationConfig, coverage: &mut Coverage) -> ExplorationTrajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let texts = typable_texts(app);
    let mut state = reset(app, cfg.seed);
    let mut walk = ExplorationTrajectory {
        app_id: app.app_id.clone(),
        seed: cfg.seed,
        actions: Vec::new(),
        targets: Vec::new(),
        states: vec![state.clone()],
    };
    let mut counts: BTreeMap<Pair, u32> = BTreeMap::new();
    for _ in 0..cfg.max_steps {
        let cands: Vec<(Pair, Move)> = moves(app, &state)
            .into_iter()
            .filter(|(p, m)| {
                counts.get(p).copied().unwrap_or(0) < cfg.revisit_cap && !(matches!(m, Move::Type) && texts.is_empty())
            })
            .collect();
        if cands.is_empty() {
            break;
        }
        let novel: Vec<usize> = (0..cands.len())
            .filter(|&i| !counts.contains_key(&cands[i].0) && !coverage.contains(&app.app_id, &cands[i].0))
            .collect();
        let pick = if !novel.is_empty() && rng.gen_bool(cfg.novelty_bias) {
            novel[rng.gen_range(0..novel.len())]
        } else {
            rng.gen_range(0..cands.len())
        };
        let (pair, mv) = &cands[pick];
        let action = match *mv {
            Move::Tap(x, y) => Action::Click { x, y },
            Move::Type => Action::Type { text: texts[rng.gen_range(0..texts.len())].clone() },
            Move::Swipe(d) => d.canonical_swipe(),
        };
        let (next, _) = step(app, &state, &action).expect("exploration moves are valid");
        *counts.entry(pair.clone()).or_default() += 1;
        walk.actions.push(action);
        walk.targets.push(pair.clone());
        walk.states.push(next.clone());
        state = next;
    }
    coverage.triggered.entry(app.app_id.clone()).or_default().extend(walk.targets.iter().cloned());
    walk
}

/// Labels a walk. Returns `None` when the labeler declines or its goal fails
/// validation or does not hold on the walk's final state.
pub fn reverse_label(
    app: &AppDefinition,
    walk: &ExplorationTrajectory,
    labeler: &dyn Labeler,
    task_id: String,
) -> Option<Task> {
    if walk.actions.is_empty() {
        return None;
    }
    let (instruction, goal) = labeler.label(app, walk)?;
    if let Err(e) = goal.validate(app) {
        tracing::debug!(task_id, error = %e, "label rejected: invalid goal");
        return None;
    }
    if !goal.holds(app, walk.final_state()) {
        tracing::debug!(task_id, "label rejected: goal false on the walk's final state");
        return None;
    }
    Some(Task { task_id, app_id: app.app_id.clone(), instruction, goal, complexity: None, origin: Origin::Explored })
}

#[cfg(test)]
mod tests;
