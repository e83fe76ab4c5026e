//! Deterministic finite-state mobile GUI simulator.
//!
//! An [`AppDefinition`] is a set of screens (ordered element lists) plus
//! declarative [`TransitionRule`]s. [`step`] is the transition function: it
//! takes an immutable [`EnvState`] and an [`Action`] and returns the successor
//! state together with the [`StepEvents`] it produced. Screens are text-level
//! element lists, not rasters; [`render_text`] is the one observation encoding
//! used by the policy, the world model and the evaluator.

mod action;
pub mod bundled;
mod schema;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use action::{Action, Direction, SystemButton, TerminalStatus};
pub use schema::{load_app, LoadError};

/// Widget category of a [`UIElement`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementKind {
    Button,
    Label,
    TextField,
    Checkbox,
    ListItem,
    Toggle,
}

impl ElementKind {
    pub const ALL: [ElementKind; 6] = [
        ElementKind::Button,
        ElementKind::Label,
        ElementKind::TextField,
        ElementKind::Checkbox,
        ElementKind::ListItem,
        ElementKind::Toggle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ElementKind::Button => "button",
            ElementKind::Label => "label",
            ElementKind::TextField => "text_field",
            ElementKind::Checkbox => "checkbox",
            ElementKind::ListItem => "list_item",
            ElementKind::Toggle => "toggle",
        }
    }
}

/// Axis-aligned rectangle in normalized screen coordinates.
///
/// Serialized as `[x_min, y_min, x_max, y_max]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Bounds {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Bounds {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self { x_min, y_min, x_max, y_max }
    }

    pub fn is_valid(&self) -> bool {
        let coords = [self.x_min, self.y_min, self.x_max, self.y_max];
        coords.iter().all(|c| c.is_finite() && (0.0..=1.0).contains(c))
            && self.x_min < self.x_max
            && self.y_min < self.y_max
    }

    /// Closed-interval containment.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.x_min <= x && x <= self.x_max && self.y_min <= y && y <= self.y_max
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)
    }
}

impl From<[f64; 4]> for Bounds {
    fn from(b: [f64; 4]) -> Self {
        Bounds::new(b[0], b[1], b[2], b[3])
    }
}

impl From<Bounds> for [f64; 4] {
    fn from(b: Bounds) -> Self {
        [b.x_min, b.y_min, b.x_max, b.y_max]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UIElement {
    pub element_id: String,
    pub kind: ElementKind,
    /// Display text. `{name}` placeholders are filled from the state's vars.
    pub content: String,
    pub bounds: Bounds,
    pub focusable: bool,
    pub visible: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Screen {
    pub screen_id: String,
    /// Target of the Back button when no rule overrides it.
    pub parent: Option<String>,
    pub elements: Vec<UIElement>,
    /// When set, the screen's list items scroll: only this many are shown at
    /// once, laid out in the bounds of the first `scroll_window` list items.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scroll_window: Option<usize>,
}

/// An element as currently displayed: scrolled list items carry the bounds of
/// the slot they occupy.
#[derive(Clone, Copy, Debug)]
pub struct Placed<'a> {
    pub element: &'a UIElement,
    pub bounds: Bounds,
}

impl Screen {
    pub fn element(&self, element_id: &str) -> Option<&UIElement> {
        self.elements.iter().find(|e| e.element_id == element_id)
    }

    fn list_items(&self) -> impl Iterator<Item = (usize, &UIElement)> {
        self.elements.iter().enumerate().filter(|(_, e)| e.kind == ElementKind::ListItem)
    }

    /// Largest valid scroll offset (0 for non-scrolling screens).
    pub fn max_scroll(&self) -> usize {
        match self.scroll_window {
            Some(w) => self.list_items().count().saturating_sub(w),
            None => 0,
        }
    }

    /// Visible elements in document order at the given scroll offset.
    pub fn placed(&self, scroll_offset: usize) -> Vec<Placed<'_>> {
        let Some(window) = self.scroll_window else {
            return self
                .elements
                .iter()
                .filter(|e| e.visible)
                .map(|e| Placed { element: e, bounds: e.bounds })
                .collect();
        };
        let offset = scroll_offset.min(self.max_scroll());
        let slots: Vec<Bounds> = self.list_items().take(window).map(|(_, e)| e.bounds).collect();
        let mut rank = 0usize;
        let mut out = Vec::with_capacity(self.elements.len());
        for e in &self.elements {
            if e.kind == ElementKind::ListItem {
                let r = rank;
                rank += 1;
                if r >= offset && r < offset + window && e.visible {
                    out.push(Placed { element: e, bounds: slots[r - offset] });
                }
            } else if e.visible {
                out.push(Placed { element: e, bounds: e.bounds });
            }
        }
        out
    }

    /// Topmost visible element containing `(x, y)`; later elements in
    /// document order are on top.
    pub fn hit_test(&self, scroll_offset: usize, x: f64, y: f64) -> Option<&UIElement> {
        self.placed(scroll_offset).into_iter().rev().find(|p| p.bounds.contains(x, y)).map(|p| p.element)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

/// One guard condition. Ordering comparisons only hold when both sides parse
/// as integers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Condition {
    pub var: String,
    pub op: CmpOp,
    pub value: String,
}

impl Condition {
    pub fn holds(&self, vars: &BTreeMap<String, String>) -> bool {
        let actual = vars.get(&self.var).map(String::as_str).unwrap_or("");
        match self.op {
            CmpOp::Eq => actual == self.value,
            CmpOp::Ne => actual != self.value,
            op => match (actual.parse::<i64>(), self.value.parse::<i64>()) {
                (Ok(a), Ok(b)) => match op {
                    CmpOp::Lt => a < b,
                    CmpOp::Le => a <= b,
                    CmpOp::Gt => a > b,
                    CmpOp::Ge => a >= b,
                    CmpOp::Eq | CmpOp::Ne => unreachable!(),
                },
                _ => false,
            },
        }
    }
}

/// What a rule reacts to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Trigger {
    Tap(String),
    Swipe(Direction),
    Type(String),
    SystemButton(SystemButton),
    /// Fires on a `wait` that brings the clock to at least this many seconds.
    Timer(f64),
}

impl Trigger {
    /// Rules with equal keys on the same screen compete for the same events.
    pub(crate) fn key(&self) -> String {
        match self {
            Trigger::Tap(e) => format!("tap {e}"),
            Trigger::Swipe(d) => format!("swipe {d:?}"),
            Trigger::Type(e) => format!("type {e}"),
            Trigger::SystemButton(b) => format!("system_button {b:?}"),
            Trigger::Timer(_) => "timer".to_string(),
        }
    }
}

impl fmt::Display for Trigger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Trigger::Timer(t) => write!(f, "timer >= {t}"),
            other => f.write_str(&other.key()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleOn {
    pub screen: String,
    pub trigger: Trigger,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Effect {
    #[serde(default)]
    pub next_screen: Option<String>,
    #[serde(default)]
    pub set_vars: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionRule {
    pub on: RuleOn,
    /// Conjunction of conditions; empty means always.
    #[serde(default)]
    pub guard: Option<Vec<Condition>>,
    pub effect: Effect,
}

impl TransitionRule {
    pub fn guard_holds(&self, vars: &BTreeMap<String, String>) -> bool {
        self.guard.as_ref().is_none_or(|g| g.iter().all(|c| c.holds(vars)))
    }
}

/// A validated app. Read-only after [`load_app`].
#[derive(Clone, Debug, PartialEq)]
pub struct AppDefinition {
    pub app_id: String,
    pub initial_screen: String,
    pub initial_vars: BTreeMap<String, String>,
    pub screens: BTreeMap<String, Screen>,
    /// Screen ids in document order.
    pub screen_order: Vec<String>,
    pub rules: Vec<TransitionRule>,
}

impl AppDefinition {
    pub fn screen(&self, screen_id: &str) -> Option<&Screen> {
        self.screens.get(screen_id)
    }

    /// Every variable name the app can ever hold.
    pub fn var_names(&self) -> std::collections::BTreeSet<String> {
        let mut names: std::collections::BTreeSet<String> = self.initial_vars.keys().cloned().collect();
        for rule in &self.rules {
            names.extend(rule.effect.set_vars.keys().cloned());
        }
        for screen in self.screens.values() {
            names.extend(
                screen.elements.iter().filter(|e| e.kind == ElementKind::TextField).map(|e| e.element_id.clone()),
            );
        }
        names
    }

    /// Largest timer threshold of any rule, or 0 without timers.
    pub fn max_timer(&self) -> f64 {
        self.rules
            .iter()
            .filter_map(|r| match r.on.trigger {
                Trigger::Timer(t) => Some(t),
                _ => None,
            })
            .fold(0.0, f64::max)
    }

    /// Static element contents without placeholders, in document order.
    pub fn literal_contents(&self) -> impl Iterator<Item = &str> {
        self.screen_order
            .iter()
            .flat_map(move |s| self.screens[s].elements.iter())
            .map(|e| e.content.as_str())
            .filter(|c| !c.is_empty() && !c.contains('{'))
    }

    fn matching_rule(&self, state: &EnvState, pred: impl Fn(&Trigger) -> bool) -> Option<(usize, &TransitionRule)> {
        self.rules
            .iter()
            .enumerate()
            .find(|(_, r)| r.on.screen == state.screen_id && pred(&r.on.trigger) && r.guard_holds(&state.vars))
    }
}

/// Collection of loaded apps keyed by `app_id`.
#[derive(Clone, Debug, Default)]
pub struct AppSet {
    apps: BTreeMap<String, Arc<AppDefinition>>,
}

#[derive(Debug, thiserror::Error)]
pub enum AppSetError {
    #[error("cannot read app directory {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Load { path: String, source: LoadError },
    #[error("duplicate app_id {0}")]
    Duplicate(String),
}

impl AppSet {
    pub fn from_apps(apps: impl IntoIterator<Item = AppDefinition>) -> Result<Self, AppSetError> {
        let mut set = AppSet::default();
        for app in apps {
            if set.apps.contains_key(&app.app_id) {
                return Err(AppSetError::Duplicate(app.app_id));
            }
            set.apps.insert(app.app_id.clone(), Arc::new(app));
        }
        Ok(set)
    }

    /// Loads every `*.json` file in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, AppSetError> {
        let io_err = |source| AppSetError::Io { path: dir.display().to_string(), source };
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(io_err)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        let mut apps = Vec::new();
        for path in paths {
            let text = std::fs::read_to_string(&path)
                .map_err(|source| AppSetError::Io { path: path.display().to_string(), source })?;
            let app =
                load_app(&text).map_err(|source| AppSetError::Load { path: path.display().to_string(), source })?;
            apps.push(app);
        }
        Self::from_apps(apps)
    }

    pub fn get(&self, app_id: &str) -> Option<&Arc<AppDefinition>> {
        self.apps.get(app_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<AppDefinition>> {
        self.apps.values()
    }

    pub fn len(&self) -> usize {
        self.apps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.apps.is_empty()
    }
}

/// Complete simulated device state. Immutable by convention: [`step`] returns
/// a new value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub app_id: String,
    pub screen_id: String,
    pub vars: BTreeMap<String, String>,
    /// Seconds since reset.
    pub clock: f64,
    /// Scroll position of the current screen's list; reset on navigation.
    pub scroll_offset: usize,
    pub focused_element: Option<String>,
    pub terminated: Option<TerminalStatus>,
    pub answer_text: Option<String>,
}

impl EnvState {
    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("state serializes");
        hex::encode(Sha256::digest(bytes))
    }

    /// State with the clock clamped past the last timer threshold. Two states
    /// with equal keys have identical futures under every action sequence.
    pub fn dynamics_key(&self, app: &AppDefinition) -> EnvState {
        let mut key = self.clone();
        key.clock = key.clock.min(app.max_timer());
        key
    }
}

/// Side information produced by one [`step`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepEvents {
    /// Element under a click, if any.
    pub hit: Option<String>,
    /// Index of the rule that fired.
    pub rule: Option<usize>,
    pub navigated: bool,
    pub scrolled: bool,
    pub typed: bool,
    /// Nothing but possibly the clock changed.
    pub no_effect: bool,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StepError {
    #[error("episode already terminated")]
    Terminated,
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("screen {0} not defined by app")]
    UnknownScreen(String),
}

/// Initial state. Apps are fully deterministic, so `seed` does not influence
/// the result; it is accepted so environments with randomized starts can share
/// the signature.
pub fn reset(app: &AppDefinition, _seed: u64) -> EnvState {
    EnvState {
        app_id: app.app_id.clone(),
        screen_id: app.initial_screen.clone(),
        vars: app.initial_vars.clone(),
        clock: 0.0,
        scroll_offset: 0,
        focused_element: None,
        terminated: None,
        answer_text: None,
    }
}

fn apply_rule(state: &mut EnvState, events: &mut StepEvents, idx: usize, rule: &TransitionRule) {
    events.rule = Some(idx);
    for (k, v) in &rule.effect.set_vars {
        state.vars.insert(k.clone(), v.clone());
    }
    if let Some(next) = &rule.effect.next_screen {
        navigate(state, events, next);
    }
}

fn navigate(state: &mut EnvState, events: &mut StepEvents, next: &str) {
    if state.screen_id != next {
        state.screen_id = next.to_string();
        state.scroll_offset = 0;
        state.focused_element = None;
        events.navigated = true;
    }
}

/// Applies `action` to `state`.
pub fn step(app: &AppDefinition, state: &EnvState, action: &Action) -> Result<(EnvState, StepEvents), StepError> {
    if state.terminated.is_some() {
        return Err(StepError::Terminated);
    }
    action.validate().map_err(StepError::InvalidAction)?;
    let screen = app.screen(&state.screen_id).ok_or_else(|| StepError::UnknownScreen(state.screen_id.clone()))?;

    let mut next = state.clone();
    let mut events = StepEvents::default();

    match action {
        Action::Click { x, y } => {
            if let Some(el) = screen.hit_test(state.scroll_offset, *x, *y) {
                events.hit = Some(el.element_id.clone());
                let id = &el.element_id;
                if let Some((i, rule)) = app.matching_rule(state, |t| matches!(t, Trigger::Tap(e) if e == id)) {
                    apply_rule(&mut next, &mut events, i, rule);
                }
                if !events.navigated && el.kind == ElementKind::TextField && el.focusable {
                    next.focused_element = Some(id.clone());
                }
            }
        }
        Action::Swipe { .. } => {
            let dir = action.swipe_direction();
            let rule = dir.and_then(|d| app.matching_rule(state, |t| *t == Trigger::Swipe(d)));
            if let Some((i, rule)) = rule {
                apply_rule(&mut next, &mut events, i, rule);
            } else {
                let offset = match dir {
                    Some(Direction::Up) => (state.scroll_offset + 1).min(screen.max_scroll()),
                    Some(Direction::Down) => state.scroll_offset.saturating_sub(1),
                    _ => state.scroll_offset,
                };
                if offset != state.scroll_offset {
                    next.scroll_offset = offset;
                    events.scrolled = true;
                }
            }
        }
        Action::Type { text } => {
            let field = state
                .focused_element
                .as_deref()
                .and_then(|f| screen.element(f))
                .filter(|e| e.kind == ElementKind::TextField);
            if let Some(field) = field {
                let id = field.element_id.clone();
                next.vars.insert(id.clone(), text.clone());
                events.typed = true;
                // Guards see the freshly typed value.
                if let Some((i, rule)) = app.matching_rule(&next, |t| matches!(t, Trigger::Type(e) if *e == id)) {
                    let rule = rule.clone();
                    apply_rule(&mut next, &mut events, i, &rule);
                }
            }
        }
        Action::SystemButton { button } => {
            if let Some((i, rule)) = app.matching_rule(state, |t| *t == Trigger::SystemButton(*button)) {
                apply_rule(&mut next, &mut events, i, rule);
            } else {
                match button {
                    SystemButton::Back => {
                        if let Some(parent) = &screen.parent {
                            navigate(&mut next, &mut events, parent);
                        }
                    }
                    SystemButton::Home => navigate(&mut next, &mut events, &app.initial_screen),
                    SystemButton::Menu | SystemButton::Enter => {}
                }
            }
        }
        Action::Wait { seconds } => {
            next.clock = state.clock + seconds;
            let clock = next.clock;
            if let Some((i, rule)) = app.matching_rule(state, |t| matches!(t, Trigger::Timer(at) if clock >= *at)) {
                apply_rule(&mut next, &mut events, i, rule);
            }
        }
        Action::Terminate { status } => next.terminated = Some(*status),
        Action::Answer { text } => next.answer_text = Some(text.clone()),
    }

    events.no_effect = next.screen_id == state.screen_id
        && next.vars == state.vars
        && next.scroll_offset == state.scroll_offset
        && next.focused_element == state.focused_element
        && next.terminated == state.terminated
        && next.answer_text == state.answer_text;
    Ok((next, events))
}

/// One element of a [`TextObservation`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservedElement {
    pub element_id: String,
    pub kind: ElementKind,
    pub content: String,
    pub bounds: Bounds,
}

/// Text rendering of the current screen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextObservation {
    pub app_id: String,
    pub screen_id: String,
    pub focused_element: Option<String>,
    pub elements: Vec<ObservedElement>,
}

impl fmt::Display for TextObservation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "[{}/{}]", self.app_id, self.screen_id)?;
        for e in &self.elements {
            let b = e.bounds;
            let focus = if self.focused_element.as_deref() == Some(e.element_id.as_str()) { " *" } else { "" };
            writeln!(
                f,
                "  {}: ({}, {:?}, [{:.3}, {:.3}, {:.3}, {:.3}]){focus}",
                e.element_id,
                e.kind.as_str(),
                e.content,
                b.x_min,
                b.y_min,
                b.x_max,
                b.y_max
            )?;
        }
        Ok(())
    }
}

/// Fills `{name}` placeholders from `vars`; unknown names render empty.
pub fn fill_template(template: &str, vars: &BTreeMap<String, String>) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        match rest[open..].find('}') {
            Some(close) => {
                let name = &rest[open + 1..open + close];
                out.push_str(vars.get(name).map(String::as_str).unwrap_or(""));
                rest = &rest[open + close + 1..];
            }
            None => {
                out.push_str(&rest[open..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

/// Renders the visible elements of the current screen in document order.
pub fn render_text(app: &AppDefinition, state: &EnvState) -> TextObservation {
    let elements = app
        .screen(&state.screen_id)
        .map(|screen| {
            screen
                .placed(state.scroll_offset)
                .into_iter()
                .map(|p| ObservedElement {
                    element_id: p.element.element_id.clone(),
                    kind: p.element.kind,
                    content: fill_template(&p.element.content, &state.vars),
                    bounds: p.bounds,
                })
                .collect()
        })
        .unwrap_or_default();
    TextObservation {
        app_id: state.app_id.clone(),
        screen_id: state.screen_id.clone(),
        focused_element: state.focused_element.clone(),
        elements,
    }
}

/// Checks the [`EnvState`] invariants against its app.
pub fn check_state(app: &AppDefinition, state: &EnvState) -> Result<(), String> {
    let screen = app.screen(&state.screen_id).ok_or_else(|| format!("unknown screen {}", state.screen_id))?;
    if !(state.clock.is_finite() && state.clock >= 0.0) {
        return Err(format!("bad clock {}", state.clock));
    }
    if state.scroll_offset > screen.max_scroll() {
        return Err(format!("scroll offset {} beyond {}", state.scroll_offset, screen.max_scroll()));
    }
    if let Some(f) = &state.focused_element {
        match screen.element(f) {
            Some(e) if e.focusable => {}
            _ => return Err(format!("focused element {f} not focusable on {}", state.screen_id)),
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests;
