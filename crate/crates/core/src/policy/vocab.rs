//! Token vocabulary and the action grammar.
//!
//! Every action is a short token sequence: an action-type token, its argument
//! tokens, then `END`. The grammar is fixed per action type:
//!
//! ```text
//! CLICK X Y END          SWIPE X Y X Y END      TYPE TXT END
//! SYSBTN BUTTON END      WAIT DURATION END      TERMINATE STATUS END
//! ANSWER TXT END
//! ```

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::PolicyError;
use crate::world::{Action, AppSet, ElementKind, SystemButton, TerminalStatus};

/// Number of action types.
pub const N_KINDS: usize = 7;
pub const KIND_NAMES: [&str; N_KINDS] = ["CLICK", "SWIPE", "TYPE", "SYSBTN", "WAIT", "TERMINATE", "ANSWER"];
/// Wait durations expressible by the grammar, in seconds.
pub const DURATIONS: [f64; 4] = [1.0, 2.0, 5.0, 10.0];
pub const DEFAULT_BINS: usize = 20;

/// Index of an action's type in [`KIND_NAMES`].
pub fn kind_index(action: &Action) -> usize {
    match action {
        Action::Click { .. } => 0,
        Action::Swipe { .. } => 1,
        Action::Type { .. } => 2,
        Action::SystemButton { .. } => 3,
        Action::Wait { .. } => 4,
        Action::Terminate { .. } => 5,
        Action::Answer { .. } => 6,
    }
}

/// Decoded meaning of a token id.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tok {
    Kind(usize),
    X(usize),
    Y(usize),
    Button(SystemButton),
    Status(TerminalStatus),
    Duration(usize),
    Text(usize),
    End,
}

/// Argument slot of the grammar.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Slot {
    Start,
    X,
    Y,
    Button,
    Status,
    Duration,
    Text,
    End,
    /// After `END`; nothing is legal.
    Done,
}

fn slots(kind: usize) -> &'static [Slot] {
    match kind {
        0 => &[Slot::X, Slot::Y],
        1 => &[Slot::X, Slot::Y, Slot::X, Slot::Y],
        2 | 6 => &[Slot::Text],
        3 => &[Slot::Button],
        4 => &[Slot::Duration],
        5 => &[Slot::Status],
        _ => unreachable!("kind index out of range"),
    }
}

/// Where a prefix stands in the grammar.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GrammarState {
    pub slot: Slot,
    /// Position of `slot` within its action (0 = action-type token).
    pub position: usize,
    pub kind: Option<usize>,
}

/// Dense, stable token ids for one coordinate resolution and text list.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub bins: usize,
    /// Literal strings usable by `type` and `answer`, sorted and distinct.
    pub texts: Vec<String>,
}

impl Vocab {
    pub fn new(bins: usize, texts: impl IntoIterator<Item = String>) -> Self {
        assert!(bins >= 1, "at least one coordinate bin");
        let texts: BTreeSet<String> = texts.into_iter().collect();
        Vocab { bins, texts: texts.into_iter().collect() }
    }

    /// Text vocabulary made of every literal list-item content in `apps`.
    pub fn from_apps(apps: &AppSet, bins: usize) -> Self {
        let mut texts = Vec::new();
        for app in apps.iter() {
            for s in &app.screen_order {
                for e in &app.screens[s].elements {
                    if e.kind == ElementKind::ListItem && !e.content.is_empty() && !e.content.contains('{') {
                        texts.push(e.content.clone());
                    }
                }
            }
        }
        Vocab::new(bins, texts)
    }

    fn x0(&self) -> usize {
        N_KINDS
    }
    fn y0(&self) -> usize {
        self.x0() + self.bins
    }
    fn button0(&self) -> usize {
        self.y0() + self.bins
    }
    fn status0(&self) -> usize {
        self.button0() + 4
    }
    fn dur0(&self) -> usize {
        self.status0() + 2
    }
    fn text0(&self) -> usize {
        self.dur0() + DURATIONS.len()
    }
    pub fn end(&self) -> u32 {
        (self.text0() + self.texts.len()) as u32
    }

    pub fn len(&self) -> usize {
        self.end() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, tok: Tok) -> u32 {
        let i = match tok {
            Tok::Kind(k) => k,
            Tok::X(b) => self.x0() + b,
            Tok::Y(b) => self.y0() + b,
            Tok::Button(b) => self.button0() + b as usize,
            Tok::Status(TerminalStatus::Success) => self.status0(),
            Tok::Status(TerminalStatus::Failure) => self.status0() + 1,
            Tok::Duration(d) => self.dur0() + d,
            Tok::Text(t) => self.text0() + t,
            Tok::End => return self.end(),
        };
        i as u32
    }

    pub fn tok(&self, id: u32) -> Option<Tok> {
        let i = id as usize;
        Some(if i < self.x0() {
            Tok::Kind(i)
        } else if i < self.y0() {
            Tok::X(i - self.x0())
        } else if i < self.button0() {
            Tok::Y(i - self.y0())
        } else if i < self.status0() {
            Tok::Button(SystemButton::ALL[i - self.button0()])
        } else if i < self.dur0() {
            Tok::Status(if i == self.status0() { TerminalStatus::Success } else { TerminalStatus::Failure })
        } else if i < self.text0() {
            Tok::Duration(i - self.dur0())
        } else if i < self.end() as usize {
            Tok::Text(i - self.text0())
        } else if i == self.end() as usize {
            Tok::End
        } else {
            return None;
        })
    }

    pub fn name(&self, id: u32) -> String {
        match self.tok(id) {
            Some(Tok::Kind(k)) => KIND_NAMES[k].to_string(),
            Some(Tok::X(b)) => format!("X_{b}"),
            Some(Tok::Y(b)) => format!("Y_{b}"),
            Some(Tok::Button(b)) => format!("{b:?}").to_uppercase(),
            Some(Tok::Status(s)) => format!("{s:?}").to_uppercase(),
            Some(Tok::Duration(d)) => format!("WAIT_{}S", DURATIONS[d]),
            Some(Tok::Text(t)) => format!("TXT_{t}"),
            Some(Tok::End) => "END".to_string(),
            None => format!("<{id}>"),
        }
    }

    /// Token ids allowed in `slot`, ascending.
    pub fn slot_tokens(&self, slot: Slot) -> std::ops::Range<u32> {
        let r = match slot {
            Slot::Start => 0..N_KINDS,
            Slot::X => self.x0()..self.y0(),
            Slot::Y => self.y0()..self.button0(),
            Slot::Button => self.button0()..self.status0(),
            Slot::Status => self.status0()..self.dur0(),
            Slot::Duration => self.dur0()..self.text0(),
            Slot::Text => self.text0()..self.end() as usize,
            Slot::End => self.end() as usize..self.len(),
            Slot::Done => 0..0,
        };
        r.start as u32..r.end as u32
    }

    /// Legal next tokens after a grammar state.
    pub fn legal(&self, state: &GrammarState) -> Vec<u32> {
        if state.slot == Slot::Start && self.texts.is_empty() {
            // TYPE and ANSWER need at least one text token.
            return (0..N_KINDS as u32).filter(|&k| !matches!(k, 2 | 6)).collect();
        }
        self.slot_tokens(state.slot).collect()
    }

    /// Walks a prefix through the grammar.
    pub fn state_after(&self, prefix: &[u32]) -> Result<GrammarState, PolicyError> {
        let mut state = GrammarState { slot: Slot::Start, position: 0, kind: None };
        for (i, &id) in prefix.iter().enumerate() {
            if !self.legal(&state).contains(&id) {
                return Err(PolicyError::IllegalToken { position: i, token: id });
            }
            state = self.advance(&state, id);
        }
        Ok(state)
    }

    fn advance(&self, state: &GrammarState, id: u32) -> GrammarState {
        let kind = match (state.kind, self.tok(id)) {
            (Some(k), _) => k,
            (None, Some(Tok::Kind(k))) => k,
            _ => unreachable!("start slot holds kind tokens"),
        };
        let position = state.position + 1;
        let args = slots(kind);
        let slot = match state.slot {
            Slot::End | Slot::Done => Slot::Done,
            _ if position <= args.len() => args[position - 1],
            _ => Slot::End,
        };
        GrammarState { slot, position, kind: Some(kind) }
    }

    /// Whether `tokens` is a complete action sequence.
    pub fn is_complete(&self, tokens: &[u32]) -> bool {
        matches!(self.state_after(tokens), Ok(GrammarState { slot: Slot::Done, .. }))
    }

    fn bin(&self, v: f64) -> usize {
        ((v * self.bins as f64).floor() as usize).min(self.bins - 1)
    }

    /// Center of coordinate bin `b`.
    pub fn bin_center(&self, b: usize) -> f64 {
        (b as f64 + 0.5) / self.bins as f64
    }

    /// Token sequence for `action`. Coordinates are quantized to bins and
    /// wait durations to the nearest expressible one.
    pub fn encode(&self, action: &Action) -> Result<Vec<u32>, PolicyError> {
        action.validate().map_err(PolicyError::Unencodable)?;
        let mut out = vec![self.id(Tok::Kind(kind_index(action)))];
        let text = |t: &str| {
            self.texts
                .binary_search_by(|s| s.as_str().cmp(t))
                .map(|i| self.id(Tok::Text(i)))
                .map_err(|_| PolicyError::Unencodable(format!("text {t:?} not in vocabulary")))
        };
        match action {
            Action::Click { x, y } => out.extend([self.id(Tok::X(self.bin(*x))), self.id(Tok::Y(self.bin(*y)))]),
            Action::Swipe { x1, y1, x2, y2 } => out.extend([
                self.id(Tok::X(self.bin(*x1))),
                self.id(Tok::Y(self.bin(*y1))),
                self.id(Tok::X(self.bin(*x2))),
                self.id(Tok::Y(self.bin(*y2))),
            ]),
            Action::Type { text: t } | Action::Answer { text: t } => out.push(text(t)?),
            Action::SystemButton { button } => out.push(self.id(Tok::Button(*button))),
            Action::Wait { seconds } => {
                let d = (0..DURATIONS.len())
                    .min_by(|&a, &b| (DURATIONS[a] - seconds).abs().total_cmp(&(DURATIONS[b] - seconds).abs()))
                    .expect("durations non-empty");
                out.push(self.id(Tok::Duration(d)));
            }
            Action::Terminate { status } => out.push(self.id(Tok::Status(*status))),
        }
        out.push(self.end());
        Ok(out)
    }

    /// Action denoted by a complete token sequence.
    pub fn decode(&self, tokens: &[u32]) -> Result<Action, PolicyError> {
        if !self.is_complete(tokens) {
            self.state_after(tokens)?;
            return Err(PolicyError::Incomplete);
        }
        let t = |i: usize| self.tok(tokens[i]).expect("grammar-checked token");
        let coord = |i: usize| match t(i) {
            Tok::X(b) | Tok::Y(b) => self.bin_center(b),
            _ => unreachable!(),
        };
        let text = |i: usize| match t(i) {
            Tok::Text(k) => self.texts[k].clone(),
            _ => unreachable!(),
        };
        let Tok::Kind(kind) = t(0) else { unreachable!() };
        Ok(match kind {
            0 => Action::Click { x: coord(1), y: coord(2) },
            1 => Action::Swipe { x1: coord(1), y1: coord(2), x2: coord(3), y2: coord(4) },
            2 => Action::Type { text: text(1) },
            3 => match t(1) {
                Tok::Button(button) => Action::SystemButton { button },
                _ => unreachable!(),
            },
            4 => match t(1) {
                Tok::Duration(d) => Action::Wait { seconds: DURATIONS[d] },
                _ => unreachable!(),
            },
            5 => match t(1) {
                Tok::Status(status) => Action::Terminate { status },
                _ => unreachable!(),
            },
            _ => Action::Answer { text: text(1) },
        })
    }

    /// Parses space-separated token names, the inverse of [`Vocab::name`].
    pub fn parse_names(&self, text: &str) -> Result<Vec<u32>, PolicyError> {
        text.split_whitespace()
            .map(|name| {
                (0..self.len() as u32)
                    .find(|&id| self.name(id) == name)
                    .ok_or_else(|| PolicyError::Unencodable(format!("unknown token {name}")))
            })
            .collect()
    }
}
