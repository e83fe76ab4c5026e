use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SystemButton {
    Back,
    Home,
    Menu,
    Enter,
}

impl SystemButton {
    pub const ALL: [SystemButton; 4] =
        [SystemButton::Back, SystemButton::Home, SystemButton::Menu, SystemButton::Enter];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalStatus {
    Success,
    Failure,
}

/// Direction the finger travels during a swipe.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::Up, Direction::Down, Direction::Left, Direction::Right];

    /// A canonical swipe in this direction across the middle of the screen.
    pub fn canonical_swipe(self) -> Action {
        let (x1, y1, x2, y2) = match self {
            Direction::Up => (0.5, 0.7, 0.5, 0.3),
            Direction::Down => (0.5, 0.3, 0.5, 0.7),
            Direction::Left => (0.7, 0.5, 0.3, 0.5),
            Direction::Right => (0.3, 0.5, 0.7, 0.5),
        };
        Action::Swipe { x1, y1, x2, y2 }
    }
}

/// Minimum travel for a swipe to register a direction.
pub const MIN_SWIPE: f64 = 0.05;

/// Agent action; coordinates are normalized to `[0, 1]^2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum Action {
    Click { x: f64, y: f64 },
    Swipe { x1: f64, y1: f64, x2: f64, y2: f64 },
    Type { text: String },
    SystemButton { button: SystemButton },
    Wait { seconds: f64 },
    Terminate { status: TerminalStatus },
    Answer { text: String },
}

fn unit(v: f64) -> bool {
    v.is_finite() && (0.0..=1.0).contains(&v)
}

impl Action {
    pub fn validate(&self) -> Result<(), String> {
        match self {
            Action::Click { x, y } if !(unit(*x) && unit(*y)) => Err(format!("click ({x}, {y}) outside [0,1]^2")),
            Action::Swipe { x1, y1, x2, y2 } if ![x1, y1, x2, y2].iter().all(|v| unit(**v)) => {
                Err(format!("swipe ({x1}, {y1}) -> ({x2}, {y2}) outside [0,1]^2"))
            }
            Action::Wait { seconds } if !(seconds.is_finite() && *seconds > 0.0) => {
                Err(format!("wait of {seconds} seconds"))
            }
            _ => Ok(()),
        }
    }

    /// Dominant axis of travel, or `None` for swipes shorter than [`MIN_SWIPE`].
    pub fn swipe_direction(&self) -> Option<Direction> {
        let Action::Swipe { x1, y1, x2, y2 } = *self else {
            return None;
        };
        let (dx, dy) = (x2 - x1, y2 - y1);
        if dx.abs().max(dy.abs()) < MIN_SWIPE {
            return None;
        }
        Some(if dy.abs() >= dx.abs() {
            if dy < 0.0 {
                Direction::Up
            } else {
                Direction::Down
            }
        } else if dx < 0.0 {
            Direction::Left
        } else {
            Direction::Right
        })
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Action::Click { .. } => "click",
            Action::Swipe { .. } => "swipe",
            Action::Type { .. } => "type",
            Action::SystemButton { .. } => "system_button",
            Action::Wait { .. } => "wait",
            Action::Terminate { .. } => "terminate",
            Action::Answer { .. } => "answer",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Click { x, y } => write!(f, "click({x:.3}, {y:.3})"),
            Action::Swipe { x1, y1, x2, y2 } => {
                write!(f, "swipe({x1:.3}, {y1:.3}, {x2:.3}, {y2:.3})")
            }
            Action::Type { text } => write!(f, "type({text:?})"),
            Action::SystemButton { button } => write!(f, "system_button({button:?})"),
            Action::Wait { seconds } => write!(f, "wait({seconds})"),
            Action::Terminate { status } => write!(f, "terminate({status:?})"),
            Action::Answer { text } => write!(f, "answer({text:?})"),
        }
    }
}
