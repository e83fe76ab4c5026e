//! Tasks, goal predicates and the binary success oracle.
//!
//! The oracle looks only at the last `k` states of an episode and reports
//! success when the goal holds in at least one of them, so a trailing
//! confirmation screen does not hide an achieved goal.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::world::{render_text, AppDefinition, AppSet, EnvState, TerminalStatus};

/// Default size of the evaluation window.
pub const DEFAULT_K: usize = 3;

/// One condition of a goal.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Atom {
    VarEquals {
        name: String,
        value: String,
    },
    OnScreen(String),
    /// A visible element on the current screen whose rendered content
    /// contains the substring.
    ElementContentContains {
        element_id: String,
        substring: String,
    },
    /// Case-insensitive exact match against the agent's answer.
    Answered(String),
    TerminatedSuccess,
}

impl Atom {
    pub fn holds(&self, app: &AppDefinition, state: &EnvState) -> bool {
        match self {
            Atom::VarEquals { name, value } => state.vars.get(name) == Some(value),
            Atom::OnScreen(s) => state.screen_id == *s,
            Atom::ElementContentContains { element_id, substring } => render_text(app, state)
                .elements
                .iter()
                .any(|e| e.element_id == *element_id && e.content.contains(substring.as_str())),
            Atom::Answered(text) => state.answer_text.as_ref().is_some_and(|a| a.to_lowercase() == text.to_lowercase()),
            Atom::TerminatedSuccess => state.terminated == Some(TerminalStatus::Success),
        }
    }
}

/// Non-empty conjunction of atoms. Serialized as `{"all": [...]}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalPredicate {
    pub all: Vec<Atom>,
}

impl GoalPredicate {
    pub fn new(all: Vec<Atom>) -> Self {
        Self { all }
    }

    pub fn holds(&self, app: &AppDefinition, state: &EnvState) -> bool {
        !self.all.is_empty() && self.all.iter().all(|a| a.holds(app, state))
    }

    /// Whether the goal holds once the agent declares success from `state`.
    pub fn holds_on_success(&self, app: &AppDefinition, state: &EnvState) -> bool {
        if !self.all.contains(&Atom::TerminatedSuccess) {
            return self.holds(app, state);
        }
        let mut done = state.clone();
        done.terminated = Some(TerminalStatus::Success);
        self.holds(app, &done)
    }

    /// Checks that every referenced screen, element and variable exists.
    pub fn validate(&self, app: &AppDefinition) -> Result<(), String> {
        if self.all.is_empty() {
            return Err("goal is an empty conjunction".into());
        }
        let vars = app.var_names();
        for atom in &self.all {
            match atom {
                Atom::VarEquals { name, .. } if !vars.contains(name) => {
                    return Err(format!("unknown variable {name} in app {}", app.app_id));
                }
                Atom::OnScreen(s) if app.screen(s).is_none() => {
                    return Err(format!("unknown screen {s} in app {}", app.app_id));
                }
                Atom::ElementContentContains { element_id, .. }
                    if !app.screens.values().any(|s| s.element(element_id).is_some()) =>
                {
                    return Err(format!("unknown element {element_id} in app {}", app.app_id));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Explored,
    Manual,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Task {
    pub task_id: String,
    pub app_id: String,
    pub instruction: String,
    pub goal: GoalPredicate,
    /// Steps to success in the world model, terminate included.
    pub complexity: Option<u32>,
    pub origin: Origin,
}

#[derive(Debug, thiserror::Error)]
pub enum TaskError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed task set at {path}: {message}")]
    Parse { path: String, message: String },
    #[error("task {task_id}: {message}")]
    Config { task_id: String, message: String },
}

impl Task {
    pub fn validate(&self, apps: &AppSet) -> Result<(), TaskError> {
        let config = |message: String| TaskError::Config { task_id: self.task_id.clone(), message };
        let app = apps.get(&self.app_id).ok_or_else(|| config(format!("unknown app {}", self.app_id)))?;
        self.goal.validate(app).map_err(config)
    }
}

/// Parses a task-set document (a JSON array of tasks).
pub fn parse_task_set(text: &str) -> Result<Vec<Task>, TaskError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de)
        .map_err(|e| TaskError::Parse { path: e.path().to_string(), message: e.into_inner().to_string() })
}

/// Parses a task set and checks every task against `apps`.
pub fn load_task_set(text: &str, apps: &AppSet) -> Result<Vec<Task>, TaskError> {
    let tasks = parse_task_set(text)?;
    for t in &tasks {
        t.validate(apps)?;
    }
    Ok(tasks)
}

pub fn read_task_set(path: &Path, apps: &AppSet) -> Result<Vec<Task>, TaskError> {
    let text =
        std::fs::read_to_string(path).map_err(|source| TaskError::Io { path: path.display().to_string(), source })?;
    load_task_set(&text, apps).map_err(|e| match e {
        TaskError::Parse { path: p, message } => TaskError::Parse { path: format!("{}:{p}", path.display()), message },
        other => other,
    })
}

pub fn task_set_json(tasks: &[Task]) -> String {
    let mut s = serde_json::to_string_pretty(tasks).expect("tasks serialize");
    s.push('\n');
    s
}

/// Binary success signal: 1 when the goal holds in any of the last
/// `min(k, len)` states.
///
/// # Panics
/// If `final_states` is empty or `k == 0`.
pub fn evaluate(app: &AppDefinition, final_states: &[EnvState], task: &Task, k: usize) -> u8 {
    assert!(!final_states.is_empty(), "evaluate needs at least one state");
    assert!(k >= 1, "evaluation window must be at least 1");
    let start = final_states.len().saturating_sub(k);
    u8::from(final_states[start..].iter().any(|s| task.goal.holds(app, s)))
}
