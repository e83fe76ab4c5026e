//! Feasibility filter and curriculum.
//!
//! [`filter_task`] runs a proxy agent inside a world model and admits a task
//! when the proxy declares success within `T_max` steps and the evaluator
//! agrees on the simulated final states. [`build_curriculum`] orders admitted
//! tasks by the number of steps the proxy needed.

mod planner;
mod world_model;

use serde::{Deserialize, Serialize};

pub use planner::{planner_actions, shortest_plan, PlannerProxy, PolicyProxy, ProxyAgent};
pub use world_model::{
    parse_world_model_response, ExternalWorldModel, PredictRequest, TextState, TrueSimWorldModel, WorldModel,
    WorldModelError,
};

use crate::eval::{evaluate, Task};
use crate::world::{Action, AppDefinition, TerminalStatus};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterReason {
    Success,
    StepLimit,
    DeclaredFailure,
    /// The proxy declared success but the goal does not hold.
    Unconfirmed,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub admitted: bool,
    /// Actions up to and including the successful terminate.
    pub steps_to_success: Option<u32>,
    pub reason: FilterReason,
}

impl FilterVerdict {
    fn rejected(reason: FilterReason) -> Self {
        FilterVerdict { admitted: false, steps_to_success: None, reason }
    }
}

/// Simulates `proxy` on `task` for at most `t_max` actions.
///
/// A world-model failure is returned as an error: the task is deferred, not
/// rejected.
///
/// # Panics
/// If `t_max` or `k` is 0.
pub fn filter_task(
    app: &AppDefinition,
    task: &Task,
    world: &dyn WorldModel,
    proxy: &mut dyn ProxyAgent,
    t_max: usize,
    k: usize,
) -> Result<FilterVerdict, WorldModelError> {
    assert!(t_max >= 1 && k >= 1, "t_max and k must be positive");
    proxy.begin(app, task, t_max);
    let mut state = world.init(app)?;
    let mut states = vec![state.env.clone()];
    let mut history: Vec<Action> = Vec::new();
    for t in 1..=t_max {
        let action = proxy.act(&state, &task.instruction, &history);
        state = world.predict(app, &state, &action, &task.instruction)?;
        states.push(state.env.clone());
        history.push(action.clone());
        match action {
            Action::Terminate { status: TerminalStatus::Success } => {
                return Ok(if evaluate(app, &states, task, k) == 1 {
                    FilterVerdict { admitted: true, steps_to_success: Some(t as u32), reason: FilterReason::Success }
                } else {
                    FilterVerdict::rejected(FilterReason::Unconfirmed)
                });
            }
            Action::Terminate { status: TerminalStatus::Failure } => {
                return Ok(FilterVerdict::rejected(FilterReason::DeclaredFailure));
            }
            _ => {}
        }
    }
    Ok(FilterVerdict::rejected(FilterReason::StepLimit))
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("task {0} has no complexity; filter it before building a curriculum")]
pub struct CurriculumError(pub String);

/// Stable sort by complexity, ties by task id.
pub fn build_curriculum(mut tasks: Vec<Task>) -> Result<Vec<Task>, CurriculumError> {
    if let Some(t) = tasks.iter().find(|t| t.complexity.is_none()) {
        return Err(CurriculumError(t.task_id.clone()));
    }
    tasks.sort_by(|a, b| a.complexity.cmp(&b.complexity).then_with(|| a.task_id.cmp(&b.task_id)));
    Ok(tasks)
}

/// Admitted tasks with their complexity set, ready for [`build_curriculum`].
pub fn admitted(results: impl IntoIterator<Item = (Task, FilterVerdict)>) -> Vec<Task> {
    results
        .into_iter()
        .filter(|(_, v)| v.admitted)
        .map(|(mut t, v)| {
            t.complexity = v.steps_to_success;
            t
        })
        .collect()
}
