use serde::{Deserialize, Serialize};

use super::ExplorationTrajectory;
use crate::eval::{Atom, GoalPredicate};
use crate::transport::{post_with_retry, RetryPolicy, Transport};
use crate::world::{render_text, Action, AppDefinition, ElementKind, EnvState, TextObservation};

pub trait Labeler: Send + Sync {
    /// Instruction and goal for a walk, or `None` to decline.
    fn label(&self, app: &AppDefinition, walk: &ExplorationTrajectory) -> Option<(String, GoalPredicate)>;
}

/// What changed between two states, as goal atoms.
///
/// Changed variables, in name order, each become `var_equals`. Without any
/// variable change a screen change becomes `on_screen`. A new answer adds
/// `answered`.
pub fn state_delta(initial: &EnvState, last: &EnvState) -> Vec<Atom> {
    let mut atoms: Vec<Atom> = last
        .vars
        .iter()
        .filter(|(k, v)| initial.vars.get(*k) != Some(*v))
        .map(|(k, v)| Atom::VarEquals { name: k.clone(), value: v.clone() })
        .collect();
    if atoms.is_empty() && last.screen_id != initial.screen_id {
        atoms.push(Atom::OnScreen(last.screen_id.clone()));
    }
    if let Some(a) = &last.answer_text {
        if initial.answer_text.as_ref() != Some(a) {
            atoms.push(Atom::Answered(a.clone()));
        }
    }
    atoms
}

fn spaced(id: &str) -> String {
    id.replace('_', " ")
}

fn screen_name(app: &AppDefinition, screen_id: &str) -> String {
    app.screen(screen_id)
        .and_then(|s| s.element("title"))
        .map(|t| t.content.as_str())
        .filter(|c| !c.is_empty() && !c.contains('{'))
        .map_or_else(|| spaced(screen_id), str::to_string)
}

fn is_text_field(app: &AppDefinition, id: &str) -> bool {
    app.screens.values().any(|s| s.element(id).is_some_and(|e| e.kind == ElementKind::TextField))
}

/// Imperative clause for one atom, lower-case first letter.
pub fn describe(app: &AppDefinition, atom: &Atom) -> String {
    match atom {
        Atom::VarEquals { name, value } => {
            if is_text_field(app, name) {
                return format!("type \"{value}\" into the {}", spaced(name));
            }
            let verbs = [("_set", "set"), ("_saved", "save"), ("_placed", "place"), ("_pinned", "pin")];
            for (suffix, verb) in verbs {
                if let Some(stem) = name.strip_suffix(suffix) {
                    return match value.as_str() {
                        "true" => format!("{verb} the {}", spaced(stem)),
                        "false" => format!("un{verb} the {}", spaced(stem)),
                        v => format!("set {} to {v}", spaced(name)),
                    };
                }
            }
            if let Some(who) = name.strip_prefix("favorite_") {
                return match value.as_str() {
                    "true" => format!("mark {who} as a favorite"),
                    _ => format!("remove {who} from favorites"),
                };
            }
            match value.as_str() {
                "on" | "off" => format!("turn {value} {}", spaced(name)),
                "true" => format!("enable {}", spaced(name)),
                "false" => format!("disable {}", spaced(name)),
                v => format!("set {} to {v}", spaced(name)),
            }
        }
        Atom::OnScreen(s) => format!("open the {} screen", screen_name(app, s)),
        Atom::ElementContentContains { element_id, substring } => {
            format!("show \"{substring}\" in the {}", spaced(element_id))
        }
        Atom::Answered(t) => format!("answer \"{t}\""),
        Atom::TerminatedSuccess => "finish".to_string(),
    }
}

fn sentence(clauses: &[String]) -> String {
    let joined = clauses.join(" and ");
    let mut c = joined.chars();
    match c.next() {
        Some(first) => first.to_uppercase().chain(c).collect(),
        None => joined,
    }
}

/// Deterministic labeler: goal from [`state_delta`], instruction from
/// per-atom templates.
#[derive(Clone, Copy, Debug, Default)]
pub struct TemplateLabeler;

impl Labeler for TemplateLabeler {
    fn label(&self, app: &AppDefinition, walk: &ExplorationTrajectory) -> Option<(String, GoalPredicate)> {
        let atoms = state_delta(&walk.states[0], walk.final_state());
        if atoms.is_empty() {
            return None;
        }
        let clauses: Vec<String> = atoms.iter().map(|a| describe(app, a)).collect();
        Some((sentence(&clauses), GoalPredicate::new(atoms)))
    }
}

/// Body sent to a remote labeler.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelRequest {
    pub app_id: String,
    pub actions: Vec<Action>,
    pub final_observation: TextObservation,
    /// Atoms the template labeler would use; the endpoint may keep them.
    pub delta: Vec<Atom>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelResponse {
    pub instruction: String,
    /// When absent, the delta goal is used.
    #[serde(default)]
    pub goal: Option<GoalPredicate>,
}

pub fn parse_label_response(body: &str) -> Result<LabelResponse, String> {
    let r: LabelResponse = serde_json::from_str(body).map_err(|e| e.to_string())?;
    if r.instruction.trim().is_empty() {
        return Err("empty instruction".into());
    }
    Ok(r)
}

/// Remote labeler. Transport failures are retried per `retry`; a walk whose
/// request still fails, or whose response is malformed, gets no label.
pub struct ExternalLabeler {
    pub transport: Box<dyn Transport>,
    pub retry: RetryPolicy,
}

impl Labeler for ExternalLabeler {
    fn label(&self, app: &AppDefinition, walk: &ExplorationTrajectory) -> Option<(String, GoalPredicate)> {
        let delta = state_delta(&walk.states[0], walk.final_state());
        let req = LabelRequest {
            app_id: walk.app_id.clone(),
            actions: walk.actions.clone(),
            final_observation: render_text(app, walk.final_state()),
            delta: delta.clone(),
        };
        let body = serde_json::to_string(&req).expect("request serializes");
        let reply = match post_with_retry(self.transport.as_ref(), &body, self.retry) {
            Ok(r) => r,
            Err(e) => {
                tracing::warn!(app = %walk.app_id, seed = walk.seed, error = %e, "labeler unreachable");
                return None;
            }
        };
        let resp = match parse_label_response(&reply) {
            Ok(r) => r,
            Err(e) => {
                tracing::warn!(error = %e, "malformed labeler response");
                return None;
            }
        };
        let goal = match resp.goal {
            Some(g) => g,
            None if delta.is_empty() => return None,
            None => GoalPredicate::new(delta),
        };
        Some((resp.instruction, goal))
    }
}
