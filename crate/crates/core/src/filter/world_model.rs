use serde::{Deserialize, Serialize};

use crate::transport::{post_with_retry, RetryPolicy, Transport};
use crate::world::{render_text, reset, step, Action, AppDefinition, EnvState, TextObservation};

/// World-model state: the textual screen description plus the variables the
/// goal evaluator needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextState {
    pub observation: TextObservation,
    pub env: EnvState,
}

impl TextState {
    pub fn from_env(app: &AppDefinition, env: EnvState) -> Self {
        TextState { observation: render_text(app, &env), env }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WorldModelError {
    #[error("world model unavailable: {0}")]
    Transport(String),
    #[error("world model rejected the action: {0}")]
    Step(String),
    #[error("malformed world-model response: {0}")]
    Response(String),
}

pub trait WorldModel: Send + Sync {
    fn init(&self, app: &AppDefinition) -> Result<TextState, WorldModelError>;
    fn predict(
        &self,
        app: &AppDefinition,
        state: &TextState,
        action: &Action,
        instruction: &str,
    ) -> Result<TextState, WorldModelError>;
}

/// Transitions of the real simulator, rendered to text.
#[derive(Clone, Copy, Debug, Default)]
pub struct TrueSimWorldModel;

impl WorldModel for TrueSimWorldModel {
    fn init(&self, app: &AppDefinition) -> Result<TextState, WorldModelError> {
        Ok(TextState::from_env(app, reset(app, 0)))
    }

    fn predict(&self, app: &AppDefinition, s: &TextState, a: &Action, _: &str) -> Result<TextState, WorldModelError> {
        let (next, _) = step(app, &s.env, a).map_err(|e| WorldModelError::Step(e.to_string()))?;
        Ok(TextState::from_env(app, next))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictRequest {
    pub app_id: String,
    pub state: TextState,
    pub action: Action,
    pub instruction: String,
}

pub fn parse_world_model_response(body: &str) -> Result<TextState, WorldModelError> {
    serde_json::from_str(body).map_err(|e| WorldModelError::Response(e.to_string()))
}

/// Remote next-state predictor. The initial state is the app's reset state;
/// only transitions are delegated.
pub struct ExternalWorldModel {
    pub transport: Box<dyn Transport>,
    pub retry: RetryPolicy,
}

impl WorldModel for ExternalWorldModel {
    fn init(&self, app: &AppDefinition) -> Result<TextState, WorldModelError> {
        TrueSimWorldModel.init(app)
    }

    fn predict(&self, app: &AppDefinition, s: &TextState, a: &Action, q: &str) -> Result<TextState, WorldModelError> {
        let req =
            PredictRequest { app_id: app.app_id.clone(), state: s.clone(), action: a.clone(), instruction: q.into() };
        let body = serde_json::to_string(&req).expect("request serializes");
        let reply = post_with_retry(self.transport.as_ref(), &body, self.retry)
            .map_err(|e| WorldModelError::Transport(e.to_string()))?;
        let next = parse_world_model_response(&reply)?;
        if next.env.app_id != app.app_id || app.screen(&next.env.screen_id).is_none() {
            return Err(WorldModelError::Response(format!("unknown screen {}", next.env.screen_id)));
        }
        Ok(next)
    }
}
