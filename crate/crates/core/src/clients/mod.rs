//! Policy and teacher interfaces, deterministic in-process implementations,
//! HTTP clients and the reasoning validator.

mod http;
mod mock;
mod validate;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::TEACHER_SYSTEM_PROMPT;
use crate::metaction::{parse_plan, MetaActionPlan};
use crate::scenelab::Scene;
use crate::trajgeo::{History, Route};

pub use http::{EndpointConfig, HttpPolicy, HttpTeacher};
pub use mock::{MockPolicy, StubTeacher, MOCK_NOISE_PER_TEMPERATURE};
pub use validate::{
    validate_reasoning, ReasoningConstraints, Rejection, Verdict, FORBIDDEN_PHRASES,
    MAX_REASONING_WORDS,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClientError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("request timed out")]
    Timeout,
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("empty response")]
    Empty,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("unknown scene `{0}`")]
    UnknownScene(String),
    #[error("client configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyMode {
    Free,
    Prefilled,
}

impl PolicyMode {
    pub fn name(self) -> &'static str {
        match self {
            PolicyMode::Free => "free",
            PolicyMode::Prefilled => "prefilled",
        }
    }
}

/// What a client sees of a scene: never the expert future or plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenePayload {
    pub scene_id: String,
    pub history: History,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub route: Option<Route>,
    #[serde(default)]
    pub visual_refs: Vec<String>,
}

impl ScenePayload {
    pub fn from_scene(scene: &Scene, include_route: bool) -> Self {
        Self {
            scene_id: scene.id.clone(),
            history: scene.history.clone(),
            route: if include_route {
                scene.route.clone()
            } else {
                None
            },
            visual_refs: vec![
                format!("{}/camera_front_wide_120fov", scene.id),
                format!("{}/camera_front_tele_30fov", scene.id),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRequest {
    pub mode: PolicyMode,
    pub scene: ScenePayload,
    /// Plan text the trajectory must follow; required in prefilled mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<String>,
    pub temperature: f64,
    pub seed: u64,
}

impl PolicyRequest {
    pub fn validate(&self) -> Result<Option<MetaActionPlan>, ClientError> {
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(ClientError::InvalidRequest(format!(
                "temperature {}",
                self.temperature
            )));
        }
        match (self.mode, &self.plan) {
            (PolicyMode::Prefilled, None) => Err(ClientError::InvalidRequest(
                "prefilled request without a plan".into(),
            )),
            (_, Some(text)) => parse_plan(text)
                .map(Some)
                .map_err(|e| ClientError::InvalidRequest(format!("plan: {e}"))),
            (PolicyMode::Free, None) => Ok(None),
        }
    }

    /// Retry key: identical requests share it.
    pub fn idempotency_key(&self) -> String {
        format!("{}:{}:{}", self.scene.scene_id, self.mode.name(), self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherRequest {
    pub scene: ScenePayload,
    pub predicted_plan: String,
    pub expert_plan: String,
    pub system: String,
    pub prompt: String,
    /// Re-ask counter; lets a caller request a fresh candidate.
    #[serde(default)]
    pub attempt: u32,
}

impl TeacherRequest {
    pub fn new(scene: ScenePayload, predicted: &MetaActionPlan, expert: &MetaActionPlan) -> Self {
        let predicted_plan = crate::metaction::render_plan(predicted);
        let expert_plan = crate::metaction::render_plan(expert);
        let prompt = crate::codec::teacher_user_prompt(&predicted_plan, &expert_plan);
        Self {
            scene,
            predicted_plan,
            expert_plan,
            system: TEACHER_SYSTEM_PROMPT.to_string(),
            prompt,
            attempt: 0,
        }
    }

    pub fn plans(&self) -> Result<(MetaActionPlan, MetaActionPlan), ClientError> {
        let parse =
            |t: &str| parse_plan(t).map_err(|e| ClientError::InvalidRequest(format!("plan: {e}")));
        Ok((parse(&self.predicted_plan)?, parse(&self.expert_plan)?))
    }

    pub fn idempotency_key(&self) -> String {
        format!("{}:teacher:{}", self.scene.scene_id, self.attempt)
    }
}

pub trait PolicyClient: Send + Sync {
    /// Raw assistant text for one sample.
    fn call(&self, req: &PolicyRequest) -> Result<String, ClientError>;
}

pub trait TeacherClient: Send + Sync {
    /// One candidate reasoning paragraph; callers validate it.
    fn call(&self, req: &TeacherRequest) -> Result<String, ClientError>;
}

impl<T: PolicyClient + ?Sized> PolicyClient for &T {
    fn call(&self, req: &PolicyRequest) -> Result<String, ClientError> {
        (**self).call(req)
    }
}

impl<T: TeacherClient + ?Sized> TeacherClient for &T {
    fn call(&self, req: &TeacherRequest) -> Result<String, ClientError> {
        (**self).call(req)
    }
}

impl<T: PolicyClient + ?Sized> PolicyClient for Box<T> {
    fn call(&self, req: &PolicyRequest) -> Result<String, ClientError> {
        (**self).call(req)
    }
}

impl<T: TeacherClient + ?Sized> TeacherClient for Box<T> {
    fn call(&self, req: &TeacherRequest) -> Result<String, ClientError> {
        (**self).call(req)
    }
}
