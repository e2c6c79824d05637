//! Prompt rendering, assistant-response grammar, loss spans, think-rate
//! statistics and the desk trajectory tokenizer.

mod prompt;
mod response;
mod spans;
mod tokenizer;

use thiserror::Error;

use crate::metaction::PlanError;

pub use prompt::{
    render_prompt, route_block, teacher_user_prompt, PromptBundle, Task, POLICY_SYSTEM_PROMPT,
    TEACHER_SYSTEM_PROMPT,
};
pub use response::{
    format_think, parse_response, parse_response_lenient, render_response, think_stats,
    AssistantResponse, ThinkStats,
};
pub use spans::{assign_loss_spans, LossPolicy, LossSpan, Provenance, SpanRole, TrainingRecord};
pub use tokenizer::{
    detokenize_traj, fit_coefficients, tokenize_traj, tokenize_traj_clamped, TrajTokens,
    COEFFICIENT_RANGES, TOKEN_LEVELS,
};

pub const META_ACTIONS: &str = "Meta Actions:";
pub const THINKING: &str = "Thinking:";
pub const ACTION: &str = "Action:";
pub const TRAJ_FUTURE_START: &str = "<|traj_future_start|>";
pub const TRAJ_FUTURE_END: &str = "<|traj_future_end|>";
pub const TRAJ_HISTORY_START: &str = "<|traj_history_start|>";
pub const TRAJ_HISTORY: &str = "<|traj_history|>";
pub const TRAJ_HISTORY_END: &str = "<|traj_history_end|>";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CodecError {
    #[error("prompt requests a route but the scene has none")]
    MissingRoute,
    #[error("response has no initial `Meta Actions:` block")]
    MissingInitialPlan,
    #[error("response has no `Action:` block")]
    MissingAction,
    #[error("plan does not parse: {0}")]
    PlanParse(#[from] PlanError),
    #[error("expected 6 trajectory tokens, found {found}")]
    TokenCountMismatch { found: usize },
    #[error("corrected plan without a preceding `Thinking:` block")]
    OrphanCorrection,
    #[error("invalid trajectory token `{0}`")]
    InvalidTokenId(String),
    #[error("coefficient {index} = {value} lies outside [{lo}, {hi}]")]
    OutOfRangeCoefficient {
        index: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("missing marker {0}")]
    MissingMarker(&'static str),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("invalid training record: {0}")]
    InvalidRecord(String),
    #[error("empty corpus")]
    EmptyCorpus,
}
