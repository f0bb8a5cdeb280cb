//! Wire types of the `/v1` API.

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use restorekit_core::agents::{AgentError, FeedbackVerdict, PromptClassification};
use restorekit_core::orchestrator::{
    DecisionSource, EngineError, FinishReason, Route, Session, SessionConfig, Status, StepRecord,
};
use restorekit_core::tools::Family;
use restorekit_core::{ContentHash, ToolId};
use serde::{Deserialize, Serialize};

use crate::eventstore::SessionMeta;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiStep {
    pub index: u32,
    pub route: Route,
    pub tool: ToolId,
    pub family: Family,
    pub source: DecisionSource,
    pub pre: ContentHash,
    pub post: ContentHash,
    pub feedback: Option<FeedbackVerdict>,
    pub agent_ms: f64,
    pub tool_ms: f64,
    pub feedback_ms: f64,
}

impl From<&StepRecord> for ApiStep {
    fn from(s: &StepRecord) -> Self {
        ApiStep {
            index: s.index,
            route: s.route,
            tool: s.tool,
            family: s.family,
            source: s.source.clone(),
            pre: s.pre.id,
            post: s.post.id,
            feedback: s.feedback.clone(),
            agent_ms: s.agent_ms,
            tool_ms: s.tool_ms,
            feedback_ms: s.feedback_ms,
        }
    }
}

/// What clients see of a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiSession {
    pub id: String,
    pub status: Status,
    pub route: Route,
    pub finish_reason: Option<FinishReason>,
    pub pending_human: bool,
    pub pending_reason: Option<FinishReason>,
    pub prompt: String,
    pub config: SessionConfig,
    pub input: ContentHash,
    pub current: ContentHash,
    /// Clean reference of an upload that came with provenance.
    pub clean_ref: Option<ContentHash>,
    pub classification: Option<PromptClassification>,
    pub steps: Vec<ApiStep>,
    pub failed_steps: u32,
    pub budget: u32,
    pub used_steps: u32,
    /// Key for the next `advance` call.
    pub next_step: u32,
    pub overrides: u32,
    pub clean: Option<bool>,
    pub agent_calls: u32,
    pub tool_calls: u32,
    pub ait_ms: f64,
    pub tool_ms: f64,
    pub created_at_ms: u64,
    pub updated_at_ms: u64,
    pub last_seq: u64,
    pub profile: String,
    pub fingerprint: String,
    pub auto_advance: bool,
}

/// Index of the transition the next advance performs: 0 routes the
/// session, `n` runs its n-th step attempt.
pub fn next_step(s: &Session) -> u32 {
    if s.route == Route::Unrouted {
        0
    } else {
        s.used_steps() + 1
    }
}

pub fn project(s: &Session, meta: &SessionMeta) -> ApiSession {
    ApiSession {
        id: s.id.clone(),
        status: s.status,
        route: s.route,
        finish_reason: s.finish_reason,
        pending_human: s.status == Status::AwaitingHuman,
        pending_reason: s.pending_reason,
        prompt: s.prompt.clone(),
        config: s.config,
        input: s.input.id,
        current: s.current.id,
        clean_ref: s.input.provenance.as_ref().map(|p| p.clean),
        classification: s.classification.clone(),
        steps: s.steps.iter().map(ApiStep::from).collect(),
        failed_steps: s.failed_steps,
        budget: s.budget(),
        used_steps: s.used_steps(),
        next_step: next_step(s),
        overrides: s.overrides,
        clean: s.clean,
        agent_calls: s.agent_calls,
        tool_calls: s.tool_calls,
        ait_ms: s.ait_ms,
        tool_ms: s.tool_ms,
        created_at_ms: s.created_at_ms,
        updated_at_ms: s.updated_at_ms,
        last_seq: s.last_seq,
        profile: meta.profile.clone(),
        fingerprint: meta.fingerprint.clone(),
        auto_advance: meta.auto_advance,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvanceResponse {
    /// False when the `step` key was stale and nothing ran.
    pub applied: bool,
    pub session: ApiSession,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError { status, code, message: message.into() }
    }

    pub fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }

    pub fn not_found(what: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("{what} not found"))
    }

    pub fn internal(code: &'static str, message: impl ToString) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, code, message.to_string())
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        match &e {
            EngineError::InvalidStatus { .. } => ApiError::new(StatusCode::CONFLICT, "invalid_status", e.to_string()),
            EngineError::Config(_) => ApiError::bad_request("invalid_config", e.to_string()),
            EngineError::Agent(AgentError::EmptyPrompt) => ApiError::bad_request("empty_prompt", e.to_string()),
            EngineError::Agent(_) => ApiError::new(StatusCode::BAD_GATEWAY, "agent_error", e.to_string()),
            EngineError::Store(_) => ApiError::internal("store_error", e),
            EngineError::Replay(_) => ApiError::internal("replay_error", e),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody { code: self.code.into(), message: self.message };
        (self.status, Json(body)).into_response()
    }
}
