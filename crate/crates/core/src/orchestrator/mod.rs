//! The routing state machine and its event-sourced session log.
//!
//! A [`Session`] is a pure fold over its [`Event`]s: the engine only ever
//! appends events, and replaying a log from scratch yields an identical
//! projection. Images are referenced by content address through an
//! [`ImageStore`], so a log plus its blobs is enough to resume a session.

mod engine;
mod store;

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::agents::{FeedbackVerdict, PromptClassification, VoteSet};
use crate::domain::{ContentHash, DistortionInstance, ToolId};
use crate::tools::Family;

pub use engine::{Engine, EngineError, OverrideAction, OverrideOutcome};
pub use store::{Clock, MemoryImageStore, NullClock, SessionIndex, StoreError, ImageStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Unrouted,
    Fast,
    Slow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Running,
    AwaitingHuman,
    Done,
    Failed,
    Aborted,
}

impl Status {
    pub fn is_terminal(self) -> bool {
        matches!(self, Status::Done | Status::Failed | Status::Aborted)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    /// Feedback judged the image clean.
    Clean,
    /// Fast route finished without consulting feedback.
    FastDone,
    BudgetExhausted,
    /// The loop guard gave up.
    Stalled,
    HumanAccept,
    Failed,
    Aborted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    /// Identification votes per slow step; odd.
    pub vote_k: u32,
    pub max_steps: u32,
    /// Ask the FeedbackAgent after a fast-route tool call.
    pub fast_feedback: bool,
    /// Consult the FastAgent at all; off sends every session down the slow
    /// route.
    pub fast_route: bool,
    /// Pause for a human decision instead of finishing.
    pub await_human: bool,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig { vote_k: 5, max_steps: 5, fast_feedback: false, fast_route: true, await_human: false }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.vote_k == 0 || self.vote_k % 2 == 0 {
            return Err(alloc::format!("vote_k must be odd, got {}", self.vote_k));
        }
        if self.max_steps == 0 {
            return Err("max_steps must be at least 1".into());
        }
        Ok(())
    }
}

/// Most continue overrides a session accepts; stop_accept is always allowed.
pub const MAX_OVERRIDES: u32 = 2;

/// Content address of a stored image plus what is needed to rebuild its
/// provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRef {
    pub id: ContentHash,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<ProvenanceRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceRef {
    pub clean: ContentHash,
    pub stack: Vec<DistortionInstance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "agent", rename_all = "snake_case")]
pub enum DecisionSource {
    FastAgent,
    SlowAgent { votes: VoteSet },
    /// De-hybrid forced by the loop guard.
    LoopGuard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub index: u32,
    pub route: Route,
    pub source: DecisionSource,
    pub tool: ToolId,
    pub family: Family,
    pub pre: ImageRef,
    pub post: ImageRef,
    pub feedback: Option<FeedbackVerdict>,
    pub agent_ms: f64,
    pub tool_ms: f64,
    pub feedback_ms: f64,
}

impl StepRecord {
    /// Agent calls made by this step: identification plus feedback.
    pub fn agent_calls(&self) -> u32 {
        u32::from(matches!(self.source, DecisionSource::SlowAgent { .. })) + u32::from(self.feedback.is_some())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailStage {
    Identify,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventKind {
    Received { session_id: String, prompt: String, input: ImageRef, config: SessionConfig },
    Routed { route: Route, classification: Option<PromptClassification>, agent_calls: u32, agent_ms: f64 },
    StepCompleted { step: StepRecord },
    StepFailed {
        index: u32,
        route: Route,
        stage: FailStage,
        tool: Option<ToolId>,
        error: String,
        attempts: Option<u32>,
        agent_calls: u32,
        agent_ms: f64,
        tool_ms: f64,
    },
    ProxyImproved {
        step: u32,
        #[serde(with = "crate::metrics::psnr_serde")]
        psnr_before: f64,
        #[serde(with = "crate::metrics::psnr_serde")]
        psnr_after: f64,
    },
    RouteDemoted { reason: String },
    ForcedHybrid { repeated: ToolId },
    AwaitingHuman { reason: FinishReason },
    HumanAccept,
    HumanContinue,
    OverrideRejected { action: OverrideAction, reason: String },
    Finished { status: Status, reason: FinishReason },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub at_ms: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReplayError {
    #[error("event log is empty")]
    Empty,
    #[error("first event must be `received`")]
    NotReceived,
    #[error("event seq {got} does not follow {last}")]
    OutOfOrder { last: u64, got: u64 },
    #[error("a second `received` event at seq {0}")]
    DuplicateReceived(u64),
}

/// Session projection: everything the event log implies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub prompt: String,
    pub config: SessionConfig,
    pub input: ImageRef,
    /// Latest image (input until a step completes).
    pub current: ImageRef,
    pub route: Route,
    pub status: Status,
    pub finish_reason: Option<FinishReason>,
    pub pending_reason: Option<FinishReason>,
    pub classification: Option<PromptClassification>,
    pub steps: Vec<StepRecord>,
    pub failed_steps: u32,
    pub consecutive_failures: u32,
    pub improved_steps: Vec<u32>,
    pub forced_hybrid: bool,
    /// Continue overrides applied.
    pub overrides: u32,
    pub extra_steps: u32,
    /// Verdict of the latest step, cleared by a continue override.
    pub clean: Option<bool>,
    pub agent_calls: u32,
    pub tool_calls: u32,
    /// Sum of agent and feedback time, routing included; tool time excluded.
    pub ait_ms: f64,
    pub tool_ms: f64,
    pub created_at_ms: u64,
    pub updated_at_ms: u64,
    pub last_seq: u64,
}

impl Session {
    fn from_received(e: &Event) -> Result<Session, ReplayError> {
        let EventKind::Received { session_id, prompt, input, config } = &e.kind else {
            return Err(ReplayError::NotReceived);
        };
        Ok(Session {
            id: session_id.clone(),
            prompt: prompt.clone(),
            config: *config,
            input: input.clone(),
            current: input.clone(),
            route: Route::Unrouted,
            status: Status::Running,
            finish_reason: None,
            pending_reason: None,
            classification: None,
            steps: Vec::new(),
            failed_steps: 0,
            consecutive_failures: 0,
            improved_steps: Vec::new(),
            forced_hybrid: false,
            overrides: 0,
            extra_steps: 0,
            clean: None,
            agent_calls: 0,
            tool_calls: 0,
            ait_ms: 0.0,
            tool_ms: 0.0,
            created_at_ms: e.at_ms,
            updated_at_ms: e.at_ms,
            last_seq: e.seq,
        })
    }

    /// Folds one event into the projection.
    pub fn apply(&mut self, e: &Event) -> Result<(), ReplayError> {
        if e.seq <= self.last_seq {
            return Err(ReplayError::OutOfOrder { last: self.last_seq, got: e.seq });
        }
        match &e.kind {
            EventKind::Received { .. } => return Err(ReplayError::DuplicateReceived(e.seq)),
            EventKind::Routed { route, classification, agent_calls, agent_ms } => {
                self.route = *route;
                self.classification = classification.clone();
                self.agent_calls += agent_calls;
                self.ait_ms += agent_ms;
            }
            EventKind::StepCompleted { step } => {
                self.agent_calls += step.agent_calls();
                self.tool_calls += 1;
                self.ait_ms += step.agent_ms + step.feedback_ms;
                self.tool_ms += step.tool_ms;
                self.consecutive_failures = 0;
                self.clean = step.feedback.as_ref().map(|f| f.clean);
                self.current = step.post.clone();
                self.steps.push(step.clone());
            }
            EventKind::StepFailed { stage, agent_calls, agent_ms, tool_ms, .. } => {
                self.failed_steps += 1;
                self.consecutive_failures += 1;
                self.agent_calls += agent_calls;
                self.tool_calls += u32::from(*stage == FailStage::Tool);
                self.ait_ms += agent_ms;
                self.tool_ms += tool_ms;
            }
            EventKind::ProxyImproved { step, .. } => self.improved_steps.push(*step),
            EventKind::RouteDemoted { .. } => self.route = Route::Slow,
            EventKind::ForcedHybrid { .. } => self.forced_hybrid = true,
            EventKind::AwaitingHuman { reason } => {
                self.status = Status::AwaitingHuman;
                self.pending_reason = Some(*reason);
            }
            EventKind::HumanAccept => {}
            EventKind::HumanContinue => {
                self.overrides += 1;
                self.extra_steps += 1;
                self.status = Status::Running;
                self.route = Route::Slow;
                self.clean = None;
                self.pending_reason = None;
            }
            EventKind::OverrideRejected { .. } => {}
            EventKind::Finished { status, reason } => {
                self.status = *status;
                self.finish_reason = Some(*reason);
                self.pending_reason = None;
            }
        }
        self.last_seq = e.seq;
        self.updated_at_ms = e.at_ms;
        Ok(())
    }

    /// Step budget: `max_steps` plus one per continue override.
    pub fn budget(&self) -> u32 {
        self.config.max_steps + self.extra_steps
    }

    /// Steps used against the budget, failed attempts included.
    pub fn used_steps(&self) -> u32 {
        self.steps.len() as u32 + self.failed_steps
    }

    /// Tools of the completed steps, in order.
    pub fn history(&self) -> Vec<ToolId> {
        self.steps.iter().map(|s| s.tool).collect()
    }
}

/// A session projection with the events that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionLog {
    pub session: Session,
    pub events: Vec<Event>,
}

impl SessionLog {
    pub fn replay(events: &[Event]) -> Result<SessionLog, ReplayError> {
        let (first, rest) = events.split_first().ok_or(ReplayError::Empty)?;
        let mut session = Session::from_received(first)?;
        for e in rest {
            session.apply(e)?;
        }
        Ok(SessionLog { session, events: events.to_vec() })
    }

    pub(crate) fn begin(event: Event) -> Result<SessionLog, ReplayError> {
        let session = Session::from_received(&event)?;
        Ok(SessionLog { session, events: alloc::vec![event] })
    }

    pub(crate) fn push(&mut self, at_ms: u64, kind: EventKind) {
        let e = Event { seq: self.session.last_seq + 1, at_ms, kind };
        self.session.apply(&e).expect("engine emits well-formed events");
        self.events.push(e);
    }
}
