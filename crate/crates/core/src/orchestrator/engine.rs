use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use super::store::{Clock, ImageStore, NullClock, StoreError};
use super::{
    DecisionSource, Event, EventKind, FailStage, FinishReason, ReplayError, Route, SessionConfig, SessionLog,
    Status, StepRecord, MAX_OVERRIDES,
};
use crate::agents::{AgentError, FastAgent, FeedbackAgent, IdentifyBackend, SlowAgent};
use crate::domain::{ImageState, ToolId};
use crate::metrics;
use crate::tools::ToolRegistry;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EngineError {
    #[error("cannot {op} a session that is {status:?}")]
    InvalidStatus { op: &'static str, status: Status },
    #[error("invalid session config: {0}")]
    Config(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverrideAction {
    StopAccept,
    Continue,
}

impl FromStr for OverrideAction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "stop_accept" => Ok(OverrideAction::StopAccept),
            "continue" => Ok(OverrideAction::Continue),
            other => Err(alloc::format!("unknown override action `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OverrideOutcome {
    Applied,
    /// Over the cap; the rejection is still logged.
    Rejected,
}

/// Drives sessions one transition at a time. All state lives in the
/// [`SessionLog`] the caller passes in; the engine only appends to it.
#[derive(Clone)]
pub struct Engine {
    pub fast: FastAgent,
    pub identify: Arc<dyn IdentifyBackend>,
    pub feedback: FeedbackAgent,
    pub tools: ToolRegistry,
    pub store: Arc<dyn ImageStore>,
    pub clock: Arc<dyn Clock>,
}

impl Engine {
    pub fn new(
        fast: FastAgent,
        identify: Arc<dyn IdentifyBackend>,
        feedback: FeedbackAgent,
        tools: ToolRegistry,
        store: Arc<dyn ImageStore>,
    ) -> Self {
        Engine { fast, identify, feedback, tools, store, clock: Arc::new(NullClock) }
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    fn emit(&self, log: &mut SessionLog, kind: EventKind) {
        log.push(self.clock.now_ms(), kind);
    }

    fn timed<T>(&self, f: impl FnOnce() -> T) -> (T, f64) {
        let t0 = self.clock.monotonic_us();
        let out = f();
        let dt = self.clock.monotonic_us().saturating_sub(t0);
        (out, dt as f64 / 1000.0)
    }

    pub fn start(
        &self,
        id: impl Into<String>,
        image: &ImageState,
        prompt: &str,
        config: SessionConfig,
    ) -> Result<SessionLog, EngineError> {
        if prompt.trim().is_empty() {
            return Err(AgentError::EmptyPrompt.into());
        }
        config.validate().map_err(EngineError::Config)?;
        let input = self.store.put(image)?;
        let kind = EventKind::Received { session_id: id.into(), prompt: prompt.into(), input, config };
        Ok(SessionLog::begin(Event { seq: 1, at_ms: self.clock.now_ms(), kind })?)
    }

    /// Exactly one transition of a running session.
    pub fn advance(&self, log: &mut SessionLog) -> Result<(), EngineError> {
        let status = log.session.status;
        if status != Status::Running {
            return Err(EngineError::InvalidStatus { op: "advance", status });
        }
        match log.session.route {
            Route::Unrouted => self.route(log),
            Route::Fast => self.fast_step(log),
            Route::Slow => self.slow_step(log),
        }
    }

    /// Advances until the session is no longer running.
    pub fn run_to_completion(&self, log: &mut SessionLog) -> Result<(), EngineError> {
        while log.session.status == Status::Running {
            self.advance(log)?;
        }
        Ok(())
    }

    pub fn human_override(&self, log: &mut SessionLog, action: OverrideAction) -> Result<OverrideOutcome, EngineError> {
        let status = log.session.status;
        if !matches!(status, Status::Running | Status::AwaitingHuman) {
            return Err(EngineError::InvalidStatus { op: "override", status });
        }
        if action == OverrideAction::Continue && log.session.overrides >= MAX_OVERRIDES {
            let reason = alloc::format!("at most {MAX_OVERRIDES} continue overrides per session");
            self.emit(log, EventKind::OverrideRejected { action, reason });
            return Ok(OverrideOutcome::Rejected);
        }
        match action {
            OverrideAction::StopAccept => {
                self.emit(log, EventKind::HumanAccept);
                self.emit(log, EventKind::Finished { status: Status::Done, reason: FinishReason::HumanAccept });
            }
            OverrideAction::Continue => self.emit(log, EventKind::HumanContinue),
        }
        Ok(OverrideOutcome::Applied)
    }

    pub fn abort(&self, log: &mut SessionLog) -> Result<(), EngineError> {
        let status = log.session.status;
        if status.is_terminal() {
            return Err(EngineError::InvalidStatus { op: "abort", status });
        }
        self.emit(log, EventKind::Finished { status: Status::Aborted, reason: FinishReason::Aborted });
        Ok(())
    }

    fn route(&self, log: &mut SessionLog) -> Result<(), EngineError> {
        let kind = if log.session.config.fast_route {
            let (c, ms) = self.timed(|| self.fast.classify(&log.session.prompt));
            let c = c?;
            let route = if c.tool().is_some() { Route::Fast } else { Route::Slow };
            EventKind::Routed { route, classification: Some(c), agent_calls: 1, agent_ms: ms }
        } else {
            EventKind::Routed { route: Route::Slow, classification: None, agent_calls: 0, agent_ms: 0.0 }
        };
        self.emit(log, kind);
        Ok(())
    }

    fn fast_step(&self, log: &mut SessionLog) -> Result<(), EngineError> {
        let Some(tool) = log.session.classification.as_ref().and_then(|c| c.tool()) else {
            self.emit(log, EventKind::RouteDemoted { reason: "no direct tool".into() });
            return Ok(());
        };
        let pre_ref = log.session.current.clone();
        let pre = self.store.get(&pre_ref)?;
        let index = log.session.used_steps() + 1;
        let (res, tool_ms) = self.timed(|| self.tools.invoke(tool, &pre));
        let inv = match res {
            Ok(inv) => inv,
            Err(e) => {
                self.emit(log, EventKind::StepFailed {
                    index,
                    route: Route::Fast,
                    stage: FailStage::Tool,
                    tool: Some(tool),
                    error: e.to_string(),
                    attempts: e.attempts(),
                    agent_calls: 0,
                    agent_ms: 0.0,
                    tool_ms,
                });
                if !self.after_failure(log) {
                    self.emit(log, EventKind::RouteDemoted { reason: "fast tool failed".into() });
                }
                return Ok(());
            }
        };
        let post_ref = self.store.put(&inv.image)?;
        let (feedback, feedback_ms) = if log.session.config.fast_feedback {
            let mut history = log.session.history();
            history.push(tool);
            let (v, ms) = self.timed(|| self.feedback.assess_ref(&inv.image, &post_ref.id, &history));
            (Some(v), ms)
        } else {
            (None, 0.0)
        };
        let clean = feedback.as_ref().map(|f| f.clean);
        let step = StepRecord {
            index,
            route: Route::Fast,
            source: DecisionSource::FastAgent,
            tool,
            family: inv.family,
            pre: pre_ref,
            post: post_ref,
            feedback,
            agent_ms: 0.0,
            tool_ms,
            feedback_ms,
        };
        self.emit(log, EventKind::StepCompleted { step });
        self.note_improvement(log, index, &pre, &inv.image);
        match clean {
            None => self.finish(log, FinishReason::FastDone),
            Some(true) => self.finish(log, FinishReason::Clean),
            Some(false) if log.session.used_steps() >= log.session.budget() => {
                self.finish(log, FinishReason::BudgetExhausted)
            }
            Some(false) => self.emit(log, EventKind::RouteDemoted { reason: "feedback: not clean".into() }),
        }
        Ok(())
    }

    fn slow_step(&self, log: &mut SessionLog) -> Result<(), EngineError> {
        let s = &log.session;
        if s.used_steps() >= s.budget() {
            self.finish(log, FinishReason::BudgetExhausted);
            return Ok(());
        }
        let mut forced = false;
        let slow: Vec<&StepRecord> = s.steps.iter().filter(|st| st.route == Route::Slow).collect();
        if let [.., a, b] = slow[..] {
            // a repeated de-hybrid has nothing to force; the budget bounds it
            if a.tool == b.tool && b.tool != ToolId::HYBRID && !s.improved_steps.contains(&b.index) {
                if s.forced_hybrid || !self.tools.contains(ToolId::HYBRID) {
                    self.finish(log, FinishReason::Stalled);
                    return Ok(());
                }
                let repeated = b.tool;
                self.emit(log, EventKind::ForcedHybrid { repeated });
                forced = true;
            }
        }

        let pre_ref = log.session.current.clone();
        let pre = self.store.get(&pre_ref)?;
        let index = log.session.used_steps() + 1;
        let fail = |log: &mut SessionLog, stage, tool, error: String, attempts, agent_calls, agent_ms, tool_ms| {
            self.emit(log, EventKind::StepFailed {
                index,
                route: Route::Slow,
                stage,
                tool,
                error,
                attempts,
                agent_calls,
                agent_ms,
                tool_ms,
            });
            self.after_failure(log);
        };

        let (source, tool, agent_ms) = if forced {
            (DecisionSource::LoopGuard, ToolId::HYBRID, 0.0)
        } else {
            let agent = SlowAgent::new(self.identify.clone(), log.session.config.vote_k)?;
            let (res, ms) = self.timed(|| agent.identify_ref(&pre, &pre_ref.id));
            let identified = res.map_err(|e| e.to_string()).and_then(|votes| match ToolId::try_from(votes.winner) {
                Ok(tool) => Ok((votes, tool)),
                Err(e) => Err(e.to_string()),
            });
            match identified {
                Ok((votes, tool)) => (DecisionSource::SlowAgent { votes }, tool, ms),
                Err(error) => {
                    fail(log, FailStage::Identify, None, error, None, 1, ms, 0.0);
                    return Ok(());
                }
            }
        };
        let agent_calls = u32::from(!forced);

        let (res, tool_ms) = self.timed(|| self.tools.invoke(tool, &pre));
        let inv = match res {
            Ok(inv) => inv,
            Err(e) => {
                fail(log, FailStage::Tool, Some(tool), e.to_string(), e.attempts(), agent_calls, agent_ms, tool_ms);
                return Ok(());
            }
        };
        let post_ref = self.store.put(&inv.image)?;
        let mut history = log.session.history();
        history.push(tool);
        let (verdict, feedback_ms) = self.timed(|| self.feedback.assess_ref(&inv.image, &post_ref.id, &history));
        let clean = verdict.clean;
        let step = StepRecord {
            index,
            route: Route::Slow,
            source,
            tool,
            family: inv.family,
            pre: pre_ref,
            post: post_ref,
            feedback: Some(verdict),
            agent_ms,
            tool_ms,
            feedback_ms,
        };
        self.emit(log, EventKind::StepCompleted { step });
        self.note_improvement(log, index, &pre, &inv.image);
        if clean {
            self.finish(log, FinishReason::Clean);
        } else if log.session.used_steps() >= log.session.budget() {
            self.finish(log, FinishReason::BudgetExhausted);
        }
        Ok(())
    }

    /// Ends the session after a failed step when warranted. Returns whether
    /// it did.
    fn after_failure(&self, log: &mut SessionLog) -> bool {
        if log.session.consecutive_failures >= 2 {
            self.emit(log, EventKind::Finished { status: Status::Failed, reason: FinishReason::Failed });
            return true;
        }
        if log.session.used_steps() >= log.session.budget() {
            self.finish(log, FinishReason::BudgetExhausted);
            return true;
        }
        false
    }

    fn finish(&self, log: &mut SessionLog, reason: FinishReason) {
        if log.session.config.await_human {
            self.emit(log, EventKind::AwaitingHuman { reason });
        } else {
            self.emit(log, EventKind::Finished { status: Status::Done, reason });
        }
    }

    /// Logs a PSNR-to-clean gain when both images carry the same reference.
    fn note_improvement(&self, log: &mut SessionLog, step: u32, pre: &ImageState, post: &ImageState) {
        let (Some(a), Some(b)) = (&pre.provenance, &post.provenance) else { return };
        if a.clean_ref != b.clean_ref {
            return;
        }
        let (Ok(before), Ok(after)) = (metrics::psnr(&a.clean, &pre.raster), metrics::psnr(&a.clean, &post.raster)) else {
            return;
        };
        if after > before {
            self.emit(log, EventKind::ProxyImproved { step, psnr_before: before, psnr_after: after });
        }
    }
}
