//! The three agent roles and their in-process backends.
//!
//! Backends implement the narrow `*Backend` traits; the [`FastAgent`],
//! [`SlowAgent`] and [`FeedbackAgent`] wrappers add the behaviour every
//! backend shares: fail-safe handling of backend errors, vote collection
//! with retry, and verdict bookkeeping.

pub mod backends;
pub mod lexicon;
pub mod templates;
pub mod voting;

use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::domain::{ContentHash, DistortionKind, ImageState, ToolId};

pub use backends::{NeverClean, OracleFast, OracleFeedback, OracleIdentify, StubIdentify};
pub use lexicon::RuleFast;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AgentError {
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("vote count k = {0} must be odd and at least 1")]
    InvalidK(u32),
    #[error("{backend} needs an image with degradation provenance")]
    MissingProvenance { backend: String },
    #[error("{backend} failed: {message}")]
    Backend { backend: String, message: String },
    #[error("only {got} of {k} identification samples succeeded; {needed} required")]
    TooFewVotes { got: u32, needed: u32, k: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "lowercase")]
pub enum PromptOutcome {
    Direct { tool: ToolId },
    Ambiguous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptClassification {
    #[serde(flatten)]
    pub outcome: PromptOutcome,
    pub confidence: f64,
    pub rationale: String,
}

impl PromptClassification {
    pub fn direct(tool: ToolId, confidence: f64, rationale: impl Into<String>) -> Self {
        PromptClassification { outcome: PromptOutcome::Direct { tool }, confidence, rationale: rationale.into() }
    }

    pub fn ambiguous(confidence: f64, rationale: impl Into<String>) -> Self {
        PromptClassification { outcome: PromptOutcome::Ambiguous, confidence, rationale: rationale.into() }
    }

    pub fn tool(&self) -> Option<ToolId> {
        match self.outcome {
            PromptOutcome::Direct { tool } => Some(tool),
            PromptOutcome::Ambiguous => None,
        }
    }
}

pub trait FastBackend: Send + Sync {
    fn name(&self) -> &str;
    fn classify(&self, prompt: &str) -> Result<PromptClassification, AgentError>;
}

pub trait IdentifyBackend: Send + Sync {
    fn name(&self) -> &str;
    /// One identification sample. `sample` numbers the draws within a vote.
    fn sample(&self, image: &ImageState, image_ref: &ContentHash, sample: u32) -> Result<DistortionKind, AgentError>;
}

pub trait FeedbackBackend: Send + Sync {
    fn name(&self) -> &str;
    /// True when the image needs no further restoration.
    fn assess(&self, image: &ImageState, image_ref: &ContentHash, history: &[ToolId]) -> Result<bool, AgentError>;
}

#[derive(Clone)]
pub struct FastAgent {
    backend: Arc<dyn FastBackend>,
}

impl FastAgent {
    pub fn new(backend: Arc<dyn FastBackend>) -> Self {
        FastAgent { backend }
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    /// Backend errors come back as Ambiguous, sending the session down the
    /// slow route.
    pub fn classify(&self, prompt: &str) -> Result<PromptClassification, AgentError> {
        if prompt.trim().is_empty() {
            return Err(AgentError::EmptyPrompt);
        }
        Ok(self
            .backend
            .classify(prompt)
            .unwrap_or_else(|e| PromptClassification::ambiguous(0.0, alloc::format!("backend error: {e}"))))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteSet {
    pub k: u32,
    /// Collected samples in request order; shorter than `k` when samples
    /// were dropped after a failed retry.
    pub votes: Vec<DistortionKind>,
    pub winner: DistortionKind,
    pub tie_broken: bool,
    #[serde(default)]
    pub dropped: u32,
}

#[derive(Clone)]
pub struct SlowAgent {
    backend: Arc<dyn IdentifyBackend>,
    k: u32,
}

impl SlowAgent {
    pub fn new(backend: Arc<dyn IdentifyBackend>, k: u32) -> Result<Self, AgentError> {
        if k == 0 || k % 2 == 0 {
            return Err(AgentError::InvalidK(k));
        }
        Ok(SlowAgent { backend, k })
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    pub fn identify(&self, image: &ImageState) -> Result<VoteSet, AgentError> {
        self.identify_ref(image, &image.raster.digest())
    }

    /// Collects `k` samples, retrying each failed sample once and dropping it
    /// if the retry also fails.
    pub fn identify_ref(&self, image: &ImageState, image_ref: &ContentHash) -> Result<VoteSet, AgentError> {
        let mut votes = Vec::with_capacity(self.k as usize);
        let mut last_err = None;
        for i in 0..self.k {
            match self.backend.sample(image, image_ref, i).or_else(|_| self.backend.sample(image, image_ref, i)) {
                Ok(kind) => votes.push(kind),
                Err(e) => last_err = Some(e),
            }
        }
        let needed = self.k.div_ceil(2);
        let got = votes.len() as u32;
        if got < needed {
            // a systematic failure (e.g. no provenance) is more useful than the count
            return Err(match last_err {
                Some(e @ AgentError::MissingProvenance { .. }) => e,
                _ => AgentError::TooFewVotes { got, needed, k: self.k },
            });
        }
        let (winner, tie_broken) = voting::tally(&votes).expect("at least one vote");
        Ok(VoteSet { k: self.k, dropped: self.k - got, votes, winner, tie_broken })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NextStep {
    #[serde(rename = "END")]
    End,
    #[serde(rename = "CALL_SLOWAGENT")]
    CallSlowAgent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackVerdict {
    pub clean: bool,
    pub next: NextStep,
    pub history_seen: Vec<ToolId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
}

impl FeedbackVerdict {
    pub fn new(clean: bool, history: &[ToolId], rationale: Option<String>) -> Self {
        let next = if clean { NextStep::End } else { NextStep::CallSlowAgent };
        FeedbackVerdict { clean, next, history_seen: history.to_vec(), rationale }
    }
}

#[derive(Clone)]
pub struct FeedbackAgent {
    backend: Arc<dyn FeedbackBackend>,
}

impl FeedbackAgent {
    pub fn new(backend: Arc<dyn FeedbackBackend>) -> Self {
        FeedbackAgent { backend }
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    pub fn assess(&self, image: &ImageState, history: &[ToolId]) -> FeedbackVerdict {
        self.assess_ref(image, &image.raster.digest(), history)
    }

    /// Backend errors yield not-clean, so restoration continues under the
    /// step budget.
    pub fn assess_ref(&self, image: &ImageState, image_ref: &ContentHash, history: &[ToolId]) -> FeedbackVerdict {
        match self.backend.assess(image, image_ref, history) {
            Ok(clean) => FeedbackVerdict::new(clean, history, None),
            Err(e) => FeedbackVerdict::new(false, history, Some(alloc::format!("backend error: {e}"))),
        }
    }

    /// True when the verdict came from the fail-safe path.
    pub fn is_failsafe(v: &FeedbackVerdict) -> bool {
        v.rationale.as_deref().is_some_and(|r| r.starts_with("backend error"))
    }
}

/// A [`AgentError::Backend`] naming the backend.
pub fn backend_error(backend: &str, message: impl ToString) -> AgentError {
    AgentError::Backend { backend: backend.to_string(), message: message.to_string() }
}
