//! Ground-truth and stochastic backends. The oracles read the provenance
//! stack; the stub is an oracle that lies at a controlled rate.

use alloc::collections::BTreeMap;
use alloc::string::String;

use rand::Rng;

use super::{AgentError, FastBackend, FeedbackBackend, IdentifyBackend, PromptClassification};
use crate::domain::{ContentHash, DistortionKind, ImageState, ToolId};
use crate::rng;

/// Reads the true kind from provenance: two or more originals are `hybrid`,
/// one is that kind. With hybrid disabled it names the most recently applied
/// original instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleIdentify {
    pub hybrid_enabled: bool,
}

impl Default for OracleIdentify {
    fn default() -> Self {
        OracleIdentify { hybrid_enabled: true }
    }
}

impl OracleIdentify {
    pub fn single_only() -> Self {
        OracleIdentify { hybrid_enabled: false }
    }

    pub fn truth(&self, image: &ImageState) -> Option<DistortionKind> {
        let p = image.provenance.as_ref()?;
        let originals = p.original_kinds();
        Some(match (originals.len(), self.hybrid_enabled) {
            (1, _) => originals[0],
            (_, true) => DistortionKind::Hybrid,
            (0, false) => DistortionKind::Noise,
            (_, false) => *originals.last().expect("non-empty"),
        })
    }
}

impl IdentifyBackend for OracleIdentify {
    fn name(&self) -> &str {
        if self.hybrid_enabled {
            "oracle"
        } else {
            "oracle-single"
        }
    }

    fn sample(&self, image: &ImageState, _: &ContentHash, _: u32) -> Result<DistortionKind, AgentError> {
        self.truth(image).ok_or_else(|| AgentError::MissingProvenance { backend: self.name().into() })
    }
}

/// Returns the oracle's answer with probability `p`, otherwise a uniform
/// draw from the confusions (the other single kinds). Each draw is seeded
/// from `(seed, image_ref, sample)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StubIdentify {
    pub p: f64,
    pub seed: u64,
    pub oracle: OracleIdentify,
}

impl StubIdentify {
    pub fn new(p: f64, seed: u64) -> Self {
        StubIdentify { p, seed, oracle: OracleIdentify::default() }
    }

    /// One draw for a known truth.
    pub fn draw(&self, truth: DistortionKind, image_ref: &ContentHash, sample: u32) -> DistortionKind {
        let key = u64::from_le_bytes(image_ref.0[..8].try_into().expect("8 bytes"));
        let mut g = rng::rng(rng::derive_all(self.seed, &[key, sample as u64]));
        if g.random_bool(self.p.clamp(0.0, 1.0)) {
            return truth;
        }
        let confusions = DistortionKind::SINGLE.iter().copied().filter(|&k| k != truth);
        let n = if truth.is_single() { 9 } else { 10 };
        confusions.clone().nth(g.random_range(0..n)).expect("index in range")
    }
}

impl IdentifyBackend for StubIdentify {
    fn name(&self) -> &str {
        "stub"
    }

    fn sample(&self, image: &ImageState, image_ref: &ContentHash, sample: u32) -> Result<DistortionKind, AgentError> {
        let truth = self.oracle.truth(image).ok_or_else(|| AgentError::MissingProvenance { backend: "stub".into() })?;
        Ok(self.draw(truth, image_ref, sample))
    }
}

/// Clean exactly when no original distortion is left on the stack; residual
/// and artifact layers do not count.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleFeedback;

impl FeedbackBackend for OracleFeedback {
    fn name(&self) -> &str {
        "oracle"
    }

    fn assess(&self, image: &ImageState, _: &ContentHash, _: &[ToolId]) -> Result<bool, AgentError> {
        let p = image.provenance.as_ref().ok_or_else(|| AgentError::MissingProvenance { backend: "oracle".into() })?;
        Ok(p.originals().next().is_none())
    }
}

/// Adversarial feedback that never declares an image clean.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeverClean;

impl FeedbackBackend for NeverClean {
    fn name(&self) -> &str {
        "never-clean"
    }

    fn assess(&self, _: &ImageState, _: &ContentHash, _: &[ToolId]) -> Result<bool, AgentError> {
        Ok(false)
    }
}

/// Answers from a table of labelled prompts; anything unlisted is Ambiguous.
#[derive(Debug, Clone, Default)]
pub struct OracleFast {
    labels: BTreeMap<String, Option<ToolId>>,
}

impl OracleFast {
    pub fn new(labels: impl IntoIterator<Item = (String, Option<ToolId>)>) -> Self {
        OracleFast { labels: labels.into_iter().collect() }
    }
}

impl FastBackend for OracleFast {
    fn name(&self) -> &str {
        "oracle"
    }

    fn classify(&self, prompt: &str) -> Result<PromptClassification, AgentError> {
        Ok(match self.labels.get(prompt) {
            Some(Some(tool)) => PromptClassification::direct(*tool, 1.0, "labelled direct"),
            Some(None) => PromptClassification::ambiguous(1.0, "labelled ambiguous"),
            None => PromptClassification::ambiguous(0.0, "unlabelled prompt"),
        })
    }
}
