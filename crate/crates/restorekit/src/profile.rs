//! Resolves a configuration into concrete backends and an engine.

use std::sync::Arc;

use restorekit_core::agents::{
    FastAgent, FastBackend, FeedbackAgent, FeedbackBackend, IdentifyBackend, NeverClean, OracleFast, OracleFeedback,
    OracleIdentify, PromptOutcome, RuleFast, StubIdentify,
};
use restorekit_core::datagen::build_prompt_corpus;
use restorekit_core::degrade::Degrader;
use restorekit_core::orchestrator::{Clock, Engine, ImageStore};
use restorekit_core::tools::{SimulatorConfig, Simulator, ToolRegistry};
use restorekit_core::{ContentHash, DistortionKind, ToolId};
use serde::Serialize;

use crate::codec;
use crate::config::{AgentBackend, Config, ConfigError, Profile, RemoteConfig, ToolFamily};
use crate::remote::{HttpRetry, RemoteFast, RemoteFeedback, RemoteIdentify, RemoteTool};

/// Everything that decides backend behaviour, hashed into the fingerprint.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolved {
    pub profile: Profile,
    pub fast: AgentBackend,
    pub slow: AgentBackend,
    pub feedback: AgentBackend,
    pub tools: ToolFamily,
    pub stub_p: f64,
    pub stub_seed: u64,
    pub simulator: SimulatorConfig,
    pub hevc: Option<String>,
    pub vvc: Option<String>,
    pub agents_url: Option<String>,
    pub tools_url: Option<String>,
}

impl Resolved {
    pub fn fingerprint(&self) -> String {
        ContentHash::of_bytes(&serde_json::to_vec(self).expect("resolved profile serializes")).to_hex()
    }
}

pub struct Backends {
    pub fast: Arc<dyn FastBackend>,
    pub identify: Arc<dyn IdentifyBackend>,
    pub feedback: Arc<dyn FeedbackBackend>,
    pub tools: ToolRegistry,
    pub degrader: Degrader,
    pub resolved: Resolved,
}

fn defaults(profile: Profile) -> (AgentBackend, AgentBackend, AgentBackend, ToolFamily) {
    match profile {
        Profile::Oracle => (AgentBackend::Oracle, AgentBackend::Oracle, AgentBackend::Oracle, ToolFamily::Simulated),
        Profile::Stub => (AgentBackend::Rule, AgentBackend::Stub, AgentBackend::Oracle, ToolFamily::Simulated),
        Profile::Remote => (AgentBackend::Remote, AgentBackend::Remote, AgentBackend::Remote, ToolFamily::Remote),
    }
}

fn http(cfg: &RemoteConfig, what: &str) -> Result<HttpRetry, ConfigError> {
    HttpRetry::new(cfg).map_err(|e| ConfigError::Invalid(format!("{what}: {e}")))
}

fn unsupported(role: &str, b: AgentBackend) -> ConfigError {
    ConfigError::Invalid(format!("agents.{role}.backend = {b:?} is not available for that role"))
}

/// Labels of the built-in prompt corpus, for the labelled FastAgent oracle.
pub fn corpus_labels(seed: u64) -> Vec<(String, Option<ToolId>)> {
    build_prompt_corpus(seed)
        .into_iter()
        .map(|r| {
            let tool = match r.label {
                PromptOutcome::Direct { tool } => Some(tool),
                PromptOutcome::Ambiguous => None,
            };
            (r.prompt, tool)
        })
        .collect()
}

impl Backends {
    /// `codec_proxy` lets HEVC/VVC fall back to the in-process transform
    /// stand-ins when no encoder binary is configured.
    pub fn from_config(cfg: &Config, codec_proxy: bool) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let (df, ds, dfb, dt) = defaults(cfg.backends.profile);
        let fast_b = cfg.agents.fast.backend.unwrap_or(df);
        let slow_b = cfg.agents.slow.backend.unwrap_or(ds);
        let feedback_b = cfg.agents.feedback.backend.unwrap_or(dfb);
        let family = cfg.tools.family.unwrap_or(dt);

        let fast: Arc<dyn FastBackend> = match fast_b {
            AgentBackend::Rule => Arc::new(RuleFast),
            AgentBackend::Oracle => Arc::new(OracleFast::new(corpus_labels(cfg.stub.seed))),
            AgentBackend::Remote => {
                Arc::new(RemoteFast::new(http(&cfg.agents.remote, "agents.remote")?, cfg.agents.remote.confidence_threshold))
            }
            b => return Err(unsupported("fast", b)),
        };
        let identify: Arc<dyn IdentifyBackend> = match slow_b {
            AgentBackend::Oracle => Arc::new(OracleIdentify::default()),
            AgentBackend::Stub => Arc::new(StubIdentify::new(cfg.stub.p, cfg.stub.seed)),
            AgentBackend::Remote => Arc::new(RemoteIdentify::new(http(&cfg.agents.remote, "agents.remote")?)),
            b => return Err(unsupported("slow", b)),
        };
        let feedback: Arc<dyn FeedbackBackend> = match feedback_b {
            AgentBackend::Oracle => Arc::new(OracleFeedback),
            AgentBackend::Never => Arc::new(NeverClean),
            AgentBackend::Remote => Arc::new(RemoteFeedback::new(http(&cfg.agents.remote, "agents.remote")?)),
            b => return Err(unsupported("feedback", b)),
        };

        let degrader = codec::degrader(cfg, codec_proxy);
        let sim = Arc::new(Simulator::new(cfg.simulator, degrader.clone()));
        let tools = match family {
            ToolFamily::Simulated => ToolRegistry::simulated(sim),
            ToolFamily::Classical => ToolRegistry::classical_then_simulated(cfg.classical, sim),
            ToolFamily::Remote => {
                let h = http(&cfg.tools.remote, "tools.remote")?;
                let mut reg = ToolRegistry::simulated(sim);
                for id in ToolId::all() {
                    reg.prepend(Arc::new(RemoteTool::new(id, h.clone())));
                }
                reg
            }
        };
        let agents_url = [fast_b, slow_b, feedback_b]
            .contains(&AgentBackend::Remote)
            .then(|| cfg.agents.remote.base_url.clone())
            .flatten();
        let resolved = Resolved {
            profile: cfg.backends.profile,
            fast: fast_b,
            slow: slow_b,
            feedback: feedback_b,
            tools: family,
            stub_p: cfg.stub.p,
            stub_seed: cfg.stub.seed,
            simulator: cfg.simulator,
            hevc: degrader.codec_name(DistortionKind::Hevc),
            vvc: degrader.codec_name(DistortionKind::Vvc),
            agents_url,
            tools_url: (family == ToolFamily::Remote).then(|| cfg.tools.remote.base_url.clone()).flatten(),
        };
        Ok(Backends { fast, identify, feedback, tools, degrader, resolved })
    }

    pub fn engine(&self, store: Arc<dyn ImageStore>, clock: Arc<dyn Clock>) -> Engine {
        Engine::new(
            FastAgent::new(self.fast.clone()),
            self.identify.clone(),
            FeedbackAgent::new(self.feedback.clone()),
            self.tools.clone(),
            store,
        )
        .with_clock(clock)
    }
}

/// Wall-clock timestamps and a monotonic microsecond counter.
#[derive(Debug)]
pub struct SystemClock {
    origin: std::time::Instant,
}

impl Default for SystemClock {
    fn default() -> Self {
        SystemClock { origin: std::time::Instant::now() }
    }
}

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
    }

    fn monotonic_us(&self) -> u64 {
        self.origin.elapsed().as_micros() as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use restorekit_core::tools::Family;

    #[test]
    fn profiles_pick_their_backends() {
        let b = Backends::from_config(&Config::default(), false).unwrap();
        assert_eq!((b.resolved.fast, b.resolved.slow, b.resolved.feedback), (AgentBackend::Oracle, AgentBackend::Oracle, AgentBackend::Oracle));
        assert_eq!(b.fast.name(), "oracle");
        assert_eq!(b.identify.name(), "oracle");
        assert!(b.resolved.hevc.is_none());

        let mut cfg = Config::default();
        cfg.backends.profile = Profile::Stub;
        cfg.tools.family = Some(ToolFamily::Classical);
        let b = Backends::from_config(&cfg, true).unwrap();
        assert_eq!(b.identify.name(), "stub");
        assert_eq!(b.tools.families(ToolId::for_kind(DistortionKind::Haze)), [Family::Classical, Family::Simulated]);
        assert_eq!(b.resolved.hevc.as_deref(), Some("hevc-transform-proxy"));
    }

    #[test]
    fn remote_profile_needs_urls() {
        let mut cfg = Config::default();
        cfg.backends.profile = Profile::Remote;
        assert!(Backends::from_config(&cfg, false).is_err());
        cfg.agents.remote.base_url = Some("http://127.0.0.1:9".into());
        cfg.tools.remote.base_url = Some("http://127.0.0.1:9".into());
        let b = Backends::from_config(&cfg, false).unwrap();
        assert_eq!(b.tools.families(ToolId::HYBRID), [Family::Remote, Family::Simulated]);
    }

    #[test]
    fn fingerprint_tracks_settings() {
        let a = Backends::from_config(&Config::default(), false).unwrap().resolved;
        let mut cfg = Config::default();
        cfg.stub.p = 0.7;
        let b = Backends::from_config(&cfg, false).unwrap().resolved;
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint(), Backends::from_config(&Config::default(), false).unwrap().resolved.fingerprint());
    }

    #[test]
    fn roles_reject_foreign_backends() {
        let mut cfg = Config::default();
        cfg.agents.fast.backend = Some(AgentBackend::Never);
        assert!(Backends::from_config(&cfg, false).is_err());
    }
}
