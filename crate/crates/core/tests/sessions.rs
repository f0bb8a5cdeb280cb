//! Orchestrator properties under adversarial backends.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use proptest::prelude::*;
use restorekit_core::agents::{
    backend_error, AgentError, FastAgent, FeedbackAgent, FeedbackBackend, IdentifyBackend, NeverClean, OracleFeedback,
    RuleFast, StubIdentify,
};
use restorekit_core::datagen::synthetic_image;
use restorekit_core::degrade::{sample_hybrid_plan, sample_instance, Degrader, PlanClass};
use restorekit_core::orchestrator::{
    Clock, DecisionSource, Engine, EventKind, MemoryImageStore, OverrideAction, Route, SessionConfig, SessionLog, Status,
};
use restorekit_core::rng;
use restorekit_core::tools::{Simulator, SimulatorConfig, ToolRegistry};
use restorekit_core::{ContentHash, DistortionKind, ImageState, ToolId};

/// Ticks 250 µs on every reading so timings are non-zero and exact.
#[derive(Default)]
struct Ticking(AtomicU64);

impl Clock for Ticking {
    fn now_ms(&self) -> u64 {
        self.0.load(Ordering::Relaxed) / 1000
    }

    fn monotonic_us(&self) -> u64 {
        self.0.fetch_add(250, Ordering::Relaxed)
    }
}

/// Errors on a seeded fraction of calls.
struct Flaky<B> {
    inner: B,
    rate: f64,
    seed: u64,
}

fn coin(seed: u64, r: &ContentHash, n: u64, rate: f64) -> bool {
    let key = u64::from_le_bytes(r.0[..8].try_into().unwrap());
    (rng::derive_all(seed, &[key, n]) as f64 / u64::MAX as f64) < rate
}

impl<B: IdentifyBackend> IdentifyBackend for Flaky<B> {
    fn name(&self) -> &str {
        "flaky"
    }

    fn sample(&self, image: &ImageState, r: &ContentHash, sample: u32) -> Result<DistortionKind, AgentError> {
        if coin(self.seed, r, sample as u64, self.rate) {
            return Err(backend_error("flaky", "injected"));
        }
        self.inner.sample(image, r, sample)
    }
}

struct FlakyFeedback<B> {
    inner: B,
    rate: f64,
    seed: u64,
}

impl<B: FeedbackBackend> FeedbackBackend for FlakyFeedback<B> {
    fn name(&self) -> &str {
        "flaky"
    }

    fn assess(&self, image: &ImageState, r: &ContentHash, history: &[ToolId]) -> Result<bool, AgentError> {
        if coin(self.seed, r, history.len() as u64, self.rate) {
            return Err(backend_error("flaky", "injected"));
        }
        self.inner.assess(image, r, history)
    }
}

#[derive(Debug, Clone)]
struct Case {
    seed: u64,
    p: f64,
    identify_failure: f64,
    feedback_failure: f64,
    never_clean: bool,
    with_hybrid: bool,
    prompt: &'static str,
    config: SessionConfig,
    continues: u32,
}

fn case() -> impl Strategy<Value = Case> {
    (
        any::<u64>(),
        0.0f64..=1.0,
        prop_oneof![Just(0.0), 0.0f64..0.6],
        prop_oneof![Just(0.0), 0.0f64..0.6],
        any::<bool>(),
        any::<bool>(),
        prop::sample::select(vec!["Please fix this image.", "Please remove the grain from this image.", "Remove the haze please."]),
        (prop::sample::select(vec![1u32, 3, 5]), 1u32..=6, any::<bool>(), any::<bool>(), any::<bool>()),
        0u32..=3,
    )
        .prop_map(|(seed, p, fi, ff, never_clean, with_hybrid, prompt, (vote_k, max_steps, fast_feedback, fast_route, await_human), continues)| Case {
            seed,
            p,
            identify_failure: fi,
            feedback_failure: ff,
            never_clean,
            with_hybrid,
            prompt,
            config: SessionConfig { vote_k, max_steps, fast_feedback, fast_route, await_human },
            continues,
        })
}

fn image(seed: u64) -> ImageState {
    let d = Degrader::with_transform_proxies();
    let clean = ImageState::clean(synthetic_image(seed, 40, 56)).unwrap();
    match seed % 3 {
        0 => d.apply(&clean, &sample_instance(DistortionKind::SINGLE[(seed / 3 % 10) as usize], seed).unwrap()).unwrap(),
        1 => d.render(&clean, &sample_hybrid_plan(seed, PlanClass::General)).unwrap(),
        _ => d.render(&clean, &sample_hybrid_plan(seed, PlanClass::WeatherPlus)).unwrap(),
    }
}

fn engine(c: &Case) -> Engine {
    let d = Degrader::with_transform_proxies();
    let mut tools = ToolRegistry::simulated(Arc::new(Simulator::new(SimulatorConfig::default(), d)));
    if !c.with_hybrid {
        tools = tools.without(ToolId::HYBRID);
    }
    let identify = Flaky { inner: StubIdentify::new(c.p, c.seed), rate: c.identify_failure, seed: c.seed ^ 1 };
    let feedback: Arc<dyn FeedbackBackend> = if c.never_clean {
        Arc::new(FlakyFeedback { inner: NeverClean, rate: c.feedback_failure, seed: c.seed ^ 2 })
    } else {
        Arc::new(FlakyFeedback { inner: OracleFeedback, rate: c.feedback_failure, seed: c.seed ^ 2 })
    };
    Engine::new(
        FastAgent::new(Arc::new(RuleFast)),
        Arc::new(identify),
        FeedbackAgent::new(feedback),
        tools,
        Arc::new(MemoryImageStore::new()),
    )
    .with_clock(Arc::new(Ticking::default()))
}

/// Drives a session, answering every pause with `continue` until the
/// allowance is spent and `stop_accept` after that. Returns the number of
/// advance calls and overrides applied.
fn drive(e: &Engine, log: &mut SessionLog, continues: u32) -> (u32, u32) {
    let (mut advances, mut used) = (0, 0);
    loop {
        match log.session.status {
            Status::Running => {
                e.advance(log).unwrap();
                advances += 1;
            }
            Status::AwaitingHuman if used < continues.min(2) => {
                e.human_override(log, OverrideAction::Continue).unwrap();
                used += 1;
            }
            Status::AwaitingHuman => {
                e.human_override(log, OverrideAction::StopAccept).unwrap();
            }
            _ => return (advances, used),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn sessions_terminate_and_replay(c in case()) {
        let e = engine(&c);
        let mut log = e.start("p", &image(c.seed), c.prompt, c.config).unwrap();
        let (advances, continues) = drive(&e, &mut log, c.continues);
        let s = &log.session;

        prop_assert!(s.status.is_terminal());
        prop_assert!(advances <= c.config.max_steps + 2 + 2 * continues, "{advances} advances");
        prop_assert!(s.steps.len() as u32 <= c.config.max_steps + continues);

        prop_assert!(log.events.windows(2).all(|w| w[0].seq < w[1].seq));
        prop_assert_eq!(&SessionLog::replay(&log.events).unwrap(), &log);

        // the fast route makes exactly one tool attempt
        let fast_attempts = log.events.iter().filter(|ev| match &ev.kind {
            EventKind::StepCompleted { step } => step.route == Route::Fast,
            EventKind::StepFailed { route, .. } => *route == Route::Fast,
            _ => false,
        }).count();
        let routed_fast = log.events.iter().any(|ev| matches!(ev.kind, EventKind::Routed { route: Route::Fast, .. }));
        prop_assert_eq!(fast_attempts, usize::from(routed_fast));

        for (n, step) in s.steps.iter().enumerate() {
            if let Some(f) = &step.feedback {
                let expected: Vec<ToolId> = s.steps[..=n].iter().map(|x| x.tool).collect();
                prop_assert_eq!(&f.history_seen, &expected);
            }
        }

        if !c.with_hybrid {
            prop_assert!(s.steps.iter().all(|st| st.tool != ToolId::HYBRID));
        }

        // A.I.T. is routing plus identification plus feedback time, tools excluded
        let routing: f64 = log.events.iter().map(|ev| match &ev.kind {
            EventKind::Routed { agent_ms, .. } => *agent_ms,
            EventKind::StepFailed { agent_ms, .. } => *agent_ms,
            _ => 0.0,
        }).sum();
        let steps: f64 = s.steps.iter().map(|st| st.agent_ms + st.feedback_ms).sum();
        prop_assert!((s.ait_ms - routing - steps).abs() < 1e-9);
        let identify_calls = s.steps.iter().filter(|st| matches!(st.source, DecisionSource::SlowAgent { .. })).count();
        prop_assert!(s.agent_calls as usize >= identify_calls);
    }

    #[test]
    fn never_clean_sessions_end_within_budget(seed in any::<u64>(), max_steps in 1u32..=6, p in 0.0f64..=1.0) {
        let c = Case {
            seed, p, identify_failure: 0.0, feedback_failure: 0.0, never_clean: true, with_hybrid: true,
            prompt: "Please fix this image.", config: SessionConfig { max_steps, ..Default::default() }, continues: 0,
        };
        let e = engine(&c);
        let mut log = e.start("n", &image(seed), c.prompt, c.config).unwrap();
        e.run_to_completion(&mut log).unwrap();
        prop_assert_eq!(log.session.status, Status::Done);
        prop_assert!(log.session.steps.len() as u32 <= max_steps);
    }
}
