use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use restorekit_core::agents::{voting, FastAgent, FeedbackAgent, OracleIdentify, PromptOutcome, SlowAgent};
use restorekit_core::datagen::build_prompt_corpus;
use restorekit_core::degrade::{sample_instance, HybridPlan, PlanClass};
use restorekit_core::metrics;
use restorekit_core::orchestrator::{Engine, EventKind, MemoryImageStore, SessionConfig, SessionLog};
use restorekit_core::tools::{Simulator, SimulatorConfig};
use restorekit_core::{rng, DistortionKind, ImageState, Provenance, Raster, ToolId};

use super::{mean, pool_crop, published, BenchError, Check, Condition, ExperimentReport, Row, TestCase, TimingReport, TimingRow};
use crate::config::{AgentBackend, Config};
use crate::profile::{Backends, SystemClock};

fn backend(e: impl std::fmt::Display) -> BenchError {
    BenchError::Backend(e.to_string())
}

/// The experiment seed also seeds every seeded backend.
fn seeded(cfg: &Config, seed: u64) -> Config {
    let mut cfg = cfg.clone();
    cfg.stub.seed = seed;
    cfg
}

fn clean_state(clean: &Arc<Raster>) -> Result<ImageState, BenchError> {
    Ok(ImageState::with_provenance((**clean).clone(), Provenance::new(clean.clone(), Vec::new()))?)
}

struct Run {
    log: SessionLog,
    psnr: f64,
    ssim: f64,
}

/// One session to completion on a private in-memory store.
fn run_session(engine: &Engine, id: &str, image: &ImageState, prompt: &str, config: SessionConfig, clean: &Raster) -> Result<Run, BenchError> {
    let mut engine = engine.clone();
    engine.store = Arc::new(MemoryImageStore::new());
    let mut log = engine.start(id, image, prompt, config)?;
    engine.run_to_completion(&mut log)?;
    let out = engine.store.get_raster(&log.session.current.id)?;
    Ok(Run { psnr: metrics::psnr(clean, &out).map_err(backend)?, ssim: metrics::ssim(clean, &out).map_err(backend)?, log })
}

/// A.I.T. summed straight from the events rather than the projection.
fn ait_from_events(log: &SessionLog) -> f64 {
    log.events
        .iter()
        .map(|e| match &e.kind {
            EventKind::Routed { agent_ms, .. } | EventKind::StepFailed { agent_ms, .. } => *agent_ms,
            EventKind::StepCompleted { step } => step.agent_ms + step.feedback_ms,
            _ => 0.0,
        })
        .sum()
}

fn session_row(key: &str, runs: &[&Run]) -> Row {
    Row {
        key: key.into(),
        n: runs.len(),
        psnr: mean(runs.iter().map(|r| r.psnr)),
        ssim: mean(runs.iter().map(|r| r.ssim)),
        agent_calls: mean(runs.iter().map(|r| f64::from(r.log.session.agent_calls))),
        steps: mean(runs.iter().map(|r| r.log.session.steps.len() as f64)),
        ..Row::default()
    }
}

fn timing_row(condition: &str, key: &str, runs: &[&Run]) -> TimingRow {
    TimingRow {
        condition: condition.into(),
        key: key.into(),
        sessions: runs.len(),
        ait_ms: mean(runs.iter().map(|r| r.log.session.ait_ms)).unwrap_or(0.0),
        tool_ms: mean(runs.iter().map(|r| r.log.session.tool_ms)).unwrap_or(0.0),
    }
}

fn ait_check<'a>(runs: impl IntoIterator<Item = &'a Run>) -> Check {
    let (mut worst, mut n) = (0.0f64, 0usize);
    for r in runs {
        worst = worst.max((ait_from_events(&r.log) - r.log.session.ait_ms).abs());
        n += 1;
    }
    Check::new("ait_matches_event_log", worst < 1e-6, format!("{n} sessions, max |difference| {worst:.3e} ms"))
}

pub const FAST_VS_SLOW_SIDE: u32 = 128;

/// Every direct prompt of the corpus, once with the fast route and once
/// with all traffic through the SlowAgent. Prompt `i` of kind `k` comes
/// with a pool crop degraded by one `k` instance.
pub fn run_fast_vs_slow(
    cfg: &Config,
    codec_proxy: bool,
    pool: &[Arc<Raster>],
    seed: u64,
) -> Result<(ExperimentReport, TimingReport), BenchError> {
    let t0 = Instant::now();
    let cfg = seeded(cfg, seed);
    let backends = Backends::from_config(&cfg, codec_proxy)?;
    let engine = backends.engine(Arc::new(MemoryImageStore::new()), Arc::new(SystemClock::default()));
    let prompts: Vec<(String, ToolId)> = build_prompt_corpus(seed)
        .into_iter()
        .filter_map(|r| match r.label {
            PromptOutcome::Direct { tool } => Some((r.prompt, tool)),
            PromptOutcome::Ambiguous => None,
        })
        .collect();

    let base = SessionConfig { await_human: false, ..cfg.session_config() };
    let on = SessionConfig { fast_route: true, ..base };
    let off = SessionConfig { fast_route: false, ..base };
    let pairs: Vec<(ToolId, Run, Run)> = prompts
        .par_iter()
        .enumerate()
        .map(|(i, (prompt, tool))| {
            let clean = Arc::new(pool_crop(pool, i, FAST_VS_SLOW_SIDE, rng::derive(seed, i as u64)));
            let inst = sample_instance(tool.kind(), rng::derive_all(seed, &[i as u64, 1]))?;
            let image = backends.degrader.apply(&clean_state(&clean)?, &inst)?;
            let a = run_session(&engine, &format!("fast-{i:04}"), &image, prompt, on, &clean)?;
            let b = run_session(&engine, &format!("slow-{i:04}"), &image, prompt, off, &clean)?;
            Ok((*tool, a, b))
        })
        .collect::<Result<_, BenchError>>()?;

    let mut report = ExperimentReport::new("fast-vs-slow", seed, &cfg, &backends.resolved);
    report.param("prompts", prompts.len());
    report.param("image_side", FAST_VS_SLOW_SIDE);
    report.param("session", base);
    let mut timing = TimingReport { experiment: report.experiment.clone(), wall_ms: 0.0, rows: Vec::new() };
    for (name, pick) in [("fast_route_on", 0usize), ("fast_route_off", 1)] {
        let mut rows = Vec::new();
        for kind in DistortionKind::SINGLE {
            let tool = ToolId::for_kind(kind);
            let runs: Vec<&Run> =
                pairs.iter().filter(|(t, ..)| *t == tool).map(|(_, a, b)| if pick == 0 { a } else { b }).collect();
            if runs.is_empty() {
                continue;
            }
            rows.push(session_row(&tool.name(), &runs));
            timing.rows.push(timing_row(name, &tool.name(), &runs));
        }
        let all: Vec<&Run> = pairs.iter().map(|(_, a, b)| if pick == 0 { a } else { b }).collect();
        rows.push(session_row("all", &all));
        timing.rows.push(timing_row(name, "all", &all));
        report.conditions.push(Condition { name: name.into(), rows });
    }

    let calls = |pick: usize| -> Vec<u32> {
        pairs.iter().map(|(_, a, b)| if pick == 0 { a } else { b }.log.session.agent_calls).collect()
    };
    let (ca, cb) = (calls(0), calls(1));
    let mean_a = mean(ca.iter().map(|&c| f64::from(c))).unwrap_or(0.0);
    let mean_b = mean(cb.iter().map(|&c| f64::from(c))).unwrap_or(0.0);
    let ratio = if mean_b > 0.0 { mean_a / mean_b } else { f64::INFINITY };
    report.summary.insert("agent_calls_fast_route_on".into(), mean_a);
    report.summary.insert("agent_calls_fast_route_off".into(), mean_b);
    report.summary.insert("agent_call_ratio".into(), ratio);

    let (min_a, max_a) = (ca.iter().min().copied().unwrap_or(0), ca.iter().max().copied().unwrap_or(0));
    let min_b = cb.iter().min().copied().unwrap_or(0);
    report.checks.push(Check::new("fast_route_one_call", min_a == 1 && max_a == 1, format!("agent calls per session in [{min_a}, {max_a}]")));
    report.checks.push(Check::new("slow_route_two_or_more_calls", min_b >= 2, format!("minimum {min_b} agent calls per session")));
    report.checks.push(Check::new("agent_call_ratio", ratio <= 0.5, format!("{mean_a:.3} / {mean_b:.3} = {ratio:.3}")));
    report.checks.push(ait_check(pairs.iter().flat_map(|(_, a, b)| [a, b])));
    let same: Vec<f64> = pairs
        .iter()
        .filter(|(_, a, b)| a.log.session.history() == b.log.session.history())
        .map(|(_, a, b)| (a.psnr - b.psnr).abs())
        .collect();
    let worst = same.iter().copied().fold(0.0, f64::max);
    report.checks.push(Check::new(
        "same_tool_psnr_parity",
        worst <= 0.5,
        format!("{} of {} pairs used the same tools; max |PSNR difference| {worst:.3} dB", same.len(), pairs.len()),
    ));

    report.published = vec![
        published("fast_route_on", "de-noise", "ait_s", 0.08),
        published("fast_route_off", "de-noise", "ait_s", 0.75),
        published("fast_route_on", "de-noise", "psnr", 30.25),
        published("fast_route_off", "de-noise", "psnr", 30.63),
    ];
    timing.wall_ms = t0.elapsed().as_secs_f64() * 1000.0;
    Ok((report, timing))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuccessRateParams {
    pub images_per_kind: usize,
    pub side: u32,
}

impl Default for SuccessRateParams {
    fn default() -> Self {
        SuccessRateParams { images_per_kind: 1000, side: 64 }
    }
}

fn rate_row(key: &str, n: usize, outcomes: &[bool], predicted: Option<f64>) -> Row {
    let correct = outcomes.iter().filter(|&&ok| ok).count();
    Row {
        key: key.into(),
        n,
        invocations: Some(outcomes.len()),
        success_rate: (!outcomes.is_empty()).then(|| correct as f64 / outcomes.len() as f64),
        predicted,
        ..Row::default()
    }
}

/// Share of correct tool invocations per kind: the FastAgent over the
/// direct prompts (an ambiguous answer invokes nothing), the SlowAgent
/// over `images_per_kind` single-distortion images with `vote.k` votes.
pub fn run_success_rate(
    cfg: &Config,
    codec_proxy: bool,
    pool: &[Arc<Raster>],
    seed: u64,
    params: SuccessRateParams,
) -> Result<(ExperimentReport, TimingReport), BenchError> {
    let t0 = Instant::now();
    let cfg = seeded(cfg, seed);
    let backends = Backends::from_config(&cfg, codec_proxy)?;
    let k = cfg.vote.k;
    let fast = FastAgent::new(backends.fast.clone());
    let slow = SlowAgent::new(backends.identify.clone(), k).map_err(backend)?;
    let mut report = ExperimentReport::new("success-rate", seed, &cfg, &backends.resolved);
    report.param("images_per_kind", params.images_per_kind);
    report.param("image_side", params.side);
    report.param("vote_k", k);

    let corpus = build_prompt_corpus(seed);
    let mut fast_rows = Vec::new();
    for kind in DistortionKind::SINGLE {
        let truth = ToolId::for_kind(kind);
        let prompts: Vec<&str> = corpus
            .iter()
            .filter(|r| r.label == PromptOutcome::Direct { tool: truth })
            .map(|r| r.prompt.as_str())
            .collect();
        let mut outcomes = Vec::new();
        for p in &prompts {
            if let Some(tool) = fast.classify(p).map_err(backend)?.tool() {
                outcomes.push(tool == truth);
            }
        }
        fast_rows.push(rate_row(&truth.name(), prompts.len(), &outcomes, None));
    }
    report.conditions.push(Condition { name: "fast_agent".into(), rows: fast_rows });

    let n = params.images_per_kind;
    let jobs: Vec<(DistortionKind, usize)> =
        DistortionKind::SINGLE.iter().flat_map(|&kind| (0..n).map(move |i| (kind, i))).collect();
    let winners: Vec<(DistortionKind, DistortionKind)> = jobs
        .par_iter()
        .map(|&(kind, i)| {
            let s = rng::derive_all(seed, &[kind.rank() as u64, i as u64]);
            let clean = Arc::new(pool_crop(pool, i, params.side, s));
            let image = backends.degrader.apply(&clean_state(&clean)?, &sample_instance(kind, rng::derive(s, 7))?)?;
            let votes = slow.identify(&image).map_err(backend)?;
            Ok((kind, votes.winner))
        })
        .collect::<Result<_, BenchError>>()?;
    let r = &backends.resolved;
    let mut slow_rows = Vec::new();
    for kind in DistortionKind::SINGLE {
        let outcomes: Vec<bool> = winners.iter().filter(|(t, _)| *t == kind).map(|(t, w)| t == w).collect();
        let predicted = match r.slow {
            AgentBackend::Oracle => Some(1.0),
            AgentBackend::Stub => Some(voting::predicted_accuracy(r.stub_p, k as usize, kind)),
            _ => None,
        };
        slow_rows.push(rate_row(&ToolId::for_kind(kind).name(), n, &outcomes, predicted));
    }

    let rate = |row: &Row| row.success_rate.unwrap_or(0.0);
    match r.slow {
        AgentBackend::Oracle => {
            let worst = slow_rows.iter().map(rate).fold(1.0, f64::min);
            report.checks.push(Check::new("oracle_perfect", worst == 1.0, format!("lowest per-kind rate {worst:.4}")));
        }
        AgentBackend::Stub => {
            let worst = slow_rows.iter().map(|row| (rate(row) - row.predicted.unwrap_or(0.0)).abs()).fold(0.0, f64::max);
            report.summary.insert("majority_lower_bound".into(), voting::majority_lower_bound(r.stub_p, k as usize));
            report.checks.push(Check::new(
                "stub_matches_prediction",
                worst <= 0.03,
                format!("max |measured - predicted| {worst:.4} over {n} images per kind"),
            ));
        }
        _ => {}
    }
    report.checks.push(Check::new("enough_images", n >= 1000, format!("{n} images per kind")));
    report.summary.insert("slow_agent_mean".into(), mean(slow_rows.iter().map(rate)).unwrap_or(0.0));
    report.conditions.push(Condition { name: "slow_agent".into(), rows: slow_rows });
    report.published = vec![
        published("slow_agent", "de-noise", "success_rate", 0.943),
        published("fast_agent", "de-noise", "success_rate", 0.729),
    ];
    let timing = TimingReport { experiment: report.experiment.clone(), wall_ms: t0.elapsed().as_secs_f64() * 1000.0, rows: Vec::new() };
    Ok((report, timing))
}

/// PSNR of step-by-step single removal and of one de-hybrid call on a flat
/// mid-gray blur+noise+jpeg stack, under the default simulator constants.
pub fn closed_form_three_stack() -> Result<(f64, f64), BenchError> {
    let clean = Raster::filled(256, 256, [128; 3]);
    let plan = HybridPlan::from_kinds(PlanClass::General, &[DistortionKind::Blur, DistortionKind::Noise, DistortionKind::Jpeg], 11)?;
    let sim = Simulator::new(SimulatorConfig::default(), Default::default());
    let image = sim.degrader.render(&ImageState::clean(clean.clone())?, &plan)?;
    let mut seq = image.clone();
    for d in plan.kinds() {
        seq = sim.step(ToolId::for_kind(d), &seq).map_err(backend)?;
    }
    let hybrid = sim.step(ToolId::HYBRID, &image).map_err(backend)?;
    let p = |r: &Raster| metrics::psnr(&clean, r).map_err(backend);
    Ok((p(&seq.raster)?, p(&hybrid.raster)?))
}

const RESTORE: &str = "Please restore this image.";

fn touches_hybrid(log: &SessionLog) -> bool {
    log.events.iter().any(|e| match &e.kind {
        EventKind::StepCompleted { step } => step.tool.is_hybrid(),
        EventKind::StepFailed { tool, .. } => tool.is_some_and(ToolId::is_hybrid),
        _ => false,
    })
}

/// Each test case twice: "Only Single" (no de-hybrid in the registry,
/// identification naming the latest remaining distortion) and "Both" (full
/// registry, identification naming hybrid for mixtures). The haze and low
/// light penalty of the simulator is switched on for this experiment.
pub fn run_single_vs_both(
    cfg: &Config,
    codec_proxy: bool,
    testset: &[TestCase],
    seed: u64,
) -> Result<(ExperimentReport, TimingReport), BenchError> {
    let t0 = Instant::now();
    let mut cfg = seeded(cfg, seed);
    cfg.simulator.unstable_penalty = true;
    let backends = Backends::from_config(&cfg, codec_proxy)?;
    let clock = Arc::new(SystemClock::default());
    let mk = |identify: OracleIdentify, tools| {
        Engine::new(
            FastAgent::new(backends.fast.clone()),
            Arc::new(identify),
            FeedbackAgent::new(backends.feedback.clone()),
            tools,
            Arc::new(MemoryImageStore::new()),
        )
        .with_clock(clock.clone())
    };
    let single = mk(OracleIdentify::single_only(), backends.tools.without(ToolId::HYBRID));
    let both = mk(OracleIdentify::default(), backends.tools.clone());
    let config = SessionConfig { fast_route: false, await_human: false, ..cfg.session_config() };

    let runs: Vec<(&TestCase, Run, Run)> = testset
        .par_iter()
        .map(|c| {
            let s = run_session(&single, &format!("single-{:04}", c.index), &c.degraded, RESTORE, config, &c.clean)?;
            let b = run_session(&both, &format!("both-{:04}", c.index), &c.degraded, RESTORE, config, &c.clean)?;
            Ok((c, s, b))
        })
        .collect::<Result<_, BenchError>>()?;

    let mut keys: Vec<&str> = Vec::new();
    for c in testset {
        if !keys.contains(&c.row.as_str()) {
            keys.push(&c.row);
        }
    }
    let mut report = ExperimentReport::new("single-vs-both", seed, &cfg, &backends.resolved);
    report.param("cases", testset.len());
    report.param("session", config);
    report.param("identify", ["oracle-single", "oracle"]);
    let mut timing = TimingReport { experiment: report.experiment.clone(), wall_ms: 0.0, rows: Vec::new() };
    for (name, pick) in [("only_single", 0usize), ("both", 1)] {
        let mut rows = Vec::new();
        for key in &keys {
            let rs: Vec<&Run> = runs.iter().filter(|(c, ..)| c.row == *key).map(|t| if pick == 0 { &t.1 } else { &t.2 }).collect();
            rows.push(Row { lpips: Some(None), ..session_row(key, &rs) });
            timing.rows.push(timing_row(name, key, &rs));
        }
        let all: Vec<&Run> = runs.iter().map(|t| if pick == 0 { &t.1 } else { &t.2 }).collect();
        rows.push(Row { lpips: Some(None), ..session_row("average", &all) });
        timing.rows.push(timing_row(name, "average", &all));
        report.conditions.push(Condition { name: name.into(), rows });
    }

    let leaks = runs.iter().filter(|(_, s, _)| touches_hybrid(&s.log)).count();
    report.checks.push(Check::new("only_single_never_hybrid", leaks == 0, format!("{leaks} sessions touched de-hybrid")));

    let (single_c, both_c) = (&report.conditions[0], &report.conditions[1]);
    let mut gaps: Vec<(String, f64)> = Vec::new();
    let mut losing = Vec::new();
    for key in &keys {
        let (s, b) = (single_c.row(key).and_then(|r| r.psnr), both_c.row(key).and_then(|r| r.psnr));
        let (Some(s), Some(b)) = (s, b) else { continue };
        if key.split('+').count() >= 2 && b.partial_cmp(&s) != Some(std::cmp::Ordering::Greater) {
            losing.push(key.to_string());
        }
        gaps.push((key.to_string(), b - s));
    }
    report.checks.push(Check::new(
        "both_beats_single_every_row",
        losing.is_empty(),
        if losing.is_empty() { "strict on every multi-distortion row".into() } else { format!("not strict on {}", losing.join(", ")) },
    ));
    let widest = gaps.iter().max_by(|a, b| a.1.total_cmp(&b.1)).cloned();
    let weather_led = |key: &str| DistortionKind::WEATHER.iter().any(|w| key.starts_with(&format!("{}+", w.as_str())));
    let (wkey, wgap) = widest.unwrap_or_default();
    report.checks.push(Check::new("widest_gap_on_weather_row", weather_led(&wkey), format!("widest gap {wgap:.2} dB on {wkey}")));
    report.summary.insert("widest_gap_db".into(), wgap);
    for (name, c) in [("only_single", single_c), ("both", both_c)] {
        if let Some(r) = c.row("average") {
            report.summary.insert(format!("psnr_{name}"), r.psnr.unwrap_or(f64::NAN));
            report.summary.insert(format!("ssim_{name}"), r.ssim.unwrap_or(f64::NAN));
        }
    }

    let (step, hybrid) = closed_form_three_stack()?;
    report.summary.insert("closed_form_step_by_step_db".into(), step);
    report.summary.insert("closed_form_hybrid_db".into(), hybrid);
    report.checks.push(Check::new(
        "closed_form_three_stack",
        (step - 35.12).abs() <= 0.2 && (hybrid - 48.13).abs() <= 0.2,
        format!("step-by-step {step:.2} dB, de-hybrid {hybrid:.2} dB"),
    ));
    report.checks.push(ait_check(runs.iter().flat_map(|(_, s, b)| [s, b])));

    report.published = vec![
        published("only_single", "average", "psnr", 19.84),
        published("only_single", "average", "ssim", 0.557),
        published("both", "average", "psnr", 24.83),
        published("both", "average", "ssim", 0.741),
        published("only_single", "lowlight+noise", "psnr", 7.69),
        published("both", "lowlight+noise", "psnr", 19.97),
    ];
    timing.wall_ms = t0.elapsed().as_secs_f64() * 1000.0;
    Ok((report, timing))
}

/// Cases per row key.
pub fn row_counts(testset: &[TestCase]) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for c in testset {
        *m.entry(c.row.clone()).or_insert(0) += 1;
    }
    m
}
