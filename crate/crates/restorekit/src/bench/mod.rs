//! Experiment harness: the hybrid test set and three experiments (fast vs
//! slow routing, identification success rate, single tools vs de-hybrid).
//!
//! Each experiment yields an [`ExperimentReport`] that is reproducible byte
//! for byte from the same seed and configuration, and a [`TimingReport`]
//! holding everything wall-clock dependent.

mod experiments;
mod testset;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use restorekit_core::degrade::DegradeError;
use restorekit_core::metrics::{self, METRIC_CONFIG};
use restorekit_core::orchestrator::{EngineError, StoreError};
use restorekit_core::{rng, ContentHash, DomainError, Raster};
use serde::Serialize;

use crate::config::{Config, ConfigError, ServerConfig};
use crate::profile::Resolved;

pub use experiments::{closed_form_three_stack, row_counts, run_fast_vs_slow, run_single_vs_both, run_success_rate, SuccessRateParams};
pub use testset::{build_hybrid_testset, write_testset, HybridTestsetSpec, ManifestRecord, TestCase, TestsetRow};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("pool has {distinct} distinct images, need at least {needed}")]
    PoolTooSmall { distinct: usize, needed: usize },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Degrade(#[from] DegradeError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("{0}")]
    Backend(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> BenchError + '_ {
    move |e| BenchError::Io { path: path.to_path_buf(), message: e.to_string() }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fingerprints {
    /// Digest of the resolved backend profile.
    pub backends: String,
    pub metrics: String,
    pub resolved: Resolved,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Row {
    pub key: String,
    pub n: usize,
    #[serde(with = "metrics::psnr_serde::option", skip_serializing_if = "Option::is_none")]
    pub psnr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ssim: Option<f64>,
    /// `Some(None)` renders as `null`: the column exists but no LPIPS
    /// backend is wired in.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lpips: Option<Option<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub agent_calls: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub invocations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub success_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predicted: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Condition {
    pub name: String,
    pub rows: Vec<Row>,
}

impl Condition {
    pub fn row(&self, key: &str) -> Option<&Row> {
        self.rows.iter().find(|r| r.key == key)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Check { name: name.into(), passed, detail: detail.into() }
    }
}

/// A published number kept next to ours for comparison, never asserted.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Published {
    pub condition: String,
    pub row: String,
    pub metric: String,
    pub value: f64,
}

fn published(condition: &str, row: &str, metric: &str, value: f64) -> Published {
    Published { condition: condition.into(), row: row.into(), metric: metric.into(), value }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub seed: u64,
    pub config_hash: String,
    pub fingerprints: Fingerprints,
    pub parameters: BTreeMap<String, serde_json::Value>,
    pub conditions: Vec<Condition>,
    pub summary: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
    pub published: Vec<Published>,
}

impl ExperimentReport {
    fn new(experiment: &str, seed: u64, cfg: &Config, resolved: &Resolved) -> Self {
        ExperimentReport {
            experiment: experiment.into(),
            seed,
            config_hash: config_hash(cfg),
            fingerprints: Fingerprints {
                backends: resolved.fingerprint(),
                metrics: METRIC_CONFIG.fingerprint().to_hex(),
                resolved: resolved.clone(),
            },
            parameters: BTreeMap::new(),
            conditions: Vec::new(),
            summary: BTreeMap::new(),
            checks: Vec::new(),
            published: Vec::new(),
        }
    }

    pub fn condition(&self, name: &str) -> Option<&Condition> {
        self.conditions.iter().find(|c| c.name == name)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn param(&mut self, key: &str, value: impl Serialize) {
        self.parameters.insert(key.into(), serde_json::to_value(value).expect("parameters serialize"));
    }
}

/// Digest of the configuration sections that can change an experiment;
/// the data directory and server settings are left out.
pub fn config_hash(cfg: &Config) -> String {
    let mut c = cfg.clone();
    c.data_dir = Config::default().data_dir;
    c.server = ServerConfig::default();
    ContentHash::of_bytes(&serde_json::to_vec(&c).expect("config serializes")).to_hex()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingRow {
    pub condition: String,
    pub key: String,
    pub sessions: usize,
    /// Mean agent inference time per session.
    pub ait_ms: f64,
    pub tool_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingReport {
    pub experiment: String,
    pub wall_ms: f64,
    pub rows: Vec<TimingRow>,
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    match v {
        Some(x) if x.is_infinite() => "inf".into(),
        Some(x) => format!("{x:.digits$}"),
        None => "-".into(),
    }
}

/// Markdown rendering: one table per condition, then checks, published
/// values and, when given, timings.
pub fn markdown(report: &ExperimentReport, timing: Option<&TimingReport>) -> String {
    let mut md = String::new();
    let _ = writeln!(md, "# {}\n", report.experiment);
    let _ = writeln!(md, "seed {} | config `{}` | backends `{}` | metrics `{}`\n", report.seed,
        &report.config_hash[..12], &report.fingerprints.backends[..12], &report.fingerprints.metrics[..12]);
    for c in &report.conditions {
        let _ = writeln!(md, "## {}\n", c.name);
        let _ = writeln!(md, "| row | n | PSNR | SSIM | LPIPS | agent calls | steps | invocations | success | predicted |");
        let _ = writeln!(md, "|---|---|---|---|---|---|---|---|---|---|");
        for r in &c.rows {
            let lpips = match r.lpips {
                Some(v) => v.map_or("null".into(), |x| format!("{x:.4}")),
                None => "-".into(),
            };
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |",
                r.key,
                r.n,
                fmt_opt(r.psnr, 2),
                fmt_opt(r.ssim, 4),
                lpips,
                fmt_opt(r.agent_calls, 2),
                fmt_opt(r.steps, 2),
                r.invocations.map_or("-".into(), |n| n.to_string()),
                fmt_opt(r.success_rate, 4),
                fmt_opt(r.predicted, 4),
            );
        }
        md.push('\n');
    }
    if !report.summary.is_empty() {
        let _ = writeln!(md, "## Summary\n");
        for (k, v) in &report.summary {
            let _ = writeln!(md, "- {k}: {}", fmt_opt(Some(*v), 4));
        }
        md.push('\n');
    }
    let _ = writeln!(md, "## Checks\n");
    for c in &report.checks {
        let _ = writeln!(md, "- [{}] {}: {}", if c.passed { "x" } else { " " }, c.name, c.detail);
    }
    if !report.published.is_empty() {
        let _ = writeln!(md, "\n## Published reference values (not asserted)\n");
        for p in &report.published {
            let _ = writeln!(md, "- {} / {} / {}: {}", p.condition, p.row, p.metric, p.value);
        }
    }
    if let Some(t) = timing {
        let _ = writeln!(md, "\n## Timing (this machine)\n");
        let _ = writeln!(md, "wall {:.0} ms\n", t.wall_ms);
        let _ = writeln!(md, "| condition | row | sessions | A.I.T. ms | tool ms |");
        let _ = writeln!(md, "|---|---|---|---|---|");
        for r in &t.rows {
            let _ = writeln!(md, "| {} | {} | {} | {:.3} | {:.3} |", r.condition, r.key, r.sessions, r.ait_ms, r.tool_ms);
        }
    }
    md
}

/// Writes `{experiment}.json`, `{experiment}.md` and, with timings,
/// `{experiment}.timing.json`. Returns the JSON path.
pub fn write_report(out: &Path, report: &ExperimentReport, timing: Option<&TimingReport>) -> Result<PathBuf, BenchError> {
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let json = out.join(format!("{}.json", report.experiment));
    std::fs::write(&json, serde_json::to_vec_pretty(report).expect("reports serialize")).map_err(io_err(&json))?;
    let md = out.join(format!("{}.md", report.experiment));
    std::fs::write(&md, markdown(report, timing)).map_err(io_err(&md))?;
    if let Some(t) = timing {
        let path = out.join(format!("{}.timing.json", report.experiment));
        std::fs::write(&path, serde_json::to_vec_pretty(t).expect("timings serialize")).map_err(io_err(&path))?;
    }
    Ok(json)
}

/// A square crop of pool image `i % n`, placed by `seed`. Sources smaller
/// than `side` give their largest square.
pub fn pool_crop(pool: &[Arc<Raster>], i: usize, side: u32, seed: u64) -> Raster {
    let src = &pool[i % pool.len()];
    let (w, h) = src.dims();
    let side = side.min(w).min(h);
    let x = (rng::derive(seed, 1) % u64::from(w - side + 1)) as u32;
    let y = (rng::derive(seed, 2) % u64::from(h - side + 1)) as u32;
    src.crop(x, y, side, side)
}

fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for x in xs {
        sum += x;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}
