//! Writes the instruction corpora to disk:
//! `{out}/slowagent.jsonl`, `{out}/feedback.jsonl`, `{out}/prompts.jsonl`
//! and `{out}/images/{sha256}.png`, each corpus with a `*.summary.json`.
//!
//! Records render in parallel; manifests are written afterwards in plan
//! order, so output never depends on scheduling.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use restorekit_core::datagen::{
    build_prompt_corpus, describe_feedback, describe_slow, plan_feedback_corpus, plan_slow_corpus, render_feedback,
    render_slow, reuse_notes, synthetic_pool, CorpusSpec, DatagenError, InstructionRecord, Pool, RenderedRecord,
};
use restorekit_core::degrade::Degrader;
use restorekit_core::tools::ToolRegistry;
use restorekit_core::{DistortionKind, Raster};
use serde::Serialize;

use crate::blobstore::PngBlobStore;
use crate::png_io;

#[derive(Debug, thiserror::Error)]
pub enum WriteError {
    #[error(transparent)]
    Datagen(#[from] DatagenError),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("pool: {0}")]
    Pool(String),
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> WriteError + '_ {
    move |e| WriteError::Io { path: path.to_path_buf(), message: e.to_string() }
}

/// Where the clean images came from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoolInfo {
    pub source: String,
    pub default: usize,
    pub per_kind: BTreeMap<DistortionKind, usize>,
}

pub const SYNTHETIC_POOL_SIZE: usize = 64;

fn pngs_in(dir: &Path) -> Result<Vec<Raster>, WriteError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    paths.iter().map(|p| png_io::read(p).map_err(|e| WriteError::Pool(e.to_string()))).collect()
}

/// PNGs directly under `dir` form the default pool; a subdirectory named
/// after a distortion kind (`haze/`, `lowlight/`, ...) holds that kind's own
/// sources. Without a directory a synthetic pool is generated from `seed`.
pub fn load_pool(dir: Option<&Path>, seed: u64) -> Result<(Pool, PoolInfo), WriteError> {
    let Some(dir) = dir else {
        let pool = Pool::new(synthetic_pool(seed, SYNTHETIC_POOL_SIZE, 256, 800))?;
        let info = PoolInfo { source: format!("synthetic(seed={seed})"), default: SYNTHETIC_POOL_SIZE, per_kind: BTreeMap::new() };
        return Ok((pool, info));
    };
    let mut pool = Pool { default: pngs_in(dir)?.into_iter().map(Arc::new).collect(), per_kind: BTreeMap::new() };
    for kind in DistortionKind::SINGLE {
        let sub = dir.join(kind.as_str());
        if sub.is_dir() {
            pool.per_kind.insert(kind, pngs_in(&sub)?.into_iter().map(Arc::new).collect());
        }
    }
    pool.validate()?;
    let info = PoolInfo {
        source: dir.display().to_string(),
        default: pool.default.len(),
        per_kind: pool.per_kind.iter().map(|(k, v)| (*k, v.len())).collect(),
    };
    Ok((pool, info))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusSummary {
    pub corpus: String,
    pub scale: f64,
    pub seed: u64,
    pub records: usize,
    pub per_category: BTreeMap<String, usize>,
    pub pool: PoolInfo,
    pub codecs: BTreeMap<DistortionKind, Option<String>>,
    /// Categories whose quota outran their pool.
    pub reuse: Vec<String>,
}

fn write_records<S: Sync>(
    out: &Path,
    name: &str,
    slots: &[S],
    render: impl Fn(&S) -> Result<RenderedRecord, DatagenError> + Sync,
    images: &PngBlobStore,
) -> Result<Vec<InstructionRecord>, WriteError> {
    // each image goes to disk as soon as it is rendered
    let records: Vec<InstructionRecord> = slots
        .par_iter()
        .map(|slot| {
            let r = render(slot)?;
            let png = png_io::encode(&r.image.raster).map_err(|e| WriteError::Io { path: out.into(), message: e.to_string() })?;
            let id = images.put_bytes(&png).map_err(|e| WriteError::Io { path: images.root().into(), message: e.to_string() })?;
            Ok(r.into_record(format!("images/{id}.png")))
        })
        .collect::<Result<_, WriteError>>()?;
    let path = out.join(name);
    let mut w = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
    for r in &records {
        serde_json::to_writer(&mut w, r).expect("records serialize");
        w.write_all(b"\n").map_err(io_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;
    Ok(records)
}

fn summarize(
    out: &Path,
    corpus: &str,
    spec: &CorpusSpec,
    records: &[InstructionRecord],
    pool: &PoolInfo,
    degrader: &Degrader,
    reuse: Vec<String>,
) -> Result<CorpusSummary, WriteError> {
    let mut per_category = BTreeMap::new();
    for r in records {
        *per_category.entry(r.category.clone()).or_insert(0) += 1;
    }
    for note in &reuse {
        log::info!("{corpus}: {note}");
    }
    let summary = CorpusSummary {
        corpus: corpus.into(),
        scale: spec.scale,
        seed: spec.seed,
        records: records.len(),
        per_category,
        pool: pool.clone(),
        codecs: [DistortionKind::Hevc, DistortionKind::Vvc].into_iter().map(|k| (k, degrader.codec_name(k))).collect(),
        reuse,
    };
    let path = out.join(format!("{corpus}.summary.json"));
    std::fs::write(&path, serde_json::to_vec_pretty(&summary).expect("summary serializes")).map_err(io_err(&path))?;
    Ok(summary)
}

fn prepare(out: &Path) -> Result<PngBlobStore, WriteError> {
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    PngBlobStore::open(out.join("images")).map_err(|e| WriteError::Io { path: out.join("images"), message: e.to_string() })
}

pub fn write_slowagent(spec: &CorpusSpec, pool: &Pool, info: &PoolInfo, degrader: &Degrader, out: &Path) -> Result<CorpusSummary, WriteError> {
    let images = prepare(out)?;
    let slots = plan_slow_corpus(spec);
    let reuse = reuse_notes(&slots, pool, describe_slow);
    let records = write_records(out, "slowagent.jsonl", &slots, |s| render_slow(s, pool, degrader), &images)?;
    summarize(out, "slowagent", spec, &records, info, degrader, reuse)
}

pub fn write_feedback(
    spec: &CorpusSpec,
    pool: &Pool,
    info: &PoolInfo,
    degrader: &Degrader,
    tools: &ToolRegistry,
    out: &Path,
) -> Result<CorpusSummary, WriteError> {
    let images = prepare(out)?;
    let slots = plan_feedback_corpus(spec);
    let reuse = reuse_notes(&slots, pool, describe_feedback);
    let records = write_records(out, "feedback.jsonl", &slots, |s| render_feedback(s, pool, degrader, tools), &images)?;
    summarize(out, "feedback", spec, &records, info, degrader, reuse)
}

pub fn write_prompts(seed: u64, out: &Path) -> Result<usize, WriteError> {
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let path = out.join("prompts.jsonl");
    let mut w = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
    let corpus = build_prompt_corpus(seed);
    for r in &corpus {
        serde_json::to_writer(&mut w, r).expect("prompts serialize");
        w.write_all(b"\n").map_err(io_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;
    Ok(corpus.len())
}
