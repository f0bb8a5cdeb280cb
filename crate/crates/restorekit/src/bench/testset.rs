use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use restorekit_core::degrade::{Degrader, HybridPlan, PlanClass};
use restorekit_core::{rng, DistortionKind, ImageState, Provenance, Raster};
use serde::{Deserialize, Serialize};

use super::{io_err, pool_crop, BenchError};
use crate::blobstore::PngBlobStore;
use crate::png_io;

pub const MIN_POOL: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestsetRow {
    pub kinds: Vec<DistortionKind>,
    pub count: usize,
}

impl TestsetRow {
    /// `blur+noise+jpeg` style key.
    pub fn key(&self) -> String {
        self.kinds.iter().map(|k| k.as_str()).collect::<Vec<_>>().join("+")
    }

    pub fn class(&self) -> PlanClass {
        if self.kinds[0].is_weather() {
            PlanClass::WeatherPlus
        } else {
            PlanClass::General
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridTestsetSpec {
    pub rows: Vec<TestsetRow>,
    /// Square crop side of each clean image.
    pub side: u32,
}

impl Default for HybridTestsetSpec {
    fn default() -> Self {
        use DistortionKind::*;
        let mut rows: Vec<TestsetRow> = [
            vec![Blur, Jpeg],
            vec![Blur, Noise],
            vec![Blur, Noise, Jpeg],
            vec![MotionBlur, Jpeg],
            vec![MotionBlur, Noise],
            vec![MotionBlur, Noise, Jpeg],
        ]
        .into_iter()
        .map(|kinds| TestsetRow { kinds, count: 20 })
        .collect();
        for w in DistortionKind::WEATHER {
            for c in [Jpeg, Noise] {
                rows.push(TestsetRow { kinds: vec![w, c], count: 10 });
            }
        }
        HybridTestsetSpec { rows, side: 256 }
    }
}

impl HybridTestsetSpec {
    pub fn total(&self) -> usize {
        self.rows.iter().map(|r| r.count).sum()
    }
}

#[derive(Debug, Clone)]
pub struct TestCase {
    pub index: usize,
    pub row: String,
    pub seed: u64,
    pub plan: HybridPlan,
    pub clean: Arc<Raster>,
    pub degraded: ImageState,
}

/// Renders every row of `spec`. Case `i` crops pool image `i mod n` and
/// samples its plan from `derive(seed, i)`.
pub fn build_hybrid_testset(
    spec: &HybridTestsetSpec,
    pool: &[Arc<Raster>],
    seed: u64,
    degrader: &Degrader,
) -> Result<Vec<TestCase>, BenchError> {
    let distinct: BTreeSet<_> = pool.iter().map(|r| r.digest()).collect();
    if distinct.len() < MIN_POOL {
        return Err(BenchError::PoolTooSmall { distinct: distinct.len(), needed: MIN_POOL });
    }
    let jobs: Vec<(usize, &TestsetRow)> =
        spec.rows.iter().flat_map(|r| std::iter::repeat(r).take(r.count)).enumerate().collect();
    jobs.par_iter()
        .map(|&(index, row)| {
            let case_seed = rng::derive(seed, index as u64);
            let plan = HybridPlan::from_kinds(row.class(), &row.kinds, case_seed)?;
            let clean = Arc::new(pool_crop(pool, index, spec.side, case_seed));
            let source = ImageState::with_provenance((*clean).clone(), Provenance::new(clean.clone(), Vec::new()))?;
            let degraded = degrader.render(&source, &plan)?;
            Ok(TestCase { index, row: row.key(), seed: case_seed, plan, clean, degraded })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub index: usize,
    pub row: String,
    pub seed: u64,
    pub plan: HybridPlan,
    pub clean_path: String,
    pub degraded_path: String,
}

/// Writes `{out}/testset.jsonl` and the PNGs under `{out}/images/`.
pub fn write_testset(cases: &[TestCase], out: &Path) -> Result<PathBuf, BenchError> {
    let images = PngBlobStore::open(out.join("images"))?;
    let records: Vec<ManifestRecord> = cases
        .par_iter()
        .map(|c| {
            let put = |r: &Raster| -> Result<String, BenchError> {
                let png = png_io::encode(r).map_err(|e| BenchError::Io { path: out.into(), message: e.to_string() })?;
                Ok(format!("images/{}.png", images.put_bytes(&png)?))
            };
            Ok(ManifestRecord {
                index: c.index,
                row: c.row.clone(),
                seed: c.seed,
                plan: c.plan.clone(),
                clean_path: put(&c.clean)?,
                degraded_path: put(&c.degraded.raster)?,
            })
        })
        .collect::<Result<_, BenchError>>()?;
    let path = out.join("testset.jsonl");
    let mut w = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
    for r in &records {
        serde_json::to_writer(&mut w, r).expect("manifest serializes");
        w.write_all(b"\n").map_err(io_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;
    Ok(path)
}
