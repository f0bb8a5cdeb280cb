//! Planners and renderers for the SlowAgent and FeedbackAgent instruction
//! corpora, and the user-prompt corpus.
//!
//! Planning is cheap and sequential: it fixes every record's category, pool
//! image and seed. Rendering a planned record is a pure function of the plan
//! and the pool, so callers can render in any order or in parallel and get
//! identical bytes.

pub mod prompts;

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agents::templates::{self, QUESTIONS};
use crate::degrade::{sample_hybrid_plan, sample_instance, sample_plan_containing, DegradeError, Degrader, HybridPlan, PlanClass};
use crate::domain::{DistortionKind, ImageState, Raster, ToolId};
use crate::rng;
use crate::tools::{ToolError, ToolRegistry};

pub use prompts::{build_prompt_corpus, PromptRecord};

pub const MIN_CROP: u32 = 224;
pub const MAX_CROP: u32 = 784;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DatagenError {
    #[error("scale must be in (0, 1], got {0}")]
    Scale(f64),
    #[error("clean image pool is empty")]
    EmptyPool,
    #[error("pool image {index} is {width}x{height}; crops need at least {MIN_CROP} per side")]
    PoolImageTooSmall { index: usize, width: u32, height: u32 },
    #[error(transparent)]
    Degrade(#[from] DegradeError),
    #[error(transparent)]
    Tool(#[from] ToolError),
    #[error("record {index} of {category}: label says clean = {label} but the stack disagrees")]
    LabelMismatch { category: String, index: usize, label: bool },
}

/// Paper counts are multiplied by `scale` and rounded, at least 1 each.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub scale: f64,
    pub seed: u64,
}

impl CorpusSpec {
    pub fn new(scale: f64, seed: u64) -> Result<Self, DatagenError> {
        if !(scale > 0.0 && scale <= 1.0) {
            return Err(DatagenError::Scale(scale));
        }
        Ok(CorpusSpec { scale, seed })
    }

    pub fn scaled(&self, n: usize) -> usize {
        scaled(self.scale, n)
    }
}

pub fn scaled(scale: f64, n: usize) -> usize {
    (libm::round(scale * n as f64) as usize).max(1)
}

/// Clean source images. Categories tied to a kind draw from that kind's
/// pool when one is given, otherwise from the default pool.
#[derive(Debug, Clone, Default)]
pub struct Pool {
    pub default: Vec<Arc<Raster>>,
    pub per_kind: BTreeMap<DistortionKind, Vec<Arc<Raster>>>,
}

impl Pool {
    pub fn new(default: Vec<Raster>) -> Result<Self, DatagenError> {
        let pool = Pool { default: default.into_iter().map(Arc::new).collect(), per_kind: BTreeMap::new() };
        pool.validate()?;
        Ok(pool)
    }

    pub fn validate(&self) -> Result<(), DatagenError> {
        if self.default.is_empty() && self.per_kind.values().all(Vec::is_empty) {
            return Err(DatagenError::EmptyPool);
        }
        for images in core::iter::once(&self.default).chain(self.per_kind.values()) {
            for (index, r) in images.iter().enumerate() {
                if r.width() < MIN_CROP || r.height() < MIN_CROP {
                    return Err(DatagenError::PoolImageTooSmall { index, width: r.width(), height: r.height() });
                }
            }
        }
        Ok(())
    }

    pub fn for_source(&self, source: Option<DistortionKind>) -> &[Arc<Raster>] {
        match source.and_then(|k| self.per_kind.get(&k)) {
            Some(v) if !v.is_empty() => v,
            _ => &self.default,
        }
    }
}

/// Even selection of `quota` items from a pool of `n`: item `i` takes
/// `floor(i * n / quota)`. Without replacement whenever `quota <= n`.
pub fn pool_index(i: usize, quota: usize, n: usize) -> usize {
    ((i as u128 * n as u128) / quota.max(1) as u128) as usize
}

/// Square crop plus quarter-turn rotation and flips.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Crop {
    pub x: u32,
    pub y: u32,
    pub side: u32,
    pub quarter_turns: u8,
    pub flip_h: bool,
    pub flip_v: bool,
}

impl Crop {
    pub fn sample(width: u32, height: u32, seed: u64) -> Crop {
        let mut g = rng::rng(rng::derive(seed, 0xc409));
        let hi = MAX_CROP.min(width).min(height);
        let side = g.random_range(MIN_CROP.min(hi)..=hi);
        Crop {
            x: g.random_range(0..=width - side),
            y: g.random_range(0..=height - side),
            side,
            quarter_turns: g.random_range(0..4),
            flip_h: g.random_bool(0.5),
            flip_v: g.random_bool(0.5),
        }
    }

    pub fn apply(&self, r: &Raster) -> Raster {
        let mut out = r.crop(self.x, self.y, self.side, self.side).rotate90(self.quarter_turns);
        if self.flip_h {
            out = out.flip_horizontal();
        }
        if self.flip_v {
            out = out.flip_vertical();
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlowCategory {
    Single(DistortionKind),
    /// A weather/light kind with noise and/or JPEG.
    WeatherPlus(DistortionKind),
    General,
}

impl SlowCategory {
    pub fn tag(&self) -> String {
        match self {
            SlowCategory::Single(k) => String::from(k.as_str()),
            SlowCategory::WeatherPlus(k) => alloc::format!("hybrid/{}+", k.as_str()),
            SlowCategory::General => String::from("hybrid/general"),
        }
    }

    fn code(&self) -> u64 {
        match self {
            SlowCategory::Single(k) => k.rank() as u64,
            SlowCategory::WeatherPlus(k) => 100 + k.rank() as u64,
            SlowCategory::General => 200,
        }
    }

    fn source(&self) -> Option<DistortionKind> {
        match self {
            SlowCategory::Single(k) | SlowCategory::WeatherPlus(k) => Some(*k),
            SlowCategory::General => None,
        }
    }

    pub fn label(&self) -> DistortionKind {
        match self {
            SlowCategory::Single(k) => *k,
            _ => DistortionKind::Hybrid,
        }
    }
}

/// Paper counts: 5k per single kind, 2k per weather+ kind, 12k general.
pub fn slow_quotas(spec: &CorpusSpec) -> Vec<(SlowCategory, usize)> {
    let mut out: Vec<(SlowCategory, usize)> =
        DistortionKind::SINGLE.iter().map(|&k| (SlowCategory::Single(k), spec.scaled(5000))).collect();
    out.extend(DistortionKind::WEATHER.iter().map(|&k| (SlowCategory::WeatherPlus(k), spec.scaled(2000))));
    out.push((SlowCategory::General, spec.scaled(12000)));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeedbackCase {
    /// Single distortion, correct tool.
    CleanCorrect(DistortionKind),
    /// Hybrid distortion, de-hybrid.
    CleanHybridOnHybrid,
    /// Single distortion, de-hybrid.
    CleanHybridOnSingle,
    /// Single distortion, wrong single tool.
    WrongTool,
    /// Hybrid distortion, this single tool.
    SingleOnHybrid(DistortionKind),
}

impl FeedbackCase {
    pub fn tag(&self) -> String {
        match self {
            FeedbackCase::CleanCorrect(k) => alloc::format!("clean/correct/{}", k.as_str()),
            FeedbackCase::CleanHybridOnHybrid => String::from("clean/hybrid-on-hybrid"),
            FeedbackCase::CleanHybridOnSingle => String::from("clean/hybrid-on-single"),
            FeedbackCase::WrongTool => String::from("not-clean/wrong-tool"),
            FeedbackCase::SingleOnHybrid(k) => alloc::format!("not-clean/single-on-hybrid/{}", k.as_str()),
        }
    }

    pub fn clean(&self) -> bool {
        matches!(self, FeedbackCase::CleanCorrect(_) | FeedbackCase::CleanHybridOnHybrid | FeedbackCase::CleanHybridOnSingle)
    }

    fn code(&self) -> u64 {
        match self {
            FeedbackCase::CleanCorrect(k) => k.rank() as u64,
            FeedbackCase::CleanHybridOnHybrid => 100,
            FeedbackCase::CleanHybridOnSingle => 101,
            FeedbackCase::WrongTool => 102,
            FeedbackCase::SingleOnHybrid(k) => 200 + k.rank() as u64,
        }
    }
}

/// Paper counts: clean 2.5k per kind + 2.5k + 2.5k; not clean 8k + 2.5k per
/// single tool.
pub fn feedback_quotas(spec: &CorpusSpec) -> Vec<(FeedbackCase, usize)> {
    let mut out: Vec<(FeedbackCase, usize)> =
        DistortionKind::SINGLE.iter().map(|&k| (FeedbackCase::CleanCorrect(k), spec.scaled(2500))).collect();
    out.push((FeedbackCase::CleanHybridOnHybrid, spec.scaled(2500)));
    out.push((FeedbackCase::CleanHybridOnSingle, spec.scaled(2500)));
    out.push((FeedbackCase::WrongTool, spec.scaled(8000)));
    out.extend(DistortionKind::SINGLE.iter().map(|&k| (FeedbackCase::SingleOnHybrid(k), spec.scaled(2500))));
    out
}

/// Where a planned record comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot<C> {
    pub category: C,
    /// Index within the category.
    pub index: usize,
    pub quota: usize,
    pub seed: u64,
}

const SLOW_CORPUS: u64 = 0x510;
const FEEDBACK_CORPUS: u64 = 0xfeed;

fn plan<C: Copy>(spec: &CorpusSpec, corpus: u64, quotas: &[(C, usize)], code: impl Fn(&C) -> u64) -> Vec<Slot<C>> {
    let mut out = Vec::with_capacity(quotas.iter().map(|q| q.1).sum());
    for (category, quota) in quotas {
        for index in 0..*quota {
            let seed = rng::derive_all(spec.seed, &[corpus, code(category), index as u64]);
            out.push(Slot { category: *category, index, quota: *quota, seed });
        }
    }
    out
}

pub fn plan_slow_corpus(spec: &CorpusSpec) -> Vec<Slot<SlowCategory>> {
    plan(spec, SLOW_CORPUS, &slow_quotas(spec), SlowCategory::code)
}

pub fn plan_feedback_corpus(spec: &CorpusSpec) -> Vec<Slot<FeedbackCase>> {
    plan(spec, FEEDBACK_CORPUS, &feedback_quotas(spec), FeedbackCase::code)
}

/// Pool-reuse notes: one line per category whose quota exceeds its pool.
pub fn reuse_notes<C: Copy>(slots: &[Slot<C>], pool: &Pool, describe: impl Fn(&C) -> (String, Option<DistortionKind>)) -> Vec<String> {
    let mut notes = Vec::new();
    for s in slots.iter().filter(|s| s.index == 0) {
        let (tag, source) = describe(&s.category);
        let n = pool.for_source(source).len();
        if s.quota > n {
            notes.push(alloc::format!("{tag}: quota {} exceeds pool of {n}; images reused with distinct seeds", s.quota));
        }
    }
    notes
}

pub fn describe_slow(c: &SlowCategory) -> (String, Option<DistortionKind>) {
    (c.tag(), c.source())
}

/// A rendered record before its image is written.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedRecord {
    pub image: ImageState,
    pub user_text: String,
    pub assistant_text: String,
    pub category: String,
    pub seed: u64,
}

/// The JSONL line for one record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub image_path: String,
    pub user_text: String,
    pub assistant_text: String,
    pub category: String,
    /// Kinds left on the image's provenance stack.
    pub stack: Vec<DistortionKind>,
    pub seed: u64,
}

impl RenderedRecord {
    pub fn into_record(self, image_path: String) -> InstructionRecord {
        InstructionRecord {
            image_path,
            stack: self.image.stack().iter().map(|d| d.kind()).collect(),
            user_text: self.user_text,
            assistant_text: self.assistant_text,
            category: self.category,
            seed: self.seed,
        }
    }
}

fn clean_crop(pool: &Pool, source: Option<DistortionKind>, index: usize, quota: usize, seed: u64) -> Result<ImageState, DatagenError> {
    let images = pool.for_source(source);
    if images.is_empty() {
        return Err(DatagenError::EmptyPool);
    }
    let src = &images[pool_index(index, quota, images.len())];
    let crop = Crop::sample(src.width(), src.height(), seed);
    Ok(ImageState::clean(crop.apply(src)).map_err(DegradeError::from)?)
}

fn render_plan(degrader: &Degrader, clean: &ImageState, plan: &HybridPlan) -> Result<ImageState, DatagenError> {
    Ok(degrader.render(clean, plan)?)
}

fn plan_containing(kind: DistortionKind, seed: u64) -> Result<HybridPlan, DatagenError> {
    Ok(sample_plan_containing(seed, kind)?)
}

/// A general or weather+ plan, 12:8 as in the SlowAgent hybrid split.
fn any_hybrid_plan(seed: u64) -> HybridPlan {
    let mut g = rng::rng(rng::derive(seed, 0x4b1d));
    let class = if g.random_range(0..20) < 12 { PlanClass::General } else { PlanClass::WeatherPlus };
    sample_hybrid_plan(seed, class)
}

pub fn render_slow(slot: &Slot<SlowCategory>, pool: &Pool, degrader: &Degrader) -> Result<RenderedRecord, DatagenError> {
    let clean = clean_crop(pool, slot.category.source(), slot.index, slot.quota, slot.seed)?;
    let image = match slot.category {
        SlowCategory::Single(k) => {
            let inst = sample_instance(k, rng::derive(slot.seed, 1))?;
            degrader.apply(&clean, &inst)?
        }
        SlowCategory::WeatherPlus(k) => render_plan(degrader, &clean, &plan_containing(k, rng::derive(slot.seed, 2))?)?,
        SlowCategory::General => render_plan(degrader, &clean, &sample_hybrid_plan(rng::derive(slot.seed, 3), PlanClass::General))?,
    };
    let mut g = rng::rng(rng::derive(slot.seed, 4));
    let question = QUESTIONS[g.random_range(0..QUESTIONS.len())];
    Ok(RenderedRecord {
        image,
        user_text: templates::slowagent_user(question),
        assistant_text: templates::slowagent_assistant(slot.category.label()),
        category: slot.category.tag(),
        seed: slot.seed,
    })
}

pub fn describe_feedback(c: &FeedbackCase) -> (String, Option<DistortionKind>) {
    let source = match c {
        FeedbackCase::CleanCorrect(k) => Some(*k),
        _ => None,
    };
    (c.tag(), source)
}

/// Degrades a crop per the case, restores it with a registry tool, and
/// checks the label against the resulting stack.
pub fn render_feedback(
    slot: &Slot<FeedbackCase>,
    pool: &Pool,
    degrader: &Degrader,
    tools: &ToolRegistry,
) -> Result<RenderedRecord, DatagenError> {
    let mut g = rng::rng(rng::derive(slot.seed, 5));
    let single = DistortionKind::SINGLE[slot.index % DistortionKind::SINGLE.len()];
    let (distorted_source, tool, plan): (Option<DistortionKind>, ToolId, Option<HybridPlan>) = match slot.category {
        FeedbackCase::CleanCorrect(k) => (Some(k), ToolId::for_kind(k), None),
        FeedbackCase::CleanHybridOnHybrid => (None, ToolId::HYBRID, Some(any_hybrid_plan(slot.seed))),
        FeedbackCase::CleanHybridOnSingle => (Some(single), ToolId::HYBRID, None),
        FeedbackCase::WrongTool => {
            let wrong: Vec<DistortionKind> = DistortionKind::SINGLE.iter().copied().filter(|&k| k != single).collect();
            (Some(single), ToolId::for_kind(wrong[g.random_range(0..wrong.len())]), None)
        }
        FeedbackCase::SingleOnHybrid(k) => (None, ToolId::for_kind(k), Some(plan_containing(k, rng::derive(slot.seed, 6))?)),
    };
    let clean = clean_crop(pool, describe_feedback(&slot.category).1, slot.index, slot.quota, slot.seed)?;
    let distorted = match (&plan, distorted_source) {
        (Some(p), _) => render_plan(degrader, &clean, p)?,
        (None, Some(k)) => degrader.apply(&clean, &sample_instance(k, rng::derive(slot.seed, 1))?)?,
        (None, None) => unreachable!("every case names a plan or a single kind"),
    };
    let restored = tools.invoke(tool, &distorted)?.image;
    let label = slot.category.clean();
    let stack_clean = restored.provenance.as_ref().is_some_and(|p| p.originals().next().is_none());
    if stack_clean != label {
        return Err(DatagenError::LabelMismatch { category: slot.category.tag(), index: slot.index, label });
    }
    Ok(RenderedRecord {
        image: restored,
        user_text: templates::feedback_user(&[tool]),
        assistant_text: String::from(templates::feedback_assistant(label)),
        category: slot.category.tag(),
        seed: slot.seed,
    })
}

/// Colourful synthetic clean images for when no pool is supplied: smooth
/// gradients, flat shapes with hard edges, and a little periodic texture.
pub fn synthetic_pool(seed: u64, count: usize, min_side: u32, max_side: u32) -> Vec<Raster> {
    (0..count).map(|i| synthetic_image(rng::derive(seed, i as u64), min_side, max_side)).collect()
}

pub fn synthetic_image(seed: u64, min_side: u32, max_side: u32) -> Raster {
    let mut g = rng::rng(seed);
    let w = g.random_range(min_side..=max_side);
    let h = g.random_range(min_side..=max_side);
    let c0: [f64; 3] = core::array::from_fn(|_| g.random_range(20.0..235.0));
    let c1: [f64; 3] = core::array::from_fn(|_| g.random_range(20.0..235.0));
    let angle = g.random_range(0.0..core::f64::consts::TAU);
    let (ca, sa) = (libm::cos(angle), libm::sin(angle));
    let freq = g.random_range(0.02..0.15);
    let amp = g.random_range(0.0..18.0);
    struct Shape {
        cx: f64,
        cy: f64,
        r: f64,
        round: bool,
        rgb: [f64; 3],
    }
    let shapes: Vec<Shape> = (0..g.random_range(4..12))
        .map(|_| Shape {
            cx: g.random_range(0.0..w as f64),
            cy: g.random_range(0.0..h as f64),
            r: g.random_range(12.0..(w.min(h) as f64 / 3.0).max(13.0)),
            round: g.random_bool(0.5),
            rgb: core::array::from_fn(|_| g.random_range(0.0..255.0)),
        })
        .collect();
    let diag = libm::sqrt((w * w + h * h) as f64);
    Raster::from_fn(w, h, |x, y| {
        let (fx, fy) = (x as f64, y as f64);
        let t = ((fx * ca + fy * sa) / diag + 1.0) / 2.0;
        let tex = amp * libm::sin(freq * fx) * libm::cos(freq * fy);
        let mut px: [f64; 3] = core::array::from_fn(|c| c0[c] * (1.0 - t) + c1[c] * t + tex);
        for s in &shapes {
            let (dx, dy) = (fx - s.cx, fy - s.cy);
            let inside = if s.round { dx * dx + dy * dy <= s.r * s.r } else { libm::fabs(dx) <= s.r && libm::fabs(dy) <= s.r * 0.6 };
            if inside {
                px = s.rgb;
            }
        }
        px.map(|v| libm::round(v.clamp(0.0, 255.0)) as u8)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tools::Simulator;

    fn spec() -> CorpusSpec {
        CorpusSpec::new(0.01, 42).unwrap()
    }

    fn pool() -> Pool {
        Pool::new(synthetic_pool(3, 6, 240, 320)).unwrap()
    }

    #[test]
    fn counts_at_one_percent() {
        let slow = plan_slow_corpus(&spec());
        assert_eq!(slow.len(), 700);
        assert_eq!(slow.iter().filter(|s| s.category.label() == DistortionKind::Hybrid).count(), 200);
        assert_eq!(slow.iter().filter(|s| s.category == SlowCategory::Single(DistortionKind::Jpeg)).count(), 50);
        let fb = plan_feedback_corpus(&spec());
        assert_eq!(fb.len(), 630);
        assert_eq!(fb.iter().filter(|s| s.category.clean()).count(), 300);
    }

    #[test]
    fn full_scale_counts_match_paper_totals() {
        let full = CorpusSpec::new(1.0, 0).unwrap();
        assert_eq!(slow_quotas(&full).iter().map(|q| q.1).sum::<usize>(), 70_000);
        let fb = feedback_quotas(&full);
        assert_eq!(fb.iter().filter(|q| q.0.clean()).map(|q| q.1).sum::<usize>(), 30_000);
        assert_eq!(fb.iter().filter(|q| !q.0.clean()).map(|q| q.1).sum::<usize>(), 33_000);
        assert_eq!(scaled(1e-9, 5000), 1);
        assert!(CorpusSpec::new(0.0, 0).is_err() && CorpusSpec::new(1.5, 0).is_err());
    }

    #[test]
    fn linear_pool_mapping_is_even() {
        let picks: Vec<usize> = (0..5).map(|i| pool_index(i, 5, 20)).collect();
        assert_eq!(picks, [0, 4, 8, 12, 16]);
        let reuse: Vec<usize> = (0..6).map(|i| pool_index(i, 6, 3)).collect();
        assert_eq!(reuse, [0, 0, 1, 1, 2, 2]);
    }

    #[test]
    fn crops_are_square_and_in_range() {
        for s in 0..200 {
            let c = Crop::sample(900, 800, s);
            assert!((MIN_CROP..=MAX_CROP).contains(&c.side));
            assert!(c.x + c.side <= 900 && c.y + c.side <= 800);
        }
        let r = synthetic_image(1, 240, 260);
        let c = Crop::sample(r.width(), r.height(), 9);
        let out = c.apply(&r);
        assert_eq!(out.dims(), (c.side, c.side));
    }

    #[test]
    fn tiny_synthetic_images() {
        for seed in 0..50 {
            let r = synthetic_image(seed, 8, 36);
            assert!((8..=36).contains(&r.width()) && (8..=36).contains(&r.height()));
        }
    }

    #[test]
    fn slow_records_render_deterministically() {
        let degrader = Degrader::with_transform_proxies();
        let p = pool();
        let slots = plan_slow_corpus(&spec());
        for slot in [&slots[0], &slots[260], &slots[520], &slots[650]] {
            let a = render_slow(slot, &p, &degrader).unwrap();
            assert_eq!(a, render_slow(slot, &p, &degrader).unwrap());
            assert_eq!(templates::parse_slowagent_assistant(&a.assistant_text), Some(slot.category.label()));
            let kinds: Vec<_> = a.image.stack().iter().map(|d| d.kind()).collect();
            match slot.category {
                SlowCategory::Single(k) => assert_eq!(kinds, [k]),
                SlowCategory::WeatherPlus(k) => assert_eq!(kinds[0], k),
                SlowCategory::General => assert!(kinds.len() >= 2),
            }
        }
    }

    #[test]
    fn feedback_labels_follow_the_cases() {
        let degrader = Degrader::with_transform_proxies();
        let tools = ToolRegistry::simulated(Arc::new(Simulator::new(Default::default(), degrader.clone())));
        let p = pool();
        let spec = CorpusSpec::new(0.0004, 7).unwrap();
        for slot in plan_feedback_corpus(&spec) {
            let r = render_feedback(&slot, &p, &degrader, &tools).unwrap();
            assert_eq!(templates::parse_feedback_answer(&r.assistant_text), Some(slot.category.clean()));
            assert!(r.user_text.contains("RESTORATION HISTORY: de-"));
        }
    }

    #[test]
    fn reuse_is_reported() {
        let p = pool();
        let notes = reuse_notes(&plan_slow_corpus(&spec()), &p, describe_slow);
        assert_eq!(notes.len(), 15);
    }
}
