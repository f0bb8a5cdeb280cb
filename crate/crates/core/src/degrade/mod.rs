//! Deterministic degradation synthesis.
//!
//! Every kind renders from its [`Recipe`] and the instance seed alone, so a
//! clean reference plus its recorded stack reproduces a degraded image bit
//! for bit. HEVC and VVC go through an [`IntraCodec`] supplied by the caller;
//! without one they fail with a capability error.

pub mod filters;
pub mod transform;
pub mod weather;

use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{DistortionInstance, DistortionKind, DomainError, ImageState, Provenance, Raster, Recipe};
use crate::rng;

/// Sampling bounds per kind. Uniform draws use the instance seed.
pub mod ranges {
    pub const BLUR_SIGMA: (f64, f64) = (0.2, 4.0);
    pub const NOISE_SIGMA: (f64, f64) = (15.0, 50.0);
    pub const JPEG_QUALITY: (u8, u8) = (10, 40);
    pub const CODEC_QP: [u8; 3] = [32, 37, 42];
    pub const MOTION_LENGTH: (f64, f64) = (7.0, 21.0);
    /// Half-open: `[0, 180)`.
    pub const MOTION_ANGLE: (f64, f64) = (0.0, 180.0);
    pub const RAIN_DENSITY: (f64, f64) = (0.1, 0.5);
    pub const RAIN_LENGTH: (f64, f64) = (20.0, 60.0);
    pub const DROP_COUNT: (u32, u32) = (5, 30);
    pub const DROP_RADIUS: (f64, f64) = (4.0, 16.0);
    pub const HAZE_TRANSMISSION: (f64, f64) = (0.3, 0.8);
    pub const HAZE_AIRLIGHT: (f64, f64) = (180.0, 255.0);
    pub const LOWLIGHT_GAIN: (f64, f64) = (0.1, 0.4);
    pub const LOWLIGHT_GAMMA: (f64, f64) = (1.5, 3.0);
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DegradeError {
    #[error("{kind} parameter `{param}` = {value} outside [{lo}, {hi}]")]
    OutOfRange { kind: DistortionKind, param: &'static str, value: f64, lo: f64, hi: f64 },
    #[error("{kind} requires the external encoder `{binary}`, which is not configured")]
    CodecUnavailable { kind: DistortionKind, binary: &'static str },
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("{0} is not a synthesizable source degradation")]
    NotSynthesizable(DistortionKind),
    #[error("invalid hybrid plan: {0}")]
    InvalidPlan(String),
    #[error("render expects a clean reference, found {0} stack entries")]
    NotClean(usize),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// Failure inside an intra codec round trip.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{codec}: {message}")]
pub struct CodecError {
    pub codec: String,
    pub message: String,
}

/// An all-intra encode/decode round trip at a QP. Only the reconstruction is
/// kept; the bitstream is discarded.
pub trait IntraCodec: Send + Sync {
    fn name(&self) -> &str;
    fn round_trip(&self, raster: &Raster, qp: u8) -> Result<Raster, CodecError>;
}

/// In-process block-transform stand-in for HEVC (8x8) or VVC (16x16)
/// intra coding with the standard QP-to-step mapping.
#[derive(Debug, Clone, Copy)]
pub struct TransformProxy {
    pub block: usize,
    name: &'static str,
}

impl TransformProxy {
    pub const HEVC: TransformProxy = TransformProxy { block: 8, name: "hevc-transform-proxy" };
    pub const VVC: TransformProxy = TransformProxy { block: 16, name: "vvc-transform-proxy" };
}

impl IntraCodec for TransformProxy {
    fn name(&self) -> &str {
        self.name
    }

    fn round_trip(&self, raster: &Raster, qp: u8) -> Result<Raster, CodecError> {
        Ok(transform::flat_intra(raster, qp, self.block))
    }
}

/// Reference encoder binary expected for each codec kind.
pub fn codec_binary(kind: DistortionKind) -> &'static str {
    match kind {
        DistortionKind::Hevc => "TAppEncoder (HM-18.0)",
        _ => "EncoderApp (VTM-21.0)",
    }
}

fn check(kind: DistortionKind, param: &'static str, value: f64, (lo, hi): (f64, f64)) -> Result<(), DegradeError> {
    if value.is_finite() && value >= lo && value <= hi {
        Ok(())
    } else {
        Err(DegradeError::OutOfRange { kind, param, value, lo, hi })
    }
}

fn check_qp(kind: DistortionKind, qp: u8) -> Result<(), DegradeError> {
    if ranges::CODEC_QP.contains(&qp) {
        Ok(())
    } else {
        Err(DegradeError::OutOfRange { kind, param: "qp", value: qp as f64, lo: 32.0, hi: 42.0 })
    }
}

/// Checks a recipe against its bounds. Noise also accepts `sigma = 0`, the
/// identity case.
pub fn validate(recipe: &Recipe) -> Result<(), DegradeError> {
    use ranges::*;
    let kind = recipe.kind();
    match *recipe {
        Recipe::Noise { sigma: 0.0 } => Ok(()),
        Recipe::Noise { sigma } => check(kind, "sigma", sigma, NOISE_SIGMA),
        Recipe::Blur { sigma } => check(kind, "sigma", sigma, BLUR_SIGMA),
        Recipe::MotionBlur { length, angle } => {
            check(kind, "length", length, MOTION_LENGTH)?;
            if !(angle.is_finite() && (MOTION_ANGLE.0..MOTION_ANGLE.1).contains(&angle)) {
                return Err(DegradeError::OutOfRange { kind, param: "angle", value: angle, lo: 0.0, hi: 180.0 });
            }
            Ok(())
        }
        Recipe::Jpeg { quality } => check(kind, "quality", quality as f64, (JPEG_QUALITY.0 as f64, JPEG_QUALITY.1 as f64)),
        Recipe::Hevc { qp } | Recipe::Vvc { qp } => check_qp(kind, qp),
        Recipe::RainStreak { density, length } => {
            check(kind, "density", density, RAIN_DENSITY)?;
            check(kind, "length", length, RAIN_LENGTH)
        }
        Recipe::RainDrop { count, radius } => {
            check(kind, "count", count as f64, (DROP_COUNT.0 as f64, DROP_COUNT.1 as f64))?;
            check(kind, "radius", radius, DROP_RADIUS)
        }
        Recipe::Haze { transmission, airlight } => {
            check(kind, "transmission", transmission, HAZE_TRANSMISSION)?;
            check(kind, "airlight", airlight, HAZE_AIRLIGHT)
        }
        Recipe::LowLight { gain, gamma } => {
            check(kind, "gain", gain, LOWLIGHT_GAIN)?;
            check(kind, "gamma", gamma, LOWLIGHT_GAMMA)
        }
        Recipe::Residual { sigma } | Recipe::Artifact { sigma } => check(kind, "sigma", sigma, (0.0, 255.0)),
    }
}

/// Draws a recipe uniformly within the bounds for `kind`.
pub fn sample_recipe(kind: DistortionKind, g: &mut impl Rng) -> Result<Recipe, DegradeError> {
    use ranges::*;
    let u = |g: &mut dyn rand::RngCore, (lo, hi): (f64, f64)| g.random_range(lo..=hi);
    Ok(match kind {
        DistortionKind::Noise => Recipe::Noise { sigma: u(g, NOISE_SIGMA) },
        DistortionKind::Blur => Recipe::Blur { sigma: u(g, BLUR_SIGMA) },
        DistortionKind::MotionBlur => Recipe::MotionBlur {
            length: u(g, MOTION_LENGTH),
            angle: g.random_range(MOTION_ANGLE.0..MOTION_ANGLE.1),
        },
        DistortionKind::Jpeg => Recipe::Jpeg { quality: g.random_range(JPEG_QUALITY.0..=JPEG_QUALITY.1) },
        DistortionKind::Hevc => Recipe::Hevc { qp: CODEC_QP[g.random_range(0..3)] },
        DistortionKind::Vvc => Recipe::Vvc { qp: CODEC_QP[g.random_range(0..3)] },
        DistortionKind::RainStreak => Recipe::RainStreak { density: u(g, RAIN_DENSITY), length: u(g, RAIN_LENGTH) },
        DistortionKind::RainDrop => Recipe::RainDrop {
            count: g.random_range(DROP_COUNT.0..=DROP_COUNT.1),
            radius: u(g, DROP_RADIUS),
        },
        DistortionKind::Haze => Recipe::Haze {
            transmission: u(g, HAZE_TRANSMISSION),
            airlight: u(g, HAZE_AIRLIGHT),
        },
        DistortionKind::LowLight => Recipe::LowLight { gain: u(g, LOWLIGHT_GAIN), gamma: u(g, LOWLIGHT_GAMMA) },
        other => return Err(DegradeError::NotSynthesizable(other)),
    })
}

/// Samples a single-kind instance from `seed`.
pub fn sample_instance(kind: DistortionKind, seed: u64) -> Result<DistortionInstance, DegradeError> {
    let mut g = rng::rng(rng::derive(seed, 0x5eed));
    let recipe = sample_recipe(kind, &mut g)?;
    Ok(DistortionInstance::new(recipe, rng::derive(seed, 1)))
}

/// Renders degradations, holding whatever intra codecs are configured.
#[derive(Clone, Default)]
pub struct Degrader {
    hevc: Option<Arc<dyn IntraCodec>>,
    vvc: Option<Arc<dyn IntraCodec>>,
}

impl fmt::Debug for Degrader {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Degrader")
            .field("hevc", &self.hevc.as_ref().map(|c| c.name()))
            .field("vvc", &self.vvc.as_ref().map(|c| c.name()))
            .finish()
    }
}

impl Degrader {
    /// A degrader without codecs; HEVC/VVC instances fail.
    pub fn new() -> Self {
        Self::default()
    }

    /// A degrader whose HEVC/VVC kinds use [`TransformProxy`].
    pub fn with_transform_proxies() -> Self {
        Self::new()
            .with_codec(DistortionKind::Hevc, Arc::new(TransformProxy::HEVC))
            .with_codec(DistortionKind::Vvc, Arc::new(TransformProxy::VVC))
    }

    pub fn with_codec(mut self, kind: DistortionKind, codec: Arc<dyn IntraCodec>) -> Self {
        match kind {
            DistortionKind::Hevc => self.hevc = Some(codec),
            DistortionKind::Vvc => self.vvc = Some(codec),
            _ => {}
        }
        self
    }

    pub fn codec_name(&self, kind: DistortionKind) -> Option<String> {
        let c = match kind {
            DistortionKind::Hevc => self.hevc.as_ref(),
            DistortionKind::Vvc => self.vvc.as_ref(),
            _ => None,
        };
        c.map(|c| c.name().to_string())
    }

    /// True if `kind` can be rendered with this configuration.
    pub fn supports(&self, kind: DistortionKind) -> bool {
        match kind {
            DistortionKind::Hevc => self.hevc.is_some(),
            DistortionKind::Vvc => self.vvc.is_some(),
            DistortionKind::Hybrid => false,
            _ => true,
        }
    }

    /// Applies one instance to a bare raster, which also serves as the
    /// clean reference for artifact layers.
    pub fn render_raster(&self, r: &Raster, d: &DistortionInstance) -> Result<Raster, DegradeError> {
        self.render_layer(r, r, d)
    }

    fn render_layer(&self, r: &Raster, clean: &Raster, d: &DistortionInstance) -> Result<Raster, DegradeError> {
        validate(&d.recipe)?;
        Ok(match d.recipe {
            Recipe::Noise { sigma } => filters::gaussian_noise(r, sigma, d.seed),
            Recipe::Residual { sigma } => filters::quantized_gaussian_layer(r, sigma, d.seed),
            Recipe::Artifact { sigma } => filters::outward_layer(r, clean, sigma, d.seed),
            Recipe::Blur { sigma } => filters::gaussian_blur(r, sigma),
            Recipe::MotionBlur { length, angle } => {
                filters::convolve_sparse(r, &filters::motion_kernel(length, angle))
            }
            Recipe::Jpeg { quality } => transform::jpeg(r, quality),
            Recipe::Hevc { qp } | Recipe::Vvc { qp } => {
                let kind = d.kind();
                let codec = match kind {
                    DistortionKind::Hevc => self.hevc.as_ref(),
                    _ => self.vvc.as_ref(),
                }
                .ok_or(DegradeError::CodecUnavailable { kind, binary: codec_binary(kind) })?;
                let out = codec.round_trip(r, qp)?;
                if out.dims() != r.dims() {
                    return Err(CodecError {
                        codec: codec.name().to_string(),
                        message: alloc::format!("reconstruction is {:?}, input {:?}", out.dims(), r.dims()),
                    }
                    .into());
                }
                out
            }
            Recipe::RainStreak { density, length } => weather::rain_streaks(r, density, length, d.seed),
            Recipe::RainDrop { count, radius } => weather::raindrops(r, count, radius, d.seed),
            Recipe::Haze { transmission, airlight } => weather::haze(r, transmission, airlight),
            Recipe::LowLight { gain, gamma } => weather::low_light(r, gain, gamma),
        })
    }

    /// Applies `d` and records it on the provenance stack. An image without
    /// provenance is treated as its own clean reference.
    pub fn apply(&self, image: &ImageState, d: &DistortionInstance) -> Result<ImageState, DegradeError> {
        let mut provenance = match &image.provenance {
            Some(p) => p.clone(),
            None => Provenance::new(Arc::new(image.raster.clone()), Vec::new()),
        };
        let raster = self.render_layer(&image.raster, &provenance.clean, d)?;
        provenance.stack.push(d.clone());
        Ok(ImageState::with_provenance(raster, provenance)?)
    }

    /// Folds a stack over a clean raster.
    pub fn render_stack(&self, clean: &Raster, stack: &[DistortionInstance]) -> Result<Raster, DegradeError> {
        stack.iter().try_fold(clean.clone(), |r, d| self.render_layer(&r, clean, d))
    }

    /// Renders a hybrid plan over a clean reference.
    pub fn render(&self, clean: &ImageState, plan: &HybridPlan) -> Result<ImageState, DegradeError> {
        plan.validate()?;
        if !clean.stack().is_empty() {
            return Err(DegradeError::NotClean(clean.stack().len()));
        }
        plan.stages.iter().try_fold(clean.clone(), |img, d| self.apply(&img, d))
    }

    /// Re-renders the clean reference through the recorded stack and reports
    /// whether the pixels match.
    pub fn replay_matches(&self, image: &ImageState) -> Result<bool, DegradeError> {
        match &image.provenance {
            Some(p) => Ok(self.render_stack(&p.clean, &p.stack)? == image.raster),
            None => Ok(true),
        }
    }
}

/// [`Degrader::apply`] without codecs.
pub fn apply(image: &ImageState, d: &DistortionInstance) -> Result<ImageState, DegradeError> {
    Degrader::new().apply(image, d)
}

/// [`Degrader::render`] without codecs.
pub fn render(clean: &ImageState, plan: &HybridPlan) -> Result<ImageState, DegradeError> {
    Degrader::new().render(clean, plan)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PlanClass {
    /// Drawn from the six synthetic kinds, ordered blur, noise, compression.
    #[serde(rename = "general")]
    General,
    /// One weather/illumination kind followed by noise and/or JPEG.
    #[serde(rename = "weather+")]
    WeatherPlus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridPlan {
    pub class: PlanClass,
    pub stages: Vec<DistortionInstance>,
}

/// Stage family used for ordering general plans.
fn family(kind: DistortionKind) -> Option<u8> {
    match kind {
        DistortionKind::Blur | DistortionKind::MotionBlur => Some(0),
        DistortionKind::Noise => Some(1),
        DistortionKind::Jpeg | DistortionKind::Hevc | DistortionKind::Vvc => Some(2),
        _ => None,
    }
}

const BLUR_FAMILY: [DistortionKind; 2] = [DistortionKind::Blur, DistortionKind::MotionBlur];
const COMPRESSION_FAMILY: [DistortionKind; 3] = [DistortionKind::Jpeg, DistortionKind::Hevc, DistortionKind::Vvc];

impl HybridPlan {
    pub fn kinds(&self) -> Vec<DistortionKind> {
        self.stages.iter().map(DistortionInstance::kind).collect()
    }

    pub fn validate(&self) -> Result<(), DegradeError> {
        let kinds = self.kinds();
        if kinds.len() < 2 {
            return Err(DegradeError::InvalidPlan(alloc::format!("{} stages, need at least 2", kinds.len())));
        }
        for d in &self.stages {
            validate(&d.recipe)?;
        }
        match self.class {
            PlanClass::General => {
                let fams: Option<Vec<u8>> = kinds.iter().map(|&k| family(k)).collect();
                let fams = fams.ok_or_else(|| DegradeError::InvalidPlan("general plans use the six synthetic kinds".into()))?;
                if fams.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(DegradeError::InvalidPlan("general stages must run blur, noise, compression with one per family".into()));
                }
            }
            PlanClass::WeatherPlus => {
                if !kinds[0].is_weather() {
                    return Err(DegradeError::InvalidPlan("weather+ plans start with a weather/light kind".into()));
                }
                let rest = &kinds[1..];
                let allowed = rest.iter().all(|k| matches!(k, DistortionKind::Noise | DistortionKind::Jpeg));
                let ordered = rest.windows(2).all(|w| w[0] < w[1]);
                if !allowed || !ordered {
                    return Err(DegradeError::InvalidPlan("weather+ companions are noise then jpeg only".into()));
                }
            }
        }
        Ok(())
    }

    /// Builds a plan with the given kinds in the given order, sampling each
    /// stage's recipe from `seed`.
    pub fn from_kinds(class: PlanClass, kinds: &[DistortionKind], seed: u64) -> Result<HybridPlan, DegradeError> {
        let stages = kinds
            .iter()
            .enumerate()
            .map(|(i, &k)| sample_instance(k, rng::derive(seed, i as u64 + 1)))
            .collect::<Result<Vec<_>, _>>()?;
        let plan = HybridPlan { class, stages };
        plan.validate()?;
        Ok(plan)
    }
}

/// Samples a hybrid plan of the given class. Same seed, same plan.
pub fn sample_hybrid_plan(seed: u64, class: PlanClass) -> HybridPlan {
    let mut g = rng::rng(rng::derive(seed, 0x41a9));
    let kinds = match class {
        PlanClass::General => {
            // non-empty family subsets of size >= 2: {B,N}, {B,C}, {N,C}, {B,N,C}
            const SUBSETS: [&[u8]; 4] = [&[0, 1], &[0, 2], &[1, 2], &[0, 1, 2]];
            SUBSETS[g.random_range(0..SUBSETS.len())]
                .iter()
                .map(|f| match f {
                    0 => BLUR_FAMILY[g.random_range(0..BLUR_FAMILY.len())],
                    1 => DistortionKind::Noise,
                    _ => COMPRESSION_FAMILY[g.random_range(0..COMPRESSION_FAMILY.len())],
                })
                .collect::<Vec<_>>()
        }
        PlanClass::WeatherPlus => {
            let weather = DistortionKind::WEATHER[g.random_range(0..4)];
            weather_plan_kinds(weather, g.random_range(0..3))
        }
    };
    HybridPlan::from_kinds(class, &kinds, seed).expect("sampled plans are valid by construction")
}

fn weather_plan_kinds(weather: DistortionKind, companions: u32) -> Vec<DistortionKind> {
    match companions {
        0 => alloc::vec![weather, DistortionKind::Noise],
        1 => alloc::vec![weather, DistortionKind::Jpeg],
        _ => alloc::vec![weather, DistortionKind::Noise, DistortionKind::Jpeg],
    }
}

/// Samples a hybrid plan guaranteed to contain `kind`. Weather kinds yield a
/// weather+ plan led by that kind; the synthetic kinds yield a general plan.
pub fn sample_plan_containing(seed: u64, kind: DistortionKind) -> Result<HybridPlan, DegradeError> {
    let mut g = rng::rng(rng::derive(seed, 0x77c1));
    if kind.is_weather() {
        let kinds = weather_plan_kinds(kind, g.random_range(0..3));
        return HybridPlan::from_kinds(PlanClass::WeatherPlus, &kinds, seed);
    }
    let fam = family(kind).ok_or(DegradeError::NotSynthesizable(kind))?;
    let others: Vec<u8> = (0..3).filter(|&f| f != fam).collect();
    let mut fams = match g.random_range(0..3) {
        0 => alloc::vec![fam, others[0]],
        1 => alloc::vec![fam, others[1]],
        _ => alloc::vec![0, 1, 2],
    };
    fams.sort_unstable();
    let kinds: Vec<DistortionKind> = fams
        .into_iter()
        .map(|f| match f {
            f if f == fam => kind,
            0 => BLUR_FAMILY[g.random_range(0..2)],
            1 => DistortionKind::Noise,
            _ => COMPRESSION_FAMILY[g.random_range(0..3)],
        })
        .collect();
    HybridPlan::from_kinds(PlanClass::General, &kinds, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::psnr;

    fn scene(w: u32, h: u32) -> ImageState {
        ImageState::clean(Raster::from_fn(w, h, |x, y| {
            [(40 + (x * 3 + y) % 170) as u8, (60 + (x * y) % 150) as u8, (90 + (y * 5) % 120) as u8]
        }))
        .unwrap()
    }

    #[test]
    fn zero_noise_is_identity_and_recorded() {
        let img = scene(64, 64);
        let d = DistortionInstance::new(Recipe::Noise { sigma: 0.0 }, 3);
        let out = apply(&img, &d).unwrap();
        assert_eq!(out.raster, img.raster);
        assert_eq!(out.stack(), &[d]);
    }

    #[test]
    fn out_of_range_params_are_rejected() {
        let img = scene(64, 64);
        for recipe in [
            Recipe::Noise { sigma: 10.0 },
            Recipe::Blur { sigma: 4.5 },
            Recipe::Jpeg { quality: 50 },
            Recipe::MotionBlur { length: 9.0, angle: 180.0 },
            Recipe::Haze { transmission: 0.9, airlight: 200.0 },
        ] {
            let err = apply(&img, &DistortionInstance::new(recipe, 0)).unwrap_err();
            assert!(matches!(err, DegradeError::OutOfRange { .. }), "{err:?}");
        }
    }

    #[test]
    fn codec_kinds_need_an_adapter() {
        let img = scene(64, 64);
        let d = DistortionInstance::new(Recipe::Hevc { qp: 37 }, 0);
        let err = apply(&img, &d).unwrap_err();
        assert_eq!(err, DegradeError::CodecUnavailable { kind: DistortionKind::Hevc, binary: "TAppEncoder (HM-18.0)" });
        let bad_qp = DistortionInstance::new(Recipe::Vvc { qp: 30 }, 0);
        assert!(matches!(
            Degrader::with_transform_proxies().apply(&img, &bad_qp),
            Err(DegradeError::OutOfRange { param: "qp", .. })
        ));
        let out = Degrader::with_transform_proxies().apply(&img, &d).unwrap();
        assert_ne!(out.raster, img.raster);
    }

    #[test]
    fn jpeg_is_deterministic_on_large_images() {
        let img = scene(512, 512);
        let d = DistortionInstance::new(Recipe::Jpeg { quality: 10 }, 11);
        let a = apply(&img, &d).unwrap();
        let b = apply(&img, &d).unwrap();
        assert_eq!(a.raster, b.raster);
        let p = psnr(&img.raster, &a.raster).unwrap();
        assert!(p.is_finite() && p > 15.0, "{p}");
    }

    #[test]
    fn render_is_a_fold_of_apply() {
        let img = scene(64, 64);
        let plan = HybridPlan {
            class: PlanClass::General,
            stages: alloc::vec![
                DistortionInstance::new(Recipe::Blur { sigma: 2.0 }, 1),
                DistortionInstance::new(Recipe::Noise { sigma: 25.0 }, 2),
            ],
        };
        let folded = apply(&apply(&img, &plan.stages[0]).unwrap(), &plan.stages[1]).unwrap();
        let rendered = render(&img, &plan).unwrap();
        assert_eq!(rendered, folded);
        assert_eq!(rendered.stack(), plan.stages.as_slice());

        let empty = HybridPlan { class: PlanClass::General, stages: Vec::new() };
        assert!(matches!(render(&img, &empty), Err(DegradeError::InvalidPlan(_))));
        assert!(matches!(render(&rendered, &plan), Err(DegradeError::NotClean(2))));
    }

    #[test]
    fn haze_then_noise_keeps_the_hazy_mean() {
        // Monte Carlo over noise seeds: mean stays at 192 within 0.5
        let img = ImageState::clean(Raster::filled(64, 64, [128; 3])).unwrap();
        let mut total = 0.0;
        let trials = 20;
        for seed in 0..trials {
            let plan = HybridPlan {
                class: PlanClass::WeatherPlus,
                stages: alloc::vec![
                    DistortionInstance::new(Recipe::Haze { transmission: 0.5, airlight: 255.0 }, seed),
                    DistortionInstance::new(Recipe::Noise { sigma: 15.0 }, seed + 100),
                ],
            };
            let out = render(&img, &plan).unwrap();
            let data = out.raster.data();
            total += data.iter().map(|&v| v as f64).sum::<f64>() / data.len() as f64;
        }
        let mean = total / trials as f64;
        assert!((mean - 192.0).abs() <= 0.5, "mean {mean}");
    }

    #[test]
    fn weather_plans_only_add_noise_or_jpeg() {
        let plan = sample_hybrid_plan(7, PlanClass::WeatherPlus);
        assert!(plan.kinds()[0].is_weather());
        assert!(plan.kinds()[1..].iter().all(|k| matches!(k, DistortionKind::Noise | DistortionKind::Jpeg)));
        assert_eq!(plan, sample_hybrid_plan(7, PlanClass::WeatherPlus));
    }

    #[test]
    fn ten_thousand_general_plans_have_two_or_more_ordered_stages() {
        for seed in 0..10_000u64 {
            let plan = sample_hybrid_plan(seed, PlanClass::General);
            assert!(plan.stages.len() >= 2);
            plan.validate().unwrap();
        }
    }

    #[test]
    fn plans_containing_a_kind_contain_it() {
        for kind in DistortionKind::SINGLE {
            for seed in 0..50 {
                let plan = sample_plan_containing(seed, kind).unwrap();
                assert!(plan.kinds().contains(&kind), "{kind} {plan:?}");
                plan.validate().unwrap();
            }
        }
    }

    #[test]
    fn sampled_instances_are_in_range() {
        for kind in DistortionKind::SINGLE {
            for seed in 0..200 {
                validate(&sample_instance(kind, seed).unwrap().recipe).unwrap();
            }
        }
        assert!(sample_instance(DistortionKind::Hybrid, 0).is_err());
    }
}
