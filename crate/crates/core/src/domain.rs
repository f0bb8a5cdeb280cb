//! Shared domain types: the distortion taxonomy, tool identifiers, pixel
//! buffers and their degradation provenance.

use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

/// Smallest accepted side of an [`ImageState`].
pub const MIN_SIDE: u32 = 32;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DomainError {
    #[error("unknown distortion kind `{0}`")]
    UnknownKind(String),
    #[error("unknown tool `{0}`")]
    UnknownTool(String),
    #[error("`{0}` is a simulator-internal kind and has no restoration tool")]
    NotUserFacing(DistortionKind),
    #[error("pixel buffer holds {got} bytes, expected {expected} for {width}x{height} RGB")]
    BufferSize { width: u32, height: u32, expected: usize, got: usize },
    #[error("image is {width}x{height}; both sides must be at least {MIN_SIDE}")]
    TooSmall { width: u32, height: u32 },
    #[error("content hash must be 64 hex characters")]
    BadHash,
}

/// The distortion taxonomy. Declaration order is the canonical order used
/// for every deterministic tie-break.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistortionKind {
    Noise,
    /// Gaussian blur.
    Blur,
    MotionBlur,
    Jpeg,
    Hevc,
    Vvc,
    RainStreak,
    RainDrop,
    Haze,
    LowLight,
    Hybrid,
    /// Imperfect-removal residue left by a restoration tool (simulator only).
    Residual,
    /// Damage done by a mismatched restoration tool (simulator only).
    Artifact,
}

impl DistortionKind {
    pub const ALL: [DistortionKind; 13] = [
        Self::Noise,
        Self::Blur,
        Self::MotionBlur,
        Self::Jpeg,
        Self::Hevc,
        Self::Vvc,
        Self::RainStreak,
        Self::RainDrop,
        Self::Haze,
        Self::LowLight,
        Self::Hybrid,
        Self::Residual,
        Self::Artifact,
    ];

    /// The ten single distortions that can be synthesized on their own.
    pub const SINGLE: [DistortionKind; 10] = [
        Self::Noise,
        Self::Blur,
        Self::MotionBlur,
        Self::Jpeg,
        Self::Hevc,
        Self::Vvc,
        Self::RainStreak,
        Self::RainDrop,
        Self::Haze,
        Self::LowLight,
    ];

    /// Kinds an agent may name: the ten singles plus `hybrid`.
    pub const USER_FACING: [DistortionKind; 11] = [
        Self::Noise,
        Self::Blur,
        Self::MotionBlur,
        Self::Jpeg,
        Self::Hevc,
        Self::Vvc,
        Self::RainStreak,
        Self::RainDrop,
        Self::Haze,
        Self::LowLight,
        Self::Hybrid,
    ];

    /// Real-world weather and illumination distortions, which only ever
    /// combine with noise or JPEG in hybrid plans.
    pub const WEATHER: [DistortionKind; 4] =
        [Self::RainStreak, Self::RainDrop, Self::Haze, Self::LowLight];

    pub const fn as_str(self) -> &'static str {
        match self {
            Self::Noise => "noise",
            Self::Blur => "blur",
            Self::MotionBlur => "motionblur",
            Self::Jpeg => "jpeg",
            Self::Hevc => "hevc",
            Self::Vvc => "vvc",
            Self::RainStreak => "rainstreak",
            Self::RainDrop => "raindrop",
            Self::Haze => "haze",
            Self::LowLight => "lowlight",
            Self::Hybrid => "hybrid",
            Self::Residual => "residual",
            Self::Artifact => "artifact",
        }
    }

    /// Position in the canonical order.
    pub const fn rank(self) -> usize {
        self as usize
    }

    pub const fn is_user_facing(self) -> bool {
        !matches!(self, Self::Residual | Self::Artifact)
    }

    /// True for kinds that appear as a synthesized source degradation.
    pub const fn is_single(self) -> bool {
        !matches!(self, Self::Hybrid | Self::Residual | Self::Artifact)
    }

    /// True for the entries a restoration tool is meant to remove, as opposed
    /// to residue the simulator leaves behind.
    pub const fn is_original(self) -> bool {
        self.is_single()
    }

    pub const fn is_weather(self) -> bool {
        matches!(self, Self::RainStreak | Self::RainDrop | Self::Haze | Self::LowLight)
    }
}

impl fmt::Display for DistortionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DistortionKind {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| DomainError::UnknownKind(s.to_string()))
    }
}

/// A restoration tool name, `de-<kind>`. Exactly eleven values exist, one per
/// user-facing [`DistortionKind`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ToolId(DistortionKind);

impl ToolId {
    pub const HYBRID: ToolId = ToolId(DistortionKind::Hybrid);

    pub fn all() -> impl Iterator<Item = ToolId> {
        DistortionKind::USER_FACING.into_iter().map(ToolId)
    }

    pub fn singles() -> impl Iterator<Item = ToolId> {
        DistortionKind::SINGLE.into_iter().map(ToolId)
    }

    /// Const constructor; panics on the simulator-internal kinds.
    pub const fn for_kind(kind: DistortionKind) -> ToolId {
        assert!(kind.is_user_facing(), "simulator-internal kind has no tool");
        ToolId(kind)
    }

    /// The kind this tool removes.
    pub const fn kind(self) -> DistortionKind {
        self.0
    }

    pub const fn is_hybrid(self) -> bool {
        matches!(self.0, DistortionKind::Hybrid)
    }

    pub fn name(self) -> String {
        let mut s = String::from("de-");
        s.push_str(self.0.as_str());
        s
    }
}

/// Maps a user-facing kind onto its tool.
pub fn tool_for_kind(kind: DistortionKind) -> Result<ToolId, DomainError> {
    if kind.is_user_facing() {
        Ok(ToolId(kind))
    } else {
        Err(DomainError::NotUserFacing(kind))
    }
}

impl TryFrom<DistortionKind> for ToolId {
    type Error = DomainError;

    fn try_from(kind: DistortionKind) -> Result<Self, Self::Error> {
        tool_for_kind(kind)
    }
}

impl fmt::Display for ToolId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "de-{}", self.0)
    }
}

impl FromStr for ToolId {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let kind = s
            .strip_prefix("de-")
            .and_then(|rest| rest.parse::<DistortionKind>().ok())
            .filter(|k| k.is_user_facing())
            .ok_or_else(|| DomainError::UnknownTool(s.to_string()))?;
        Ok(ToolId(kind))
    }
}

impl Serialize for ToolId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ToolId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// SHA-256 digest, serialized as 64 lowercase hex characters.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ContentHash(pub [u8; 32]);

impl ContentHash {
    pub fn of_bytes(bytes: &[u8]) -> Self {
        ContentHash(Sha256::digest(bytes).into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for ContentHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ContentHash({})", self.to_hex())
    }
}

impl fmt::Display for ContentHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl FromStr for ContentHash {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out).map_err(|_| DomainError::BadHash)?;
        Ok(ContentHash(out))
    }
}

impl Serialize for ContentHash {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for ContentHash {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Interleaved 8-bit RGB pixels.
#[derive(Clone, PartialEq, Eq)]
pub struct Raster {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl fmt::Debug for Raster {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Raster")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl Raster {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self, DomainError> {
        let expected = width as usize * height as usize * 3;
        if data.len() != expected {
            return Err(DomainError::BufferSize { width, height, expected, got: data.len() });
        }
        Ok(Raster { width, height, data })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let data = rgb.iter().copied().cycle().take(width as usize * height as usize * 3).collect();
        Raster { width, height, data }
    }

    /// Builds a raster by evaluating `f(x, y)` for every pixel.
    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Raster { width, height, data }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Hash of dimensions plus pixels.
    pub fn digest(&self) -> ContentHash {
        let mut h = Sha256::new();
        h.update(self.width.to_le_bytes());
        h.update(self.height.to_le_bytes());
        h.update(&self.data);
        ContentHash(h.finalize().into())
    }

    /// Copies the `side`-by-`side` square at (`x0`, `y0`).
    pub fn crop(&self, x0: u32, y0: u32, w: u32, h: u32) -> Raster {
        let mut data = Vec::with_capacity(w as usize * h as usize * 3);
        let stride = self.width as usize * 3;
        for y in y0..y0 + h {
            let row = y as usize * stride;
            data.extend_from_slice(&self.data[row + x0 as usize * 3..row + (x0 + w) as usize * 3]);
        }
        Raster { width: w, height: h, data }
    }

    /// Rotates by `quarter_turns` x 90 degrees clockwise.
    pub fn rotate90(&self, quarter_turns: u8) -> Raster {
        let (w, h) = (self.width, self.height);
        match quarter_turns % 4 {
            0 => self.clone(),
            1 => Raster::from_fn(h, w, |x, y| self.pixel(y, h - 1 - x)),
            2 => Raster::from_fn(w, h, |x, y| self.pixel(w - 1 - x, h - 1 - y)),
            _ => Raster::from_fn(h, w, |x, y| self.pixel(w - 1 - y, x)),
        }
    }

    pub fn flip_horizontal(&self) -> Raster {
        Raster::from_fn(self.width, self.height, |x, y| self.pixel(self.width - 1 - x, y))
    }

    pub fn flip_vertical(&self) -> Raster {
        Raster::from_fn(self.width, self.height, |x, y| self.pixel(x, self.height - 1 - y))
    }
}

/// One synthesized degradation: a recipe plus the seed that drives any
/// randomness inside it. Serialized flat, e.g.
/// `{"kind":"noise","sigma":25.0,"seed":7}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionInstance {
    #[serde(flatten)]
    pub recipe: Recipe,
    pub seed: u64,
}

impl DistortionInstance {
    pub fn new(recipe: Recipe, seed: u64) -> Self {
        DistortionInstance { recipe, seed }
    }

    pub fn kind(&self) -> DistortionKind {
        self.recipe.kind()
    }
}

/// Recipe parameters per kind. Bounds live in [`crate::degrade::ranges`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Recipe {
    Noise { sigma: f64 },
    Blur { sigma: f64 },
    MotionBlur { length: f64, angle: f64 },
    Jpeg { quality: u8 },
    Hevc { qp: u8 },
    Vvc { qp: u8 },
    RainStreak { density: f64, length: f64 },
    RainDrop { count: u32, radius: f64 },
    Haze { transmission: f64, airlight: f64 },
    LowLight { gain: f64, gamma: f64 },
    Residual { sigma: f64 },
    Artifact { sigma: f64 },
}

impl Recipe {
    pub fn kind(&self) -> DistortionKind {
        match self {
            Recipe::Noise { .. } => DistortionKind::Noise,
            Recipe::Blur { .. } => DistortionKind::Blur,
            Recipe::MotionBlur { .. } => DistortionKind::MotionBlur,
            Recipe::Jpeg { .. } => DistortionKind::Jpeg,
            Recipe::Hevc { .. } => DistortionKind::Hevc,
            Recipe::Vvc { .. } => DistortionKind::Vvc,
            Recipe::RainStreak { .. } => DistortionKind::RainStreak,
            Recipe::RainDrop { .. } => DistortionKind::RainDrop,
            Recipe::Haze { .. } => DistortionKind::Haze,
            Recipe::LowLight { .. } => DistortionKind::LowLight,
            Recipe::Residual { .. } => DistortionKind::Residual,
            Recipe::Artifact { .. } => DistortionKind::Artifact,
        }
    }
}

/// Ground truth carried by a synthesized image: the clean reference and the
/// ordered degradations applied to it.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub clean: Arc<Raster>,
    pub clean_ref: ContentHash,
    pub stack: Vec<DistortionInstance>,
}

impl Provenance {
    pub fn new(clean: Arc<Raster>, stack: Vec<DistortionInstance>) -> Self {
        let clean_ref = clean.digest();
        Provenance { clean, clean_ref, stack }
    }

    /// Entries a restoration tool is meant to remove (no residue).
    pub fn originals(&self) -> impl Iterator<Item = &DistortionInstance> {
        self.stack.iter().filter(|d| d.kind().is_original())
    }

    pub fn original_kinds(&self) -> Vec<DistortionKind> {
        self.originals().map(DistortionInstance::kind).collect()
    }
}

/// A validated image, optionally with its degradation provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageState {
    pub raster: Raster,
    pub provenance: Option<Provenance>,
}

impl ImageState {
    pub fn new(raster: Raster) -> Result<Self, DomainError> {
        check_size(&raster)?;
        Ok(ImageState { raster, provenance: None })
    }

    /// A clean reference: provenance with an empty stack.
    pub fn clean(raster: Raster) -> Result<Self, DomainError> {
        check_size(&raster)?;
        let clean = Arc::new(raster.clone());
        Ok(ImageState { raster, provenance: Some(Provenance::new(clean, Vec::new())) })
    }

    pub fn with_provenance(raster: Raster, provenance: Provenance) -> Result<Self, DomainError> {
        check_size(&raster)?;
        Ok(ImageState { raster, provenance: Some(provenance) })
    }

    pub fn width(&self) -> u32 {
        self.raster.width()
    }

    pub fn height(&self) -> u32 {
        self.raster.height()
    }

    pub fn stack(&self) -> &[DistortionInstance] {
        self.provenance.as_ref().map(|p| p.stack.as_slice()).unwrap_or(&[])
    }
}

fn check_size(r: &Raster) -> Result<(), DomainError> {
    if r.width() < MIN_SIDE || r.height() < MIN_SIDE {
        return Err(DomainError::TooSmall { width: r.width(), height: r.height() });
    }
    Ok(())
}

/// Full-reference quality plus cost of a restoration run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    #[serde(with = "crate::metrics::psnr_serde")]
    pub psnr_db: f64,
    pub ssim: f64,
    pub steps: u32,
    pub wall_ms: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tool_names_follow_de_prefix() {
        assert_eq!(tool_for_kind(DistortionKind::Noise).unwrap().name(), "de-noise");
        assert_eq!(tool_for_kind(DistortionKind::Hybrid).unwrap().to_string(), "de-hybrid");
        assert_eq!(
            tool_for_kind(DistortionKind::Residual),
            Err(DomainError::NotUserFacing(DistortionKind::Residual))
        );
        assert!(tool_for_kind(DistortionKind::Artifact).is_err());
    }

    #[test]
    fn tool_round_trip_covers_all_user_facing_kinds() {
        let tools: Vec<ToolId> = ToolId::all().collect();
        assert_eq!(tools.len(), 11);
        for kind in DistortionKind::USER_FACING {
            let tool = tool_for_kind(kind).unwrap();
            let parsed: ToolId = tool.to_string().parse().unwrap();
            assert_eq!(parsed.kind(), kind);
        }
        assert!("de-residual".parse::<ToolId>().is_err());
        assert!("noise".parse::<ToolId>().is_err());
    }

    #[test]
    fn canonical_order_is_a_total_order() {
        let all = DistortionKind::ALL;
        for a in all {
            for b in all {
                assert_eq!(a.cmp(&b), a.rank().cmp(&b.rank()));
                assert_eq!(a.cmp(&b), b.cmp(&a).reverse());
                for c in all {
                    if a < b && b < c {
                        assert!(a < c);
                    }
                }
            }
        }
    }

    #[test]
    fn kinds_serialize_lowercase() {
        let s = serde_json::to_string(&DistortionKind::MotionBlur).unwrap();
        assert_eq!(s, "\"motionblur\"");
        let s = serde_json::to_string(&ToolId::HYBRID).unwrap();
        assert_eq!(s, "\"de-hybrid\"");
        for k in DistortionKind::ALL {
            assert_eq!(k.as_str().parse::<DistortionKind>().unwrap(), k);
            let json = serde_json::to_string(&k).unwrap();
            assert_eq!(json, alloc::format!("\"{}\"", k.as_str()));
        }
    }

    #[test]
    fn instance_serializes_flat() {
        let d = DistortionInstance::new(Recipe::Noise { sigma: 25.0 }, 7);
        let json = serde_json::to_string(&d).unwrap();
        assert_eq!(json, r#"{"kind":"noise","sigma":25.0,"seed":7}"#);
        let back: DistortionInstance = serde_json::from_str(&json).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn small_images_are_rejected() {
        assert!(ImageState::new(Raster::filled(31, 64, [0; 3])).is_err());
        assert!(ImageState::new(Raster::filled(32, 32, [0; 3])).is_ok());
        assert!(Raster::new(2, 2, alloc::vec![0; 11]).is_err());
    }

    #[test]
    fn rotations_compose() {
        let r = Raster::from_fn(5, 3, |x, y| [x as u8, y as u8, 0]);
        assert_eq!(r.rotate90(1).dims(), (3, 5));
        assert_eq!(r.rotate90(1).rotate90(3), r);
        assert_eq!(r.rotate90(2), r.flip_horizontal().flip_vertical());
        assert_eq!(r.rotate90(1).pixel(2, 0), r.pixel(0, 0));
    }
}
