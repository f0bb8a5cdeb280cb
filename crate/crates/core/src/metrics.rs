//! Full-reference quality metrics and tool-choice statistics.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::domain::{ContentHash, Raster, ToolId};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("dimension mismatch: {a:?} vs {b:?}")]
    DimensionMismatch { a: (u32, u32), b: (u32, u32) },
    #[error("image {width}x{height} is smaller than the {window}x{window} SSIM window")]
    TooSmall { width: u32, height: u32, window: usize },
    #[error("success rate of an empty invocation list")]
    Empty,
}

/// Constants every metric in this crate uses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub ssim_window: usize,
    pub ssim_sigma: f64,
    pub ssim_c1: f64,
    pub ssim_c2: f64,
    pub psnr_peak: f64,
    /// Luma weights (R, G, B).
    pub luma: [f64; 3],
}

pub const METRIC_CONFIG: MetricConfig = MetricConfig {
    ssim_window: 11,
    ssim_sigma: 1.5,
    ssim_c1: (0.01 * 255.0) * (0.01 * 255.0),
    ssim_c2: (0.03 * 255.0) * (0.03 * 255.0),
    psnr_peak: 255.0,
    luma: [0.299, 0.587, 0.114],
};

impl MetricConfig {
    /// SHA-256 over the little-endian constants, embedded in reports so runs
    /// with different metric settings are never compared silently.
    pub fn fingerprint(&self) -> ContentHash {
        let mut bytes = Vec::with_capacity(80);
        bytes.extend_from_slice(&(self.ssim_window as u64).to_le_bytes());
        for v in [self.ssim_sigma, self.ssim_c1, self.ssim_c2, self.psnr_peak, self.luma[0], self.luma[1], self.luma[2]] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        ContentHash::of_bytes(&bytes)
    }
}

fn same_dims(a: &Raster, b: &Raster) -> Result<(), MetricError> {
    if a.dims() != b.dims() {
        return Err(MetricError::DimensionMismatch { a: a.dims(), b: b.dims() });
    }
    Ok(())
}

pub fn mse(a: &Raster, b: &Raster) -> Result<f64, MetricError> {
    same_dims(a, b)?;
    let sum: u64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as i64 - y as i64;
            (d * d) as u64
        })
        .sum();
    Ok(sum as f64 / a.data().len() as f64)
}

/// PSNR in dB over all RGB samples; `f64::INFINITY` for identical images.
pub fn psnr(a: &Raster, b: &Raster) -> Result<f64, MetricError> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    let peak = METRIC_CONFIG.psnr_peak;
    Ok(10.0 * libm::log10(peak * peak / m))
}

/// Unrounded BT.601 luma plane.
pub fn luma(r: &Raster) -> Vec<f64> {
    let [wr, wg, wb] = METRIC_CONFIG.luma;
    r.data().chunks_exact(3).map(|p| wr * p[0] as f64 + wg * p[1] as f64 + wb * p[2] as f64).collect()
}

/// Normalised 1-D Gaussian window.
pub fn ssim_window_1d() -> Vec<f64> {
    let n = METRIC_CONFIG.ssim_window;
    let s = METRIC_CONFIG.ssim_sigma;
    let c = (n / 2) as f64;
    let mut w: Vec<f64> = (0..n).map(|i| libm::exp(-((i as f64 - c) * (i as f64 - c)) / (2.0 * s * s))).collect();
    let sum: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= sum);
    w
}

/// Valid-mode separable filtering: output is `(w-n+1) x (h-n+1)`.
fn filter_valid(plane: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (ow, oh) = (w - n + 1, h - n + 1);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = k.iter().zip(&row[x..x + n]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k.iter().enumerate().map(|(i, a)| a * tmp[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over every window position fully inside the image.
pub fn ssim(a: &Raster, b: &Raster) -> Result<f64, MetricError> {
    same_dims(a, b)?;
    let n = METRIC_CONFIG.ssim_window;
    let (w, h) = (a.width() as usize, a.height() as usize);
    if w < n || h < n {
        return Err(MetricError::TooSmall { width: a.width(), height: a.height(), window: n });
    }
    if a == b {
        return Ok(1.0);
    }
    let (x, y) = (luma(a), luma(b));
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
    let k = ssim_window_1d();
    let [mx, my, sxx, syy, sxy] = [&x, &y, &xx, &yy, &xy].map(|p| filter_valid(p, w, h, &k));
    let (c1, c2) = (METRIC_CONFIG.ssim_c1, METRIC_CONFIG.ssim_c2);
    let total: f64 = (0..mx.len())
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / mx.len() as f64)
}

/// Fraction of invocations whose chosen tool equals the correct one.
pub fn success_rate(invocations: &[(ToolId, ToolId)]) -> Result<f64, MetricError> {
    if invocations.is_empty() {
        return Err(MetricError::Empty);
    }
    let hits = invocations.iter().filter(|(chosen, correct)| chosen == correct).count();
    Ok(hits as f64 / invocations.len() as f64)
}

/// Serde adapter writing infinite PSNR as the string `"inf"`.
pub mod psnr_serde {
    use core::fmt;

    use serde::de::{self, Visitor};
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = f64;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a number or \"inf\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
                Ok(v)
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
                Ok(v as f64)
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
                Ok(v as f64)
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
                match v {
                    "inf" => Ok(f64::INFINITY),
                    _ => Err(E::invalid_value(de::Unexpected::Str(v), &self)),
                }
            }
        }
        d.deserialize_any(V)
    }

    /// Same encoding for optional values.
    pub mod option {
        use serde::{Deserialize, Deserializer, Serializer};

        pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
            match v {
                Some(x) => super::serialize(x, s),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
            #[derive(serde::Deserialize)]
            struct W(#[serde(with = "super")] f64);
            Ok(Option::<W>::deserialize(d)?.map(|w| w.0))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degrade::filters::gaussian_noise;
    use crate::domain::{DistortionKind, QualityReport};

    fn textured(w: u32, h: u32, salt: u32) -> Raster {
        Raster::from_fn(w, h, |x, y| {
            let v = (x * 13 + y * 7 + salt * 31) % 200 + 20;
            [v as u8, ((x * y + salt) % 180 + 30) as u8, ((x + 2 * y) % 220 + 10) as u8]
        })
    }

    #[test]
    fn identical_images_have_infinite_psnr() {
        let a = textured(40, 40, 0);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn unit_offset_gives_mse_one() {
        let a = textured(40, 40, 1);
        let b = Raster::new(40, 40, a.data().iter().map(|v| v + 1).collect()).unwrap();
        assert!((psnr(&a, &b).unwrap() - 48.1308).abs() < 1e-3);
    }

    #[test]
    fn psnr_of_sigma_ten_noise() {
        let a = Raster::filled(512, 512, [128; 3]);
        let b = gaussian_noise(&a, 10.0, 42);
        let p = psnr(&a, &b).unwrap();
        assert!((p - 28.13).abs() <= 0.15, "{p}");
    }

    #[test]
    fn psnr_decreases_with_offset() {
        let a = Raster::filled(32, 32, [100, 120, 140]);
        let mut last = f64::INFINITY;
        for k in 1..=50u8 {
            let b = Raster::new(32, 32, a.data().iter().map(|v| v + k).collect()).unwrap();
            let p = psnr(&a, &b).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn inverted_image_scores_low() {
        let a = textured(64, 64, 2);
        let inv = Raster::new(64, 64, a.data().iter().map(|v| 255 - v).collect()).unwrap();
        assert!(ssim(&a, &inv).unwrap() < 0.5);
    }

    #[test]
    fn dimension_and_size_errors() {
        let a = textured(40, 40, 0);
        let b = textured(41, 40, 0);
        assert!(matches!(psnr(&a, &b), Err(MetricError::DimensionMismatch { .. })));
        assert!(matches!(ssim(&a, &b), Err(MetricError::DimensionMismatch { .. })));
        let tiny = Raster::filled(10, 20, [1; 3]);
        assert!(matches!(ssim(&tiny, &tiny), Err(MetricError::TooSmall { .. })));
    }

    #[test]
    fn success_rate_counts_exact_matches() {
        let t = |k| ToolId::try_from(k).unwrap();
        let inv = [(t(DistortionKind::Noise), t(DistortionKind::Blur)), (t(DistortionKind::Blur), t(DistortionKind::Blur))];
        assert_eq!(success_rate(&inv).unwrap(), 0.5);
        assert_eq!(success_rate(&[]), Err(MetricError::Empty));
    }

    #[test]
    fn fingerprint_is_stable_and_sensitive() {
        let fp = METRIC_CONFIG.fingerprint();
        assert_eq!(fp, METRIC_CONFIG.fingerprint());
        let mut other = METRIC_CONFIG;
        other.ssim_sigma = 1.6;
        assert_ne!(fp, other.fingerprint());
    }

    #[test]
    fn infinite_psnr_serializes_as_inf() {
        let r = QualityReport { psnr_db: f64::INFINITY, ssim: 1.0, steps: 1, wall_ms: 0.5 };
        let s = serde_json::to_string(&r).unwrap();
        assert!(s.contains(r#""psnr_db":"inf""#), "{s}");
        let back: QualityReport = serde_json::from_str(&s).unwrap();
        assert_eq!(back, r);
        let finite: QualityReport = serde_json::from_str(r#"{"psnr_db":30,"ssim":0.9,"steps":2,"wall_ms":1.0}"#).unwrap();
        assert_eq!(finite.psnr_db, 30.0);
    }
}
