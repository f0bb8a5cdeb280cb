//! Demo-grade classical restorations. They work on pixels only, so their
//! output carries no provenance.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Family, RestorationTool, ToolError};
use crate::degrade::filters::{from_planes, gaussian_blur, planes, to_u8};
use crate::domain::{DistortionKind, ImageState, Raster, ToolId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassicalConfig {
    /// Gain and gamma assumed by the low-light inversion.
    pub lowlight_gain: f64,
    pub lowlight_gamma: f64,
    pub unsharp_sigma: f64,
    pub unsharp_amount: f64,
    /// Dark-channel patch radius and haze retention.
    pub haze_radius: usize,
    pub haze_omega: f64,
    pub haze_t0: f64,
    /// Noise estimates below this σ are treated as clean input.
    pub noise_floor: f64,
}

impl Default for ClassicalConfig {
    fn default() -> Self {
        ClassicalConfig {
            lowlight_gain: 0.25,
            lowlight_gamma: 2.0,
            unsharp_sigma: 1.5,
            unsharp_amount: 1.0,
            haze_radius: 7,
            haze_omega: 0.95,
            haze_t0: 0.1,
            noise_floor: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ClassicalTool {
    id: ToolId,
    cfg: ClassicalConfig,
}

impl ClassicalTool {
    pub const SUPPORTED: [ToolId; 5] = [
        ToolId::for_kind(DistortionKind::Noise),
        ToolId::for_kind(DistortionKind::Blur),
        ToolId::for_kind(DistortionKind::Haze),
        ToolId::for_kind(DistortionKind::LowLight),
        ToolId::for_kind(DistortionKind::Jpeg),
    ];

    pub fn new(id: ToolId, cfg: ClassicalConfig) -> Self {
        ClassicalTool { id, cfg }
    }

    pub fn restore(&self, r: &Raster) -> Result<Raster, ToolError> {
        let c = &self.cfg;
        Ok(match self.id.kind() {
            DistortionKind::Noise => denoise(r, c.noise_floor),
            DistortionKind::Blur => unsharp(r, c.unsharp_sigma, c.unsharp_amount),
            DistortionKind::Haze => dehaze(r, c.haze_radius, c.haze_omega, c.haze_t0),
            DistortionKind::LowLight => brighten(r, c.lowlight_gain, c.lowlight_gamma),
            DistortionKind::Jpeg => deblock(r),
            _ => {
                return Err(ToolError::Unavailable { tool: self.id, reason: "no classical baseline".into() });
            }
        })
    }
}

impl RestorationTool for ClassicalTool {
    fn id(&self) -> ToolId {
        self.id
    }

    fn family(&self) -> Family {
        Family::Classical
    }

    fn invoke(&self, image: &ImageState) -> Result<ImageState, ToolError> {
        let out = self.restore(&image.raster)?;
        ImageState::new(out).map_err(|e| ToolError::Degrade { tool: self.id, source: e.into() })
    }
}

/// Immerkær's fast noise σ estimate, averaged over the three channels.
pub fn estimate_noise(r: &Raster) -> f64 {
    let (w, h) = (r.width() as usize, r.height() as usize);
    const K: [[f64; 3]; 3] = [[1.0, -2.0, 1.0], [-2.0, 4.0, -2.0], [1.0, -2.0, 1.0]];
    let mut acc = 0.0;
    for l in planes(r) {
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let mut s = 0.0;
                for (j, row) in K.iter().enumerate() {
                    for (i, k) in row.iter().enumerate() {
                        s += k * l[(y + j - 1) * w + x + i - 1];
                    }
                }
                acc += libm::fabs(s);
            }
        }
    }
    libm::sqrt(core::f64::consts::FRAC_PI_2) * acc / (18.0 * ((w - 2) * (h - 2)) as f64)
}

/// Joint-RGB bilateral filter whose range σ follows the estimated noise.
pub fn denoise(r: &Raster, floor: f64) -> Raster {
    let sigma_n = estimate_noise(r);
    if sigma_n < floor {
        return r.clone();
    }
    let sigma_s = 1.5;
    let radius = 3i64;
    let sigma_r = 2.0 * sigma_n;
    let (w, h) = (r.width() as i64, r.height() as i64);
    let src = r.data();
    let spatial: Vec<f64> = (-radius..=radius)
        .flat_map(|dy| (-radius..=radius).map(move |dx| (dx * dx + dy * dy) as f64))
        .map(|d2| libm::exp(-d2 / (2.0 * sigma_s * sigma_s)))
        .collect();
    let inv_r = -1.0 / (2.0 * sigma_r * sigma_r);
    let mut out = Vec::with_capacity(src.len());
    for y in 0..h {
        for x in 0..w {
            let ci = ((y * w + x) * 3) as usize;
            let centre = [src[ci] as f64, src[ci + 1] as f64, src[ci + 2] as f64];
            let mut acc = [0.0f64; 3];
            let mut norm = 0.0;
            let mut k = 0;
            for dy in -radius..=radius {
                let sy = (y + dy).clamp(0, h - 1);
                for dx in -radius..=radius {
                    let sx = (x + dx).clamp(0, w - 1);
                    let i = ((sy * w + sx) * 3) as usize;
                    let p = [src[i] as f64, src[i + 1] as f64, src[i + 2] as f64];
                    let d2 = (0..3).map(|c| (p[c] - centre[c]) * (p[c] - centre[c])).sum::<f64>() / 3.0;
                    let wgt = spatial[k] * libm::exp(d2 * inv_r);
                    k += 1;
                    for c in 0..3 {
                        acc[c] += wgt * p[c];
                    }
                    norm += wgt;
                }
            }
            out.extend(acc.iter().map(|a| to_u8(a / norm)));
        }
    }
    Raster::new(r.width(), r.height(), out).expect("same dims")
}

pub fn unsharp(r: &Raster, sigma: f64, amount: f64) -> Raster {
    let blurred = gaussian_blur(r, sigma);
    let data = r
        .data()
        .iter()
        .zip(blurred.data())
        .map(|(&a, &b)| to_u8(a as f64 + amount * (a as f64 - b as f64)))
        .collect();
    Raster::new(r.width(), r.height(), data).expect("same dims")
}

/// Square min filter of half-width `radius`, done as a row pass then a column
/// pass (exact for square windows).
fn min_filter(plane: &[f64], w: usize, h: usize, radius: usize) -> Vec<f64> {
    let mut tmp = vec![0.0; plane.len()];
    for y in 0..h {
        for x in 0..w {
            let (x0, x1) = (x.saturating_sub(radius), (x + radius).min(w - 1));
            tmp[y * w + x] = plane[y * w + x0..=y * w + x1].iter().copied().fold(f64::INFINITY, f64::min);
        }
    }
    let mut out = vec![0.0; plane.len()];
    for y in 0..h {
        let (y0, y1) = (y.saturating_sub(radius), (y + radius).min(h - 1));
        for x in 0..w {
            out[y * w + x] = (y0..=y1).map(|yy| tmp[yy * w + x]).fold(f64::INFINITY, f64::min);
        }
    }
    out
}

/// Dark-channel-prior dehazing with a fixed patch and no transmission
/// refinement.
pub fn dehaze(r: &Raster, radius: usize, omega: f64, t0: f64) -> Raster {
    let (w, h) = (r.width() as usize, r.height() as usize);
    let p = planes(r);
    let min_rgb: Vec<f64> = (0..w * h).map(|i| p[0][i].min(p[1][i]).min(p[2][i])).collect();
    let dark = min_filter(&min_rgb, w, h, radius);

    // airlight: per-channel maximum over the top 0.1% of the dark channel
    let mut order: Vec<usize> = (0..w * h).collect();
    order.sort_unstable_by(|&a, &b| dark[b].total_cmp(&dark[a]).then(a.cmp(&b)));
    let top = &order[..(w * h / 1000).max(1)];
    let airlight = [0, 1, 2].map(|c| top.iter().map(|&i| p[c][i]).fold(1.0, f64::max));

    let norm_min: Vec<f64> =
        (0..w * h).map(|i| (0..3).map(|c| p[c][i] / airlight[c]).fold(f64::INFINITY, f64::min)).collect();
    let t: Vec<f64> = min_filter(&norm_min, w, h, radius).iter().map(|d| (1.0 - omega * d).max(t0)).collect();
    let out = [0, 1, 2].map(|c| (0..w * h).map(|i| (p[c][i] - airlight[c]) / t[i] + airlight[c]).collect::<Vec<f64>>());
    from_planes(r.width(), r.height(), &out)
}

/// Inverse of the gain + gamma darkening model.
pub fn brighten(r: &Raster, gain: f64, gamma: f64) -> Raster {
    let mut lut = [0u8; 256];
    for (i, slot) in lut.iter_mut().enumerate() {
        let v = (i as f64 / (255.0 * gain)).min(1.0);
        *slot = to_u8(255.0 * libm::pow(v, 1.0 / gamma));
    }
    Raster::new(r.width(), r.height(), r.data().iter().map(|&v| lut[v as usize]).collect()).expect("same dims")
}

/// Smooths small steps across the 8x8 block grid, leaving real edges alone.
pub fn deblock(r: &Raster) -> Raster {
    let (w, h) = (r.width() as usize, r.height() as usize);
    let mut p = planes(r);
    for plane in p.iter_mut() {
        for y in 0..h {
            for x in (8..w.saturating_sub(1)).step_by(8) {
                smooth_edge(plane, y * w + x - 2, 1);
            }
        }
        for y in (8..h.saturating_sub(1)).step_by(8) {
            for x in 0..w {
                smooth_edge(plane, (y - 2) * w + x, w);
            }
        }
    }
    from_planes(r.width(), r.height(), &p)
}

/// `start` indexes p1; samples are p1 p0 | q0 q1 at `stride`.
fn smooth_edge(plane: &mut [f64], start: usize, stride: usize) {
    let [p1, p0, q0, q1] = [0, 1, 2, 3].map(|k| plane[start + k * stride]);
    let step = q0 - p0;
    if libm::fabs(step) >= 24.0 || libm::fabs(p1 - p0) >= 8.0 || libm::fabs(q1 - q0) >= 8.0 {
        return;
    }
    let delta = step / 4.0;
    plane[start] = p1 + delta / 2.0;
    plane[start + stride] = p0 + delta;
    plane[start + 2 * stride] = q0 - delta;
    plane[start + 3 * stride] = q1 - delta / 2.0;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degrade::filters::gaussian_noise;
    use crate::degrade::weather::{haze, low_light};
    use crate::degrade::transform::jpeg;
    use crate::metrics::psnr;

    /// Saturated colour blobs with shadows, so every patch has a dark channel
    /// near zero.
    fn colourful(w: u32, h: u32, salt: u32) -> Raster {
        Raster::from_fn(w, h, |x, y| {
            let band = ((x / 12 + y / 9 + salt) % 6) as usize;
            let shade = (150 + (x * 7 + y * 3 + salt * 11) % 100) as u8;
            let lo = ((x + y) % 20) as u8;
            let mut px = [lo; 3];
            px[band % 3] = shade;
            if band >= 3 {
                px[(band + 1) % 3] = shade / 2;
            }
            px
        })
    }

    #[test]
    fn denoise_is_near_identity_on_clean_input() {
        let r = colourful(96, 96, 0);
        let out = denoise(&r, ClassicalConfig::default().noise_floor);
        assert!(psnr(&r, &out).unwrap() >= 40.0);
    }

    #[test]
    fn denoise_improves_noisy_input() {
        let r = Raster::from_fn(96, 96, |x, y| [(40 + x) as u8, (60 + y) as u8, 120]);
        let noisy = gaussian_noise(&r, 20.0, 3);
        let out = denoise(&noisy, 2.0);
        assert!(psnr(&r, &out).unwrap() > psnr(&r, &noisy).unwrap() + 3.0);
        let est = estimate_noise(&noisy);
        assert!((est - 20.0).abs() < 3.0, "{est}");
    }

    #[test]
    fn dehaze_gains_three_db() {
        for salt in 0..5 {
            let clean = colourful(128, 128, salt);
            let hazy = haze(&clean, 0.5, 255.0);
            let c = ClassicalConfig::default();
            let out = dehaze(&hazy, c.haze_radius, c.haze_omega, c.haze_t0);
            let (before, after) = (psnr(&clean, &hazy).unwrap(), psnr(&clean, &out).unwrap());
            assert!(after >= before + 3.0, "{before} -> {after}");
        }
    }

    #[test]
    fn lowlight_inversion_with_known_params_improves() {
        for salt in 0..20 {
            let clean = colourful(64, 64, salt);
            let (g, gamma) = (0.1 + 0.015 * salt as f64, 1.5 + 0.075 * salt as f64);
            let dark = low_light(&clean, g, gamma);
            let out = brighten(&dark, g, gamma);
            assert!(psnr(&clean, &out).unwrap() > psnr(&clean, &dark).unwrap());
        }
    }

    #[test]
    fn unsharp_and_deblock_keep_flat_images() {
        let flat = Raster::filled(48, 48, [77, 88, 99]);
        assert_eq!(unsharp(&flat, 1.5, 1.0), flat);
        assert_eq!(deblock(&flat), flat);
        let smooth = Raster::from_fn(64, 64, |x, y| [(x * 2) as u8, (y * 2) as u8, 100]);
        let coded = jpeg(&smooth, 10);
        assert!(psnr(&smooth, &deblock(&coded)).unwrap() >= psnr(&smooth, &coded).unwrap() - 0.1);
    }

    #[test]
    fn unsupported_kinds_are_capability_errors() {
        let t = ClassicalTool::new(ToolId::HYBRID, ClassicalConfig::default());
        let img = ImageState::new(Raster::filled(40, 40, [1; 3])).unwrap();
        assert!(t.invoke(&img).unwrap_err().is_capability());
    }
}
