//! Parametric stand-ins for the dataset-sourced distortions: rain streaks,
//! raindrops, haze and low light.

use alloc::vec;

use rand::Rng;

use super::filters::to_u8;
use crate::domain::Raster;
use crate::rng;

/// Single-scattering haze, `I' = I t + A (1 - t)`, with uniform transmission.
pub fn haze(r: &Raster, transmission: f64, airlight: f64) -> Raster {
    map_samples(r, |v| v * transmission + airlight * (1.0 - transmission))
}

/// Gain + gamma darkening, `I' = 255 g (I / 255)^gamma`.
pub fn low_light(r: &Raster, gain: f64, gamma: f64) -> Raster {
    map_samples(r, |v| 255.0 * gain * libm::pow(v / 255.0, gamma))
}

fn map_samples(r: &Raster, f: impl Fn(f64) -> f64) -> Raster {
    let mut lut = [0u8; 256];
    for (i, slot) in lut.iter_mut().enumerate() {
        *slot = to_u8(f(i as f64));
    }
    let data = r.data().iter().map(|&v| lut[v as usize]).collect();
    Raster::new(r.width(), r.height(), data).expect("dims")
}

/// Rain streak overlay. `density` scales the streak count with image area;
/// `length` is the longest streak in pixels. Streaks share a slant drawn from
/// the seed, each with a small jitter, and are composited toward a bright
/// rain colour with anti-aliased coverage.
pub fn rain_streaks(r: &Raster, density: f64, length: f64, seed: u64) -> Raster {
    let (w, h) = (r.width() as usize, r.height() as usize);
    let mut g = rng::rng(seed);
    let count = libm::round(density * (w * h) as f64 / 150.0) as usize;
    let slant: f64 = g.random_range(-20.0..20.0);
    let mut alpha = vec![0.0f64; w * h];
    for _ in 0..count {
        let len = length * g.random_range(0.6..1.0);
        let angle = (90.0 + slant + g.random_range(-3.0..3.0)).to_radians();
        let strength: f64 = g.random_range(0.25..0.6);
        let cx = g.random_range(0.0..w as f64);
        let cy = g.random_range(0.0..h as f64);
        let (dx, dy) = (libm::cos(angle), libm::sin(angle));
        let steps = (len * 2.0) as usize;
        for s in 0..=steps {
            let t = -len / 2.0 + len * s as f64 / steps.max(1) as f64;
            let (px, py) = (cx + t * dx, cy + t * dy);
            let (x0, y0) = (libm::floor(px), libm::floor(py));
            let (fx, fy) = (px - x0, py - y0);
            for (ox, oy, cov) in [(0.0, 0.0, (1.0 - fx) * (1.0 - fy)), (1.0, 0.0, fx * (1.0 - fy)), (0.0, 1.0, (1.0 - fx) * fy), (1.0, 1.0, fx * fy)] {
                let (gx, gy) = (x0 + ox, y0 + oy);
                if gx >= 0.0 && gy >= 0.0 && (gx as usize) < w && (gy as usize) < h {
                    let a = &mut alpha[gy as usize * w + gx as usize];
                    *a = a.max(strength * cov * 2.0).min(0.85);
                }
            }
        }
    }
    let mut out = r.clone();
    for (i, px) in out.data_mut().chunks_exact_mut(3).enumerate() {
        let a = alpha[i];
        if a > 0.0 {
            for v in px.iter_mut() {
                *v = to_u8(*v as f64 + a * (235.0 - *v as f64));
            }
        }
    }
    out
}

/// Circular droplets without refraction: inside each drop the scene is
/// replaced by a darkened local average with a soft rim. Drop radii vary
/// between 70% and 100% of `radius`.
pub fn raindrops(r: &Raster, count: u32, radius: f64, seed: u64) -> Raster {
    let (w, h) = (r.width() as i64, r.height() as i64);
    let mut g = rng::rng(seed);
    let mut out = r.clone();
    for _ in 0..count {
        let cx = g.random_range(0.0..w as f64);
        let cy = g.random_range(0.0..h as f64);
        let rad = radius * g.random_range(0.7..1.0);
        let (x0, x1) = (libm::floor(cx - rad).max(0.0) as i64, (libm::ceil(cx + rad) as i64).min(w - 1));
        let (y0, y1) = (libm::floor(cy - rad).max(0.0) as i64, (libm::ceil(cy + rad) as i64).min(h - 1));
        let mut mean = [0.0f64; 3];
        let mut n = 0.0;
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (ddx, ddy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                if ddx * ddx + ddy * ddy <= rad * rad {
                    let p = out.pixel(x as u32, y as u32);
                    for c in 0..3 {
                        mean[c] += p[c] as f64;
                    }
                    n += 1.0;
                }
            }
        }
        if n == 0.0 {
            continue;
        }
        let fill = mean.map(|m| 0.8 * m / n);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (ddx, ddy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                let d = libm::sqrt(ddx * ddx + ddy * ddy);
                let m = ((1.0 - d / rad) * 3.0).clamp(0.0, 1.0);
                if m > 0.0 {
                    let p = out.pixel(x as u32, y as u32);
                    let mixed = [0, 1, 2].map(|c| to_u8(p[c] as f64 * (1.0 - m) + fill[c] * m));
                    out.set_pixel(x as u32, y as u32, mixed);
                }
            }
        }
    }
    out
}
