//! Convolution and per-sample noise on interleaved RGB planes.

use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};

use crate::domain::Raster;
use crate::rng;

#[inline]
pub(crate) fn to_u8(v: f64) -> u8 {
    let r = libm::round(v);
    if r <= 0.0 {
        0
    } else if r >= 255.0 {
        255
    } else {
        r as u8
    }
}

/// Normalised 1-D Gaussian taps with radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = libm::ceil(3.0 * sigma).max(1.0) as usize;
    let mut taps: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            libm::exp(-(d * d) / (2.0 * sigma * sigma))
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Separable convolution of a single-channel float plane, replicating the
/// border.
pub fn separable(plane: &[f64], width: usize, height: usize, taps: &[f64]) -> Vec<f64> {
    let radius = (taps.len() / 2) as isize;
    let mut tmp = vec![0.0; plane.len()];
    for y in 0..height {
        let row = &plane[y * width..(y + 1) * width];
        for x in 0..width {
            let mut acc = 0.0;
            for (i, t) in taps.iter().enumerate() {
                let sx = (x as isize + i as isize - radius).clamp(0, width as isize - 1) as usize;
                acc += t * row[sx];
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![0.0; plane.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (i, t) in taps.iter().enumerate() {
                let sy = (y as isize + i as isize - radius).clamp(0, height as isize - 1) as usize;
                acc += t * tmp[sy * width + x];
            }
            out[y * width + x] = acc;
        }
    }
    out
}

/// Splits a raster into three float planes.
pub fn planes(r: &Raster) -> [Vec<f64>; 3] {
    let n = r.pixel_count();
    let mut p = [Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n)];
    for px in r.data().chunks_exact(3) {
        for c in 0..3 {
            p[c].push(px[c] as f64);
        }
    }
    p
}

pub fn from_planes(width: u32, height: u32, p: &[Vec<f64>; 3]) -> Raster {
    let n = width as usize * height as usize;
    let mut data = Vec::with_capacity(n * 3);
    for i in 0..n {
        for plane in p {
            data.push(to_u8(plane[i]));
        }
    }
    Raster::new(width, height, data).expect("plane sizes match")
}

pub fn gaussian_blur(r: &Raster, sigma: f64) -> Raster {
    if sigma <= 0.0 {
        return r.clone();
    }
    let taps = gaussian_kernel(sigma);
    let (w, h) = (r.width() as usize, r.height() as usize);
    let p = planes(r);
    let out = [separable(&p[0], w, h, &taps), separable(&p[1], w, h, &taps), separable(&p[2], w, h, &taps)];
    from_planes(r.width(), r.height(), &out)
}

/// Sparse 2-D kernel tap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tap {
    pub dx: i32,
    pub dy: i32,
    pub weight: f64,
}

/// Linear motion kernel: a segment of `length` pixels at `angle` degrees
/// (counter-clockwise from the x axis), rasterised by bilinear splatting of
/// dense samples along the segment.
pub fn motion_kernel(length: f64, angle_deg: f64) -> Vec<Tap> {
    let theta = angle_deg.to_radians();
    let (dx, dy) = (libm::cos(theta), -libm::sin(theta));
    let half = (libm::ceil(length / 2.0) as i32) + 1;
    let side = (2 * half + 1) as usize;
    let mut grid = vec![0.0f64; side * side];
    let samples = (libm::ceil(length) as usize).max(1) * 8;
    for s in 0..=samples {
        let t = -length / 2.0 + length * s as f64 / samples as f64;
        let (px, py) = (t * dx + half as f64, t * dy + half as f64);
        let (x0, y0) = (libm::floor(px), libm::floor(py));
        let (fx, fy) = (px - x0, py - y0);
        for (ox, oy, w) in [(0, 0, (1.0 - fx) * (1.0 - fy)), (1, 0, fx * (1.0 - fy)), (0, 1, (1.0 - fx) * fy), (1, 1, fx * fy)] {
            let (gx, gy) = (x0 as i32 + ox, y0 as i32 + oy);
            if gx >= 0 && gy >= 0 && (gx as usize) < side && (gy as usize) < side {
                grid[gy as usize * side + gx as usize] += w;
            }
        }
    }
    let sum: f64 = grid.iter().sum();
    grid.iter()
        .enumerate()
        .filter(|(_, &w)| w > 1e-9)
        .map(|(i, &w)| Tap { dx: (i % side) as i32 - half, dy: (i / side) as i32 - half, weight: w / sum })
        .collect()
}

pub fn convolve_sparse(r: &Raster, taps: &[Tap]) -> Raster {
    let (w, h) = (r.width() as i32, r.height() as i32);
    let src = r.data();
    let mut data = Vec::with_capacity(src.len());
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0f64; 3];
            for t in taps {
                let sx = (x + t.dx).clamp(0, w - 1);
                let sy = (y + t.dy).clamp(0, h - 1);
                let i = (sy * w + sx) as usize * 3;
                acc[0] += t.weight * src[i] as f64;
                acc[1] += t.weight * src[i + 1] as f64;
                acc[2] += t.weight * src[i + 2] as f64;
            }
            data.extend(acc.iter().map(|&v| to_u8(v)));
        }
    }
    Raster::new(r.width(), r.height(), data).expect("same dims")
}

/// Adds i.i.d. Gaussian noise of standard deviation `sigma` to every sample,
/// then rounds and clamps.
pub fn gaussian_noise(r: &Raster, sigma: f64, seed: u64) -> Raster {
    if sigma <= 0.0 {
        return r.clone();
    }
    let mut g = rng::rng(seed);
    let data = r
        .data()
        .iter()
        .map(|&v| {
            let n: f64 = StandardNormal.sample(&mut g);
            to_u8(v as f64 + sigma * n)
        })
        .collect();
    Raster::new(r.width(), r.height(), data).expect("same dims")
}

/// Gaussian layer whose total per-sample error, rounding included, has
/// variance `sigma^2`: the continuous part is drawn with variance
/// `sigma^2 - 1/12` and integer rounding contributes the remaining `1/12`.
pub fn quantized_gaussian_layer(r: &Raster, sigma: f64, seed: u64) -> Raster {
    let continuous = libm::sqrt((sigma * sigma - 1.0 / 12.0).max(0.0));
    gaussian_noise(r, continuous, seed)
}

/// Damage layer that never moves a sample toward `clean`: each draw keeps
/// its magnitude and takes the sign of the existing error, or its own sign
/// where there is none. Clamping only shortens the step, so per-sample error
/// cannot shrink, while on an exact image the MSE is still `sigma^2`.
pub fn outward_layer(r: &Raster, clean: &Raster, sigma: f64, seed: u64) -> Raster {
    if sigma <= 0.0 {
        return r.clone();
    }
    let continuous = libm::sqrt((sigma * sigma - 1.0 / 12.0).max(0.0));
    let mut g = rng::rng(seed);
    let data = r
        .data()
        .iter()
        .zip(clean.data())
        .map(|(&v, &c)| {
            let n: f64 = StandardNormal.sample(&mut g);
            let step = continuous * n;
            let step = match v.cmp(&c) {
                core::cmp::Ordering::Greater => libm::fabs(step),
                core::cmp::Ordering::Less => -libm::fabs(step),
                core::cmp::Ordering::Equal => step,
            };
            to_u8(v as f64 + step)
        })
        .collect();
    Raster::new(r.width(), r.height(), data).expect("same dims")
}

/// Box mean over a square window of half-width `radius` on one plane, using
/// an integral image.
pub fn box_mean(plane: &[f64], width: usize, height: usize, radius: usize) -> Vec<f64> {
    let iw = width + 1;
    let mut integral = vec![0.0f64; iw * (height + 1)];
    for y in 0..height {
        let mut row = 0.0;
        for x in 0..width {
            row += plane[y * width + x];
            integral[(y + 1) * iw + x + 1] = integral[y * iw + x + 1] + row;
        }
    }
    let mut out = vec![0.0; plane.len()];
    for y in 0..height {
        let y0 = y.saturating_sub(radius);
        let y1 = (y + radius + 1).min(height);
        for x in 0..width {
            let x0 = x.saturating_sub(radius);
            let x1 = (x + radius + 1).min(width);
            let s = integral[y1 * iw + x1] - integral[y0 * iw + x1] - integral[y1 * iw + x0] + integral[y0 * iw + x0];
            out[y * width + x] = s / ((y1 - y0) * (x1 - x0)) as f64;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_kernel_is_normalised_and_symmetric() {
        let k = gaussian_kernel(1.5);
        assert_eq!(k.len(), 11);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..k.len() {
            assert!((k[i] - k[k.len() - 1 - i]).abs() < 1e-15);
        }
    }

    #[test]
    fn motion_kernel_follows_its_angle() {
        let horiz = motion_kernel(9.0, 0.0);
        assert!((horiz.iter().map(|t| t.weight).sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(horiz.iter().all(|t| t.dy == 0));
        let vert = motion_kernel(9.0, 90.0);
        assert!(vert.iter().all(|t| t.dx == 0));
        let span = vert.iter().map(|t| t.dy).max().unwrap() - vert.iter().map(|t| t.dy).min().unwrap();
        assert!((8..=10).contains(&span), "span {span}");
    }

    #[test]
    fn blur_preserves_flat_images() {
        let r = Raster::filled(40, 40, [10, 100, 200]);
        assert_eq!(gaussian_blur(&r, 3.0), r);
        assert_eq!(convolve_sparse(&r, &motion_kernel(15.0, 33.0)), r);
    }

    #[test]
    fn box_mean_matches_direct_average() {
        let plane: Vec<f64> = (0..35).map(|i| (i * 7 % 11) as f64).collect();
        let m = box_mean(&plane, 7, 5, 1);
        let mut direct = 0.0;
        for y in 1..4 {
            for x in 2..5 {
                direct += plane[y * 7 + x];
            }
        }
        assert!((m[2 * 7 + 3] - direct / 9.0).abs() < 1e-12);
        // corner window is clipped to 2x2
        let corner = (plane[0] + plane[1] + plane[7] + plane[8]) / 4.0;
        assert!((m[0] - corner).abs() < 1e-12);
    }
}
