//! Block-transform lossy coding on YCbCr 4:2:0.
//!
//! JPEG here is the full baseline pipeline minus entropy coding (which is
//! lossless and so has no effect on decoded pixels): JFIF colour conversion,
//! 2x2 chroma averaging, 8x8 DCT, IJG quality-scaled quantisation tables,
//! dequantisation, inverse DCT, chroma replication. The same machinery with a
//! flat QP-derived step drives the in-process stand-in for the intra video
//! codecs.

use alloc::vec;
use alloc::vec::Vec;

use super::filters::to_u8;
use crate::domain::Raster;

const LUMA_BASE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, 12, 12, 14, 19, 26, 58, 60, 55, 14, 13, 16, 24, 40, 57, 69, 56, 14, 17, 22, 29, 51,
    87, 80, 62, 18, 22, 37, 56, 68, 109, 103, 77, 24, 35, 55, 64, 81, 104, 113, 92, 49, 64, 78, 87, 103, 121, 120, 101,
    72, 92, 95, 98, 112, 100, 103, 99,
];

const CHROMA_BASE: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99, 24, 26, 56, 99, 99, 99, 99, 99, 47, 66, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99,
];

/// IJG scaling of a base table for `quality` in 1..=100.
pub fn scaled_table(base: &[u16; 64], quality: u8) -> [f64; 64] {
    let q = quality.clamp(1, 100) as u32;
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let mut out = [0.0; 64];
    for (o, &b) in out.iter_mut().zip(base) {
        *o = ((b as u32 * scale + 50) / 100).clamp(1, 255) as f64;
    }
    out
}

/// Quantiser applied to each block of transform coefficients.
#[derive(Debug, Clone, Copy)]
enum Quantizer<'a> {
    Table(&'a [f64; 64]),
    Flat(f64),
}

impl Quantizer<'_> {
    fn step(&self, i: usize) -> f64 {
        match self {
            Quantizer::Table(t) => t[i],
            Quantizer::Flat(s) => *s,
        }
    }
}

/// Orthonormal DCT-II basis for block size `n`: `basis[u * n + i]`.
fn dct_basis(n: usize) -> Vec<f64> {
    let mut b = vec![0.0; n * n];
    for u in 0..n {
        let alpha = if u == 0 { libm::sqrt(1.0 / n as f64) } else { libm::sqrt(2.0 / n as f64) };
        for i in 0..n {
            b[u * n + i] = alpha * libm::cos(core::f64::consts::PI * (2 * i + 1) as f64 * u as f64 / (2 * n) as f64);
        }
    }
    b
}

/// Codes one integer plane in `n`x`n` blocks and returns the reconstruction.
fn code_plane(plane: &[u8], width: usize, height: usize, n: usize, quant: Quantizer<'_>) -> Vec<u8> {
    let basis = dct_basis(n);
    let pw = width.div_ceil(n) * n;
    let ph = height.div_ceil(n) * n;
    let mut out = vec![0u8; width * height];
    let mut block = vec![0.0f64; n * n];
    let mut tmp = vec![0.0f64; n * n];
    let table_index = |u: usize, v: usize| if n == 8 { v * 8 + u } else { 0 };

    for by in (0..ph).step_by(n) {
        for bx in (0..pw).step_by(n) {
            for y in 0..n {
                let sy = (by + y).min(height - 1);
                for x in 0..n {
                    let sx = (bx + x).min(width - 1);
                    block[y * n + x] = plane[sy * width + sx] as f64 - 128.0;
                }
            }
            // rows then columns
            for y in 0..n {
                for u in 0..n {
                    tmp[y * n + u] = (0..n).map(|x| basis[u * n + x] * block[y * n + x]).sum();
                }
            }
            for u in 0..n {
                for v in 0..n {
                    let c: f64 = (0..n).map(|y| basis[v * n + y] * tmp[y * n + u]).sum();
                    let step = quant.step(table_index(u, v));
                    block[v * n + u] = libm::round(c / step) * step;
                }
            }
            for u in 0..n {
                for y in 0..n {
                    tmp[y * n + u] = (0..n).map(|v| basis[v * n + y] * block[v * n + u]).sum();
                }
            }
            for y in 0..n {
                if by + y >= height {
                    break;
                }
                for x in 0..n {
                    if bx + x >= width {
                        break;
                    }
                    let s: f64 = (0..n).map(|u| basis[u * n + x] * tmp[y * n + u]).sum();
                    out[(by + y) * width + bx + x] = to_u8(s + 128.0);
                }
            }
        }
    }
    out
}

struct Ycc420 {
    y: Vec<u8>,
    cb: Vec<u8>,
    cr: Vec<u8>,
    cw: usize,
    ch: usize,
}

fn to_ycc420(r: &Raster) -> Ycc420 {
    let (w, h) = (r.width() as usize, r.height() as usize);
    let mut y = Vec::with_capacity(w * h);
    let mut cb_full = Vec::with_capacity(w * h);
    let mut cr_full = Vec::with_capacity(w * h);
    for px in r.data().chunks_exact(3) {
        let (rr, gg, bb) = (px[0] as f64, px[1] as f64, px[2] as f64);
        y.push(to_u8(0.299 * rr + 0.587 * gg + 0.114 * bb));
        cb_full.push(128.0 - 0.168_736 * rr - 0.331_264 * gg + 0.5 * bb);
        cr_full.push(128.0 + 0.5 * rr - 0.418_688 * gg - 0.081_312 * bb);
    }
    let (cw, ch) = (w.div_ceil(2), h.div_ceil(2));
    let sub = |full: &[f64]| {
        let mut out = Vec::with_capacity(cw * ch);
        for cy in 0..ch {
            for cx in 0..cw {
                let mut acc = 0.0;
                for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    let sx = (2 * cx + dx).min(w - 1);
                    let sy = (2 * cy + dy).min(h - 1);
                    acc += full[sy * w + sx];
                }
                out.push(to_u8(acc / 4.0));
            }
        }
        out
    };
    Ycc420 { cb: sub(&cb_full), cr: sub(&cr_full), y, cw, ch }
}

fn from_ycc420(width: usize, height: usize, p: &Ycc420) -> Raster {
    let mut data = Vec::with_capacity(width * height * 3);
    for yy in 0..height {
        for xx in 0..width {
            let l = p.y[yy * width + xx] as f64;
            let ci = (yy / 2) * p.cw + xx / 2;
            let cb = p.cb[ci] as f64 - 128.0;
            let cr = p.cr[ci] as f64 - 128.0;
            data.push(to_u8(l + 1.402 * cr));
            data.push(to_u8(l - 0.344_136 * cb - 0.714_136 * cr));
            data.push(to_u8(l + 1.772 * cb));
        }
    }
    Raster::new(width as u32, height as u32, data).expect("dims")
}

/// JPEG-equivalent reconstruction at IJG `quality`.
pub fn jpeg(r: &Raster, quality: u8) -> Raster {
    let luma = scaled_table(&LUMA_BASE, quality);
    let chroma = scaled_table(&CHROMA_BASE, quality);
    let (w, h) = (r.width() as usize, r.height() as usize);
    let mut p = to_ycc420(r);
    p.y = code_plane(&p.y, w, h, 8, Quantizer::Table(&luma));
    p.cb = code_plane(&p.cb, p.cw, p.ch, 8, Quantizer::Table(&chroma));
    p.cr = code_plane(&p.cr, p.cw, p.ch, 8, Quantizer::Table(&chroma));
    from_ycc420(w, h, &p)
}

/// Quantisation step of the HEVC/VVC family for a QP.
pub fn qp_step(qp: u8) -> f64 {
    libm::pow(2.0, (qp as f64 - 4.0) / 6.0)
}

/// Intra-only transform coding with a flat QP step and `block`-sized
/// transforms; the in-process stand-in for the reference video encoders.
pub fn flat_intra(r: &Raster, qp: u8, block: usize) -> Raster {
    let step = qp_step(qp);
    let (w, h) = (r.width() as usize, r.height() as usize);
    let mut p = to_ycc420(r);
    p.y = code_plane(&p.y, w, h, block, Quantizer::Flat(step));
    p.cb = code_plane(&p.cb, p.cw, p.ch, block, Quantizer::Flat(step));
    p.cr = code_plane(&p.cr, p.cw, p.ch, block, Quantizer::Flat(step));
    from_ycc420(w, h, &p)
}

/// Planar 8-bit YUV 4:2:0 (I420) bytes, the format the reference encoders
/// consume. Odd dimensions are not accepted by the encoders; callers pad.
pub fn to_i420(r: &Raster) -> Vec<u8> {
    let p = to_ycc420(r);
    let mut out = p.y;
    out.extend_from_slice(&p.cb);
    out.extend_from_slice(&p.cr);
    out
}

/// Inverse of [`to_i420`]. Returns `None` when the byte count does not match.
pub fn from_i420(bytes: &[u8], width: u32, height: u32) -> Option<Raster> {
    let (w, h) = (width as usize, height as usize);
    let (cw, ch) = (w.div_ceil(2), h.div_ceil(2));
    if bytes.len() != w * h + 2 * cw * ch {
        return None;
    }
    let y = bytes[..w * h].to_vec();
    let cb = bytes[w * h..w * h + cw * ch].to_vec();
    let cr = bytes[w * h + cw * ch..].to_vec();
    Some(from_ycc420(w, h, &Ycc420 { y, cb, cr, cw, ch }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::psnr;

    fn textured(w: u32, h: u32) -> Raster {
        Raster::from_fn(w, h, |x, y| {
            let v = (x * 7 + y * 3) % 256;
            [v as u8, ((x ^ y) * 5 % 256) as u8, (128 + (libm::sin(x as f64 / 5.0) * 60.0) as i32) as u8]
        })
    }

    #[test]
    fn ijg_tables_follow_quality_scaling() {
        let t50 = scaled_table(&LUMA_BASE, 50);
        assert_eq!(t50[0], 16.0);
        let t10 = scaled_table(&LUMA_BASE, 10);
        assert_eq!(t10[0], 80.0);
        let t100 = scaled_table(&LUMA_BASE, 100);
        assert!(t100.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn dct_basis_is_orthonormal() {
        for n in [8, 16] {
            let b = dct_basis(n);
            for u in 0..n {
                for v in 0..n {
                    let dot: f64 = (0..n).map(|i| b[u * n + i] * b[v * n + i]).sum();
                    let want = if u == v { 1.0 } else { 0.0 };
                    assert!((dot - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn lower_quality_loses_more() {
        let r = textured(64, 48);
        let p40 = psnr(&r, &jpeg(&r, 40)).unwrap();
        let p10 = psnr(&r, &jpeg(&r, 10)).unwrap();
        assert!(p10 < p40, "{p10} vs {p40}");
        let q32 = psnr(&r, &flat_intra(&r, 32, 8)).unwrap();
        let q42 = psnr(&r, &flat_intra(&r, 42, 8)).unwrap();
        assert!(q42 < q32, "{q42} vs {q32}");
    }

    #[test]
    fn odd_dimensions_round_trip_through_i420() {
        let r = textured(35, 33);
        let bytes = to_i420(&r);
        let back = from_i420(&bytes, 35, 33).unwrap();
        assert_eq!(back.dims(), (35, 33));
        assert!(psnr(&r, &back).unwrap() > 25.0);
        assert!(from_i420(&bytes[1..], 35, 33).is_none());
    }
}
