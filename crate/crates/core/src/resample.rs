//! Resizing with pixel-centre alignment.
//!
//! A destination pixel `x` samples the source at `(x + 0.5) * src / dst - 0.5`,
//! so a resize to the same size is the identity.

use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::{Image, LabelMap};

/// `floor(x + 0.5)`, at least 1.
pub fn round_dim(x: f64) -> usize {
    let r = libm::floor(x + 0.5);
    if r < 1.0 {
        1
    } else {
        r as usize
    }
}

#[derive(Debug, Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn taps(src: usize, dst: usize) -> Vec<Tap> {
    let ratio = src as f64 / dst as f64;
    (0..dst)
        .map(|x| {
            let s = ((x as f64 + 0.5) * ratio - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = libm::floor(s) as usize;
            let hi = (lo + 1).min(src - 1);
            Tap { lo, hi, frac: s - lo as f64 }
        })
        .collect()
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

fn nearest_index(x: usize, src: usize, dst: usize) -> usize {
    let s = libm::floor((x as f64 + 0.5) * src as f64 / dst as f64) as usize;
    s.min(src - 1)
}

/// Bilinear resize of an RGB image; results are rounded half-up.
pub fn resize_image_bilinear(img: &Image, height: usize, width: usize) -> Image {
    if img.height() == 0 || img.width() == 0 || height == 0 || width == 0 {
        return Image::filled(height, width, [0, 0, 0]);
    }
    let rows = taps(img.height(), height);
    let cols = taps(img.width(), width);
    let src = img.data();
    let sw = img.width();
    let mut out = Vec::with_capacity(height * width * 3);
    for r in &rows {
        for c in &cols {
            for ch in 0..3 {
                let at = |y: usize, x: usize| src[(y * sw + x) * 3 + ch] as f64;
                let top = lerp(at(r.lo, c.lo), at(r.lo, c.hi), c.frac);
                let bottom = lerp(at(r.hi, c.lo), at(r.hi, c.hi), c.frac);
                let v = libm::floor(lerp(top, bottom, r.frac) + 0.5);
                out.push(v.clamp(0.0, 255.0) as u8);
            }
        }
    }
    Image::new(height, width, out).expect("sized above")
}

/// Nearest-neighbour resize of a label map; never produces a value absent from the source.
pub fn resize_labels_nearest(lbl: &LabelMap, height: usize, width: usize) -> LabelMap {
    if lbl.height() == 0 || lbl.width() == 0 {
        return LabelMap::filled(height, width, crate::IGNORE_LABEL);
    }
    let cols: Vec<usize> = (0..width).map(|x| nearest_index(x, lbl.width(), width)).collect();
    LabelMap::from_fn(height, width, |r, c| {
        lbl.get(nearest_index(r, lbl.height(), height), cols[c])
    })
}

/// Bilinear resize of one f32 plane (`src_h x src_w` -> `dst_h x dst_w`).
pub fn resize_plane_bilinear(src: &[f32], src_h: usize, src_w: usize, dst_h: usize, dst_w: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; dst_h * dst_w];
    if src_h == 0 || src_w == 0 {
        return out;
    }
    let rows = taps(src_h, dst_h);
    let cols = taps(src_w, dst_w);
    for (y, r) in rows.iter().enumerate() {
        for (x, c) in cols.iter().enumerate() {
            let at = |yy: usize, xx: usize| src[yy * src_w + xx] as f64;
            let top = lerp(at(r.lo, c.lo), at(r.lo, c.hi), c.frac);
            let bottom = lerp(at(r.hi, c.lo), at(r.hi, c.hi), c.frac);
            out[y * dst_w + x] = lerp(top, bottom, r.frac) as f32;
        }
    }
    out
}
