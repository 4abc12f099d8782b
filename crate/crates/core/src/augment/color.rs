//! Photometric adjustments on 8-bit RGB images.
//!
//! Every operation rounds half-up and clamps to `[0, 255]` when writing back.

use crate::tensor::Image;

#[inline]
fn to_u8(v: f64) -> u8 {
    libm::floor(v + 0.5).clamp(0.0, 255.0) as u8
}

pub fn adjust_brightness(img: &mut Image, delta: f64) {
    for v in img.data_mut() {
        *v = to_u8(*v as f64 + delta);
    }
}

pub fn adjust_contrast(img: &mut Image, factor: f64) {
    for v in img.data_mut() {
        *v = to_u8(*v as f64 * factor);
    }
}

pub fn adjust_saturation(img: &mut Image, factor: f32) {
    map_hsv(img, |h, s, v| (h, (s * factor).clamp(0.0, 1.0), v));
}

/// Rotates hue by `degrees`, wrapping modulo 360.
pub fn adjust_hue(img: &mut Image, degrees: f32) {
    map_hsv(img, |h, s, v| {
        let mut nh = libm::fmodf(h + degrees, 360.0);
        if nh < 0.0 {
            nh += 360.0;
        }
        (nh, s, v)
    });
}

fn map_hsv(img: &mut Image, f: impl Fn(f32, f32, f32) -> (f32, f32, f32)) {
    for px in img.data_mut().chunks_exact_mut(3) {
        let (h, s, v) = rgb_to_hsv([px[0], px[1], px[2]]);
        let (h, s, v) = f(h, s, v);
        px.copy_from_slice(&hsv_to_rgb(h, s, v));
    }
}

/// Hue in degrees `[0, 360)`, saturation and value in `[0, 1]`.
pub fn rgb_to_hsv(rgb: [u8; 3]) -> (f32, f32, f32) {
    let [r, g, b] = rgb.map(|c| c as f32 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let s = if max > 0.0 { d / max } else { 0.0 };
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        let h = 60.0 * ((g - b) / d);
        if h < 0.0 {
            h + 360.0
        } else {
            h
        }
    } else if max == g {
        60.0 * ((b - r) / d + 2.0)
    } else {
        60.0 * ((r - g) / d + 4.0)
    };
    (h, s, max)
}

pub fn hsv_to_rgb(h: f32, s: f32, v: f32) -> [u8; 3] {
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - libm::fabsf(libm::fmodf(hp, 2.0) - 1.0));
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r, g, b].map(|ch| to_u8(((ch + m) * 255.0) as f64))
}
