//! Seeded training augmentation applied jointly to an image and its labels.
//!
//! Pipeline order: multi-scale resize, random crop (with padding), random
//! horizontal flip, photometric distortion. Every image consumes exactly
//! [`DRAWS_PER_IMAGE`] uniform draws in a fixed order, whether or not the
//! corresponding operation fires:
//!
//! | draw | use                       |
//! |------|---------------------------|
//! | 0    | alpha ~ U(1, 2)           |
//! | 1    | reciprocal coin           |
//! | 2, 3 | beta1, beta2 ~ U(-.2, .2) |
//! | 4, 5 | crop row, crop column     |
//! | 6    | flip coin                 |
//! | 7, 8 | brightness coin, delta    |
//! | 9, 10 | contrast coin, factor    |
//! | 11, 12 | saturation coin, factor |
//! | 13, 14 | hue coin, shift         |

pub mod color;
mod rng;

pub use rng::{AugRng, Scripted, UnitSource};

use crate::resample::{resize_image_bilinear, resize_labels_nearest, round_dim};
use crate::tensor::{Image, LabelMap, IGNORE_LABEL};

pub const DRAWS_PER_IMAGE: u64 = 15;

/// Pad value for image pixels added when an input is smaller than the crop.
pub const IMAGE_PAD: u8 = 128;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleSample {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl ScaleSample {
    pub const IDENTITY: ScaleSample = ScaleSample {
        alpha: 1.0,
        beta1: 0.0,
        beta2: 0.0,
    };

    /// Target `(height, width)` for a source of the given size.
    pub fn target_dims(&self, height: usize, width: usize) -> (usize, usize) {
        (
            round_dim(height as f64 * self.alpha * (1.0 + self.beta1)),
            round_dim(width as f64 * self.alpha * (1.0 + self.beta2)),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub crop_h: usize,
    pub crop_w: usize,
    /// Probability of replacing alpha by its reciprocal.
    pub reciprocal_prob: f64,
    pub beta_range: f64,
    pub flip_prob: f64,
    pub brightness_prob: f64,
    pub brightness_delta: f64,
    pub contrast_prob: f64,
    pub contrast_range: (f64, f64),
    pub saturation_prob: f64,
    pub saturation_range: (f64, f64),
    pub hue_prob: f64,
    /// Maximum hue shift in degrees.
    pub hue_delta: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            crop_h: 480,
            crop_w: 853,
            reciprocal_prob: 0.5,
            beta_range: 0.2,
            flip_prob: 0.5,
            brightness_prob: 0.5,
            brightness_delta: 32.0,
            contrast_prob: 0.5,
            contrast_range: (0.5, 1.5),
            saturation_prob: 0.5,
            saturation_range: (0.5, 1.5),
            hue_prob: 0.5,
            hue_delta: 18.0,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// Same geometry, photometric distortion disabled.
    pub fn without_distortion(mut self) -> Self {
        self.brightness_prob = 0.0;
        self.contrast_prob = 0.0;
        self.saturation_prob = 0.0;
        self.hue_prob = 0.0;
        self
    }
}

/// Everything drawn for one image, for audit output.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentTrace {
    pub image_index: u64,
    pub scale: ScaleSample,
    pub resized: (usize, usize),
    pub crop_offset: (usize, usize),
    pub flipped: bool,
    pub distortion: Distortion,
}

/// Photometric parameters actually applied; `None` where the coin said no.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Distortion {
    pub brightness: Option<f64>,
    pub contrast: Option<f64>,
    pub saturation: Option<f64>,
    pub hue: Option<f64>,
}

/// alpha ~ U(1, 2), replaced by 1/alpha with probability 1/2; beta1, beta2 ~ U(-0.2, 0.2).
pub fn sample_scale(rng: &mut impl UnitSource) -> ScaleSample {
    sample_scale_with(rng, &AugmentConfig::default())
}

fn sample_scale_with(rng: &mut impl UnitSource, cfg: &AugmentConfig) -> ScaleSample {
    let alpha = rng.uniform(1.0, 2.0);
    let alpha = if rng.coin(cfg.reciprocal_prob) { 1.0 / alpha } else { alpha };
    let beta1 = rng.uniform(-cfg.beta_range, cfg.beta_range);
    let beta2 = rng.uniform(-cfg.beta_range, cfg.beta_range);
    ScaleSample { alpha, beta1, beta2 }
}

/// Resizes image (bilinear) and labels (nearest) to `s.target_dims`.
pub fn resize_pair(img: &Image, lbl: &LabelMap, s: &ScaleSample) -> (Image, LabelMap) {
    let (h, w) = s.target_dims(img.height(), img.width());
    (resize_image_bilinear(img, h, w), resize_labels_nearest(lbl, h, w))
}

/// Pads bottom/right up to the crop size (image 128, labels 255), then cuts
/// the `crop_h x crop_w` window whose top-left corner is `(top, left)`.
pub fn crop_at(img: &Image, lbl: &LabelMap, crop_h: usize, crop_w: usize, top: usize, left: usize) -> (Image, LabelMap) {
    let out_img = Image::from_fn(crop_h, crop_w, |r, c| {
        let (sr, sc) = (r + top, c + left);
        if sr < img.height() && sc < img.width() {
            img.pixel(sr, sc)
        } else {
            [IMAGE_PAD; 3]
        }
    });
    let out_lbl = LabelMap::from_fn(crop_h, crop_w, |r, c| {
        let (sr, sc) = (r + top, c + left);
        if sr < lbl.height() && sc < lbl.width() {
            lbl.get(sr, sc)
        } else {
            IGNORE_LABEL
        }
    });
    (out_img, out_lbl)
}

/// Crop with offsets drawn uniformly over all valid positions (row first).
pub fn random_crop(
    img: &Image,
    lbl: &LabelMap,
    cfg: &AugmentConfig,
    rng: &mut impl UnitSource,
) -> (Image, LabelMap) {
    let (top, left) = draw_crop_offset(img.height(), img.width(), cfg, rng);
    crop_at(img, lbl, cfg.crop_h, cfg.crop_w, top, left)
}

fn draw_crop_offset(h: usize, w: usize, cfg: &AugmentConfig, rng: &mut impl UnitSource) -> (usize, usize) {
    let top = rng.index_up_to(h.max(cfg.crop_h) - cfg.crop_h);
    let left = rng.index_up_to(w.max(cfg.crop_w) - cfg.crop_w);
    (top, left)
}

pub fn hflip_image(img: &Image) -> Image {
    let w = img.width();
    Image::from_fn(img.height(), w, |r, c| img.pixel(r, w - 1 - c))
}

pub fn hflip_labels(lbl: &LabelMap) -> LabelMap {
    let w = lbl.width();
    LabelMap::from_fn(lbl.height(), w, |r, c| lbl.get(r, w - 1 - c))
}

pub fn hflip_pair(img: &Image, lbl: &LabelMap) -> (Image, LabelMap) {
    (hflip_image(img), hflip_labels(lbl))
}

/// Brightness, contrast, saturation, hue, in that order, each with its own coin.
pub fn metric_distortion(img: &Image, cfg: &AugmentConfig, rng: &mut impl UnitSource) -> Image {
    let d = draw_distortion(cfg, rng);
    apply_distortion(img, &d)
}

fn draw_distortion(cfg: &AugmentConfig, rng: &mut impl UnitSource) -> Distortion {
    let mut op = |p: f64, lo: f64, hi: f64| {
        let fire = rng.coin(p);
        let value = rng.uniform(lo, hi);
        fire.then_some(value)
    };
    Distortion {
        brightness: op(cfg.brightness_prob, -cfg.brightness_delta, cfg.brightness_delta),
        contrast: op(cfg.contrast_prob, cfg.contrast_range.0, cfg.contrast_range.1),
        saturation: op(cfg.saturation_prob, cfg.saturation_range.0, cfg.saturation_range.1),
        hue: op(cfg.hue_prob, -cfg.hue_delta, cfg.hue_delta),
    }
}

pub fn apply_distortion(img: &Image, d: &Distortion) -> Image {
    let mut out = img.clone();
    if let Some(delta) = d.brightness {
        color::adjust_brightness(&mut out, delta);
    }
    if let Some(f) = d.contrast {
        color::adjust_contrast(&mut out, f);
    }
    if let Some(f) = d.saturation {
        color::adjust_saturation(&mut out, f as f32);
    }
    if let Some(h) = d.hue {
        color::adjust_hue(&mut out, h as f32);
    }
    out
}

/// Full pipeline for the image at `image_index`; a pure function of its inputs.
pub fn augment(img: &Image, lbl: &LabelMap, cfg: &AugmentConfig, image_index: u64) -> (Image, LabelMap) {
    let (img, lbl, _) = augment_traced(img, lbl, cfg, image_index);
    (img, lbl)
}

pub fn augment_traced(
    img: &Image,
    lbl: &LabelMap,
    cfg: &AugmentConfig,
    image_index: u64,
) -> (Image, LabelMap, AugmentTrace) {
    let mut rng = AugRng::new(cfg.seed, image_index);
    let out = augment_with(img, lbl, cfg, &mut rng, image_index);
    debug_assert_eq!(rng.counter(), DRAWS_PER_IMAGE);
    out
}

/// Pipeline driven by an arbitrary draw source.
pub fn augment_with(
    img: &Image,
    lbl: &LabelMap,
    cfg: &AugmentConfig,
    rng: &mut impl UnitSource,
    image_index: u64,
) -> (Image, LabelMap, AugmentTrace) {
    let scale = sample_scale_with(rng, cfg);
    let (img, lbl) = resize_pair(img, lbl, &scale);
    let resized = (img.height(), img.width());
    let crop_offset = draw_crop_offset(img.height(), img.width(), cfg, rng);
    let (img, lbl) = crop_at(&img, &lbl, cfg.crop_h, cfg.crop_w, crop_offset.0, crop_offset.1);
    let flipped = rng.coin(cfg.flip_prob);
    let (img, lbl) = if flipped { hflip_pair(&img, &lbl) } else { (img, lbl) };
    let distortion = draw_distortion(cfg, rng);
    let img = apply_distortion(&img, &distortion);
    let trace = AugmentTrace {
        image_index,
        scale,
        resized,
        crop_offset,
        flipped,
        distortion,
    };
    (img, lbl, trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;
    use proptest::prelude::*;

    fn gradient_image(h: usize, w: usize) -> Image {
        Image::from_fn(h, w, |r, c| [(r % 256) as u8, (c % 256) as u8, ((r + c) % 256) as u8])
    }

    #[test]
    fn scripted_scale_draws() {
        assert_eq!(sample_scale(&mut Scripted::new([0.0, 0.9, 0.5, 0.5])), ScaleSample::IDENTITY);
        // alpha just below 2 with the reciprocal coin taken
        let s = sample_scale(&mut Scripted::new([1.0 - 1e-12, 0.1, 0.5, 0.5]));
        assert!((s.alpha - 0.5).abs() < 1e-11);
        let s = sample_scale(&mut Scripted::new([0.25, 0.7, 0.0, 0.75]));
        assert_eq!((s.alpha, s.beta1), (1.25, -0.2));
        assert!((s.beta2 - 0.1).abs() < 1e-15);
    }

    #[test]
    fn resize_examples() {
        let img = gradient_image(480, 853);
        let lbl = LabelMap::from_fn(480, 853, |r, c| ((r / 40 + c / 40) % 5) as u8);
        let (i2, l2) = resize_pair(&img, &lbl, &ScaleSample::IDENTITY);
        assert_eq!(i2, img);
        assert_eq!(l2, lbl);
        let s = ScaleSample { alpha: 2.0, beta1: 0.1, beta2: -0.1 };
        assert_eq!(s.target_dims(480, 853), (1056, 1535));
        let flat = Image::filled(13, 17, [9, 99, 199]);
        let (f2, _) = resize_pair(&flat, &LabelMap::filled(13, 17, 1), &s);
        assert_eq!(f2, Image::filled(f2.height(), f2.width(), [9, 99, 199]));
    }

    #[test]
    fn crop_examples() {
        let cfg = AugmentConfig::default();
        let img = gradient_image(480, 853);
        let lbl = LabelMap::filled(480, 853, 3);
        let (ci, cl) = random_crop(&img, &lbl, &cfg, &mut Scripted::new([0.7, 0.3]));
        assert_eq!((ci, cl), (img, lbl));

        let big = gradient_image(500, 900);
        let big_lbl = LabelMap::from_fn(500, 900, |r, c| ((r + c) % 7) as u8);
        let (ci, cl) = crop_at(&big, &big_lbl, 480, 853, 10, 20);
        assert_eq!(ci.pixel(0, 0), big.pixel(10, 20));
        assert_eq!(ci.pixel(479, 852), big.pixel(489, 872));
        assert_eq!(cl.get(479, 852), big_lbl.get(489, 872));
        // draws map to offsets over 0..=20 and 0..=47
        let (top, left) = draw_crop_offset(500, 900, &cfg, &mut Scripted::new([10.0 / 21.0 + 1e-9, 20.0 / 48.0 + 1e-9]));
        assert_eq!((top, left), (10, 20));

        let short = gradient_image(400, 853);
        let (ci, cl) = random_crop(&short, &LabelMap::filled(400, 853, 0), &cfg, &mut Scripted::new([0.5, 0.5]));
        for r in 400..480 {
            for c in 0..853 {
                assert_eq!(cl.get(r, c), IGNORE_LABEL);
                assert_eq!(ci.pixel(r, c), [IMAGE_PAD; 3]);
            }
        }
        assert!(cl.data()[..400 * 853].iter().all(|&v| v == 0));
    }

    #[test]
    fn flip_examples() {
        let lbl = LabelMap::new(1, 2, alloc::vec![4, 9]).unwrap();
        assert_eq!(hflip_labels(&lbl).data(), &[9, 4]);
        let narrow = gradient_image(5, 1);
        assert_eq!(hflip_image(&narrow), narrow);
        let img = gradient_image(4, 7);
        assert_eq!(hflip_image(&hflip_image(&img)), img);
    }

    #[test]
    fn distortion_examples() {
        let img = gradient_image(6, 6);
        let cfg = AugmentConfig::default();
        // every coin lands on "no"
        let script: Vec<f64> = (0..8).map(|i| if i % 2 == 0 { 0.9 } else { 0.3 }).collect();
        assert_eq!(metric_distortion(&img, &cfg, &mut Scripted::new(script)), img);
        let bright = apply_distortion(&img, &Distortion { brightness: Some(300.0), ..Default::default() });
        assert!(bright.data().iter().all(|&v| v == 255));
        let gray = Image::filled(3, 3, [128, 128, 128]);
        let d = Distortion { saturation: Some(1.4), hue: Some(-17.0), ..Default::default() };
        assert_eq!(apply_distortion(&gray, &d), gray);
    }

    #[test]
    fn pipeline_is_deterministic_and_fixed_size() {
        let cfg = AugmentConfig { seed: 99, ..Default::default() };
        let img = gradient_image(300, 500);
        let lbl = LabelMap::from_fn(300, 500, |r, c| if (r + c) % 11 == 0 { 255 } else { ((r / 30) % 4) as u8 });
        let (a_img, a_lbl, a_trace) = augment_traced(&img, &lbl, &cfg, 5);
        let (b_img, b_lbl) = augment(&img, &lbl, &cfg, 5);
        assert_eq!((&a_img, &a_lbl), (&b_img, &b_lbl));
        assert_eq!((a_lbl.height(), a_lbl.width()), (480, 853));
        assert_eq!((a_img.height(), a_img.width()), (480, 853));
        let (c_img, _, c_trace) = augment_traced(&img, &lbl, &cfg, 6);
        assert_ne!(a_trace.scale, c_trace.scale);
        assert_ne!(a_img, c_img);
    }

    #[test]
    fn geometry_is_shared_between_image_and_labels() {
        // The image carries its own label in every channel; with distortion off,
        // pixels deep inside a constant block must agree after augmentation.
        let cfg = AugmentConfig { seed: 4, ..Default::default() }.without_distortion();
        let lbl = LabelMap::from_fn(240, 400, |r, c| ((r / 16) * 7 + (c / 16)) as u8 % 200);
        let img = Image::from_fn(240, 400, |r, c| [lbl.get(r, c); 3]);
        for index in 0..6 {
            let (oi, ol) = augment(&img, &lbl, &cfg, index);
            let (h, w) = (ol.height(), ol.width());
            let mut checked = 0;
            for r in 3..h - 3 {
                for c in 3..w - 3 {
                    let v = ol.get(r, c);
                    let uniform = (r - 3..=r + 3).all(|rr| (c - 3..=c + 3).all(|cc| ol.get(rr, cc) == v));
                    if uniform && v != IGNORE_LABEL {
                        assert_eq!(oi.pixel(r, c), [v; 3], "index {index} at ({r},{c})");
                        checked += 1;
                    }
                }
            }
            assert!(checked > 1000);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn no_novel_labels(seed in any::<u64>(), index in 0u64..1000, h in 20usize..120, w in 20usize..120) {
            let cfg = AugmentConfig { seed, crop_h: 64, crop_w: 96, ..Default::default() };
            let lbl = LabelMap::from_fn(h, w, |r, c| [0u8, 3, 7, 255][(r / 5 + c / 7) % 4]);
            let img = gradient_image(h, w);
            let (oi, ol) = augment(&img, &lbl, &cfg, index);
            prop_assert!(ol.data().iter().all(|v| [0u8, 3, 7, 255].contains(v)));
            prop_assert_eq!((ol.height(), ol.width(), oi.height(), oi.width()), (64, 96, 64, 96));
        }

        #[test]
        fn scale_sample_stays_in_range(seed in any::<u64>(), index in any::<u64>()) {
            let s = sample_scale(&mut AugRng::new(seed, index));
            prop_assert!(s.alpha > 0.5 && s.alpha < 2.0);
            prop_assert!(s.beta1.abs() <= 0.2 && s.beta2.abs() <= 0.2);
        }
    }
}
