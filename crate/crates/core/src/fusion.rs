//! Test-time-augmentation fusion and two-model aggregation.
//!
//! Both operate on probabilities. Aggregation is the convex combination
//! `P = gamma * P_s + (1 - gamma) * P_v`; [`gamma_search`] picks `gamma` on a
//! labelled set by exhaustive grid evaluation of mIoU.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::metrics::{miou, ConfusionMatrix};
use crate::resample::{resize_plane_bilinear, round_dim};
use crate::tensor::{argmax_first, LabelMap, SoftPrediction, Tensor, TensorData};
use crate::{Error, Result};

/// Scales and flip used at test time.
#[derive(Debug, Clone, PartialEq)]
pub struct TtaSpec {
    scales: Vec<f64>,
    flip: bool,
}

impl Default for TtaSpec {
    fn default() -> Self {
        TtaSpec {
            scales: vec![0.5, 1.0, 1.5],
            flip: true,
        }
    }
}

/// One transformed copy of the input the model should be run on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TtaView {
    pub scale: f64,
    pub flipped: bool,
    pub height: usize,
    pub width: usize,
}

impl TtaSpec {
    pub fn new(scales: Vec<f64>, flip: bool) -> Result<Self> {
        if scales.is_empty() {
            return Err(Error::InvalidValue("TTA needs at least one scale".into()));
        }
        if let Some(s) = scales.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::InvalidValue(format!("TTA scale {s} must be positive")));
        }
        Ok(TtaSpec { scales, flip })
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn flip(&self) -> bool {
        self.flip
    }

    /// The views to run for a `height x width` input.
    pub fn views(&self, height: usize, width: usize) -> Vec<TtaView> {
        let flips: &[bool] = if self.flip { &[false, true] } else { &[false] };
        self.scales
            .iter()
            .flat_map(|&scale| {
                flips.iter().map(move |&flipped| TtaView {
                    scale,
                    flipped,
                    height: round_dim(height as f64 * scale),
                    width: round_dim(width as f64 * scale),
                })
            })
            .collect()
    }
}

/// A model output for one TTA view.
#[derive(Debug, Clone, PartialEq)]
pub struct TtaInput {
    pub pred: SoftPrediction,
    pub scale: f64,
    pub flipped: bool,
}

fn canonical_order(a: &TtaInput, b: &TtaInput) -> Ordering {
    a.scale
        .total_cmp(&b.scale)
        .then(a.flipped.cmp(&b.flipped))
        .then(a.pred.height().cmp(&b.pred.height()))
        .then(a.pred.width().cmp(&b.pred.width()))
        .then_with(|| {
            a.pred
                .data()
                .iter()
                .map(|v| v.to_bits())
                .cmp(b.pred.data().iter().map(|v| v.to_bits()))
        })
}

/// Un-flips each view, resizes every class plane bilinearly to
/// `base_h x base_w`, averages, and renormalizes each pixel to sum 1.
///
/// Views are summed in a canonical order, so the result does not depend on
/// the order of `preds`.
pub fn fuse_tta(preds: &[TtaInput], base_h: usize, base_w: usize) -> Result<SoftPrediction> {
    let first = preds.first().ok_or(Error::EmptyList)?;
    let k = first.pred.num_classes();
    if let Some(p) = preds.iter().find(|p| p.pred.num_classes() != k) {
        return Err(Error::ClassCountMismatch {
            expected: k,
            found: p.pred.num_classes(),
        });
    }
    let mut order: Vec<&TtaInput> = preds.iter().collect();
    order.sort_by(|a, b| canonical_order(a, b));

    let plane = base_h * base_w;
    let mut sum = vec![0.0f64; k * plane];
    for input in order {
        let p = &input.pred;
        let (h, w) = (p.height(), p.width());
        for c in 0..k {
            let channel = p.channel(c);
            let unflipped: Vec<f32>;
            let src = if input.flipped {
                unflipped = (0..h * w).map(|i| channel[(i / w) * w + (w - 1 - i % w)]).collect();
                &unflipped[..]
            } else {
                channel
            };
            let resized = resize_plane_bilinear(src, h, w, base_h, base_w);
            for (acc, v) in sum[c * plane..(c + 1) * plane].iter_mut().zip(resized) {
                *acc += v as f64;
            }
        }
    }
    let n = preds.len() as f64;
    let mean = sum.into_iter().map(|s| (s / n) as f32).collect();
    Ok(SoftPrediction::new(k, base_h, base_w, mean)?.renormalized())
}

/// Mixing weight `gamma` in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregationSpec {
    gamma: f64,
}

impl AggregationSpec {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::InvalidValue(format!("gamma {gamma} outside [0, 1]")));
        }
        Ok(AggregationSpec { gamma })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

#[inline]
fn mix(a: f32, b: f32, gamma: f64) -> f32 {
    (gamma * a as f64 + (1.0 - gamma) * b as f64) as f32
}

fn check_same_shape(a: &SoftPrediction, b: &SoftPrediction) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.num_classes(),
            a.height(),
            a.width(),
            b.num_classes(),
            b.height(),
            b.width()
        )));
    }
    Ok(())
}

/// `gamma * ps + (1 - gamma) * pv`, entrywise. `gamma = 1` returns `ps` and
/// `gamma = 0` returns `pv` bit-for-bit.
pub fn aggregate(ps: &SoftPrediction, pv: &SoftPrediction, spec: AggregationSpec) -> Result<SoftPrediction> {
    check_same_shape(ps, pv)?;
    let data = ps
        .data()
        .iter()
        .zip(pv.data())
        .map(|(&a, &b)| mix(a, b, spec.gamma))
        .collect();
    SoftPrediction::new(ps.num_classes(), ps.height(), ps.width(), data)
}

/// `argmax_labels(aggregate(ps, pv, gamma))` without materializing the aggregate.
pub fn aggregate_argmax(ps: &SoftPrediction, pv: &SoftPrediction, gamma: f64) -> Result<LabelMap> {
    check_same_shape(ps, pv)?;
    let k = ps.num_classes();
    let plane = ps.num_pixels();
    let (a, b) = (ps.data(), pv.data());
    let labels = (0..plane)
        .map(|px| argmax_first((0..k).map(|c| mix(a[c * plane + px], b[c * plane + px], gamma))) as u8)
        .collect();
    LabelMap::new(ps.height(), ps.width(), labels)
}

/// The gamma values visited for a grid step: `{0, step, ..., 1}`.
///
/// When `1 / step` is an integer `n` the points are `i / n`, so for example
/// step 0.01 yields exactly 0.56 at `i = 56`. Otherwise the points are
/// `i * step` below 1, followed by 1.
pub fn gamma_grid(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step <= 0.5) {
        return Err(Error::InvalidValue(format!("grid step {step} outside (0, 0.5]")));
    }
    let n = libm::round(1.0 / step);
    if (n * step - 1.0).abs() <= 1e-9 {
        let n = n as usize;
        return Ok((0..=n).map(|i| i as f64 / n as f64).collect());
    }
    let mut grid: Vec<f64> = (0..)
        .map(|i| i as f64 * step)
        .take_while(|g| *g < 1.0 - 1e-12)
        .collect();
    grid.push(1.0);
    Ok(grid)
}

/// One confusion matrix per grid point for a single frame.
pub fn frame_confusions(
    ps: &SoftPrediction,
    pv: &SoftPrediction,
    gt: &LabelMap,
    grid: &[f64],
) -> Result<Vec<ConfusionMatrix>> {
    check_same_shape(ps, pv)?;
    if gt.height() != ps.height() || gt.width() != ps.width() {
        return Err(Error::ShapeMismatch(format!(
            "labels {}x{} vs predictions {}x{}",
            gt.height(),
            gt.width(),
            ps.height(),
            ps.width()
        )));
    }
    let k = ps.num_classes();
    gt.validate(k)?;
    grid.iter()
        .map(|&gamma| ConfusionMatrix::new(k).accumulated(gt, &aggregate_argmax(ps, pv, gamma)?))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaSearch {
    pub gamma: f64,
    pub miou: f64,
    /// `(gamma, mIoU)` for every grid point, ascending in gamma.
    pub curve: Vec<(f64, f64)>,
}

/// Picks the grid point with the highest mIoU; ties go to the smaller gamma.
pub fn select_gamma(grid: &[f64], confusions: &[ConfusionMatrix]) -> Result<GammaSearch> {
    if grid.is_empty() || grid.len() != confusions.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} grid points vs {} confusion matrices",
            grid.len(),
            confusions.len()
        )));
    }
    let mut curve = Vec::with_capacity(grid.len());
    let mut best = 0;
    for (i, (&gamma, cm)) in grid.iter().zip(confusions).enumerate() {
        let m = miou(cm)?.mean_iou;
        if m > curve.get(best).map_or(f64::NEG_INFINITY, |&(_, b): &(f64, f64)| b) {
            best = i;
        }
        curve.push((gamma, m));
    }
    Ok(GammaSearch {
        gamma: curve[best].0,
        miou: curve[best].1,
        curve,
    })
}

/// Serial gamma search over aligned frames `(ps, pv, gt)`.
pub fn gamma_search<'a, I>(frames: I, grid_step: f64) -> Result<GammaSearch>
where
    I: IntoIterator<Item = (&'a SoftPrediction, &'a SoftPrediction, &'a LabelMap)>,
{
    let grid = gamma_grid(grid_step)?;
    let mut totals: Option<Vec<ConfusionMatrix>> = None;
    for (ps, pv, gt) in frames {
        let cms = frame_confusions(ps, pv, gt, &grid)?;
        match totals.as_mut() {
            None => totals = Some(cms),
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(&cms) {
                    a.merge_from(b)?;
                }
            }
        }
    }
    let totals = totals.ok_or(Error::EmptyDataset)?;
    select_gamma(&grid, &totals)
}

/// Per-pixel maximum probability, `H x W`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl ConfidenceMap {
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.height as u32, self.width as u32],
            TensorData::F32(self.data.clone()),
        )
        .expect("dims match data")
    }

    /// Pixels whose confidence is below `threshold`, as a label-style mask
    /// (1 = below, 0 = at or above).
    pub fn below(&self, threshold: f32) -> LabelMap {
        let data = self.data.iter().map(|&v| u8::from(v < threshold)).collect();
        LabelMap::new(self.height, self.width, data).expect("same dims")
    }
}

/// Per-pixel maximum over classes, for auditing ensemble confidence.
pub fn score_threshold_report(p: &SoftPrediction) -> ConfidenceMap {
    let data = (0..p.num_pixels())
        .map(|px| p.pixel_probs(px).fold(f32::NEG_INFINITY, f32::max))
        .collect();
    ConfidenceMap {
        height: p.height(),
        width: p.width(),
        data,
    }
}

/// Flips a soft prediction horizontally, channel by channel.
pub fn hflip_prediction(p: &SoftPrediction) -> SoftPrediction {
    let (h, w) = (p.height(), p.width());
    let plane = h * w;
    let mut data = vec![0.0f32; p.data().len()];
    for c in 0..p.num_classes() {
        let ch = p.channel(c);
        for r in 0..h {
            for x in 0..w {
                data[c * plane + r * w + x] = ch[r * w + (w - 1 - x)];
            }
        }
    }
    SoftPrediction::new(p.num_classes(), h, w, data).expect("same shape")
}
