//! Class-weighted and confusion-aware cross-entropy losses over logits.
//!
//! All three losses share the per-pixel form
//!
//! ```text
//! loss_i = -factor_i * focal_i * ln p[y_i]
//! ```
//!
//! where `p = softmax(logits)` at pixel `i`, `y_i` is the ground truth and
//! `y'_i` the argmax of `p` (lowest index on ties):
//!
//! | loss                    | factor                                              | focal            |
//! |-------------------------|-----------------------------------------------------|------------------|
//! | weighted CE             | `w[y]`                                              | 1                |
//! | pixel distribution      | `max(w[y], w[y'])`                                  | 1                |
//! | confusion focal         | `C[y][y'] / max(1, min(C[y][y], C[y'][y']))`        | `(1 - p[y])^2`   |
//!
//! The factor is a constant per pixel (no gradient through the argmax or
//! the weights); the focal term is differentiated. The batch value is the
//! mean over pixels whose ground truth is not the ignore label, summed in
//! pixel order so repeated evaluations agree bit-for-bit.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::class_weights::ClassWeights;
use crate::metrics::ConfusionMatrix;
use crate::tensor::{LabelMap, Tensor, TensorData, IGNORE_LABEL};
use crate::{Error, Result};

/// Floor applied to probabilities inside the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Pre-softmax scores, channel-major `K x H x W`.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits {
    num_classes: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Logits {
    pub fn new(num_classes: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if num_classes == 0 || num_classes > crate::tensor::MAX_CLASSES {
            return Err(Error::InvalidValue(format!("class count {num_classes} outside 1..=255")));
        }
        if data.len() != num_classes * height * width {
            return Err(Error::ShapeMismatch(format!(
                "logits {num_classes}x{height}x{width} need {} values, got {}",
                num_classes * height * width,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(format!("non-finite logit at index {i}")));
        }
        Ok(Logits {
            num_classes,
            height,
            width,
            data,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn from_tensor(t: Tensor) -> Result<Self> {
        match (t.dims(), t.data()) {
            (&[k, h, w], TensorData::F32(_)) => {
                let (_, data) = t.into_parts();
                let TensorData::F32(v) = data else { unreachable!() };
                Logits::new(k as usize, h as usize, w as usize, v)
            }
            _ => Err(Error::Layout(format!(
                "logits need a rank-3 f32 tensor, found dims {:?}",
                t.dims()
            ))),
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.num_classes as u32, self.height as u32, self.width as u32],
            TensorData::F32(self.data.clone()),
        )
        .expect("dims match data")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBatch {
    logits: Logits,
    gt: LabelMap,
    weights: Option<ClassWeights>,
    confusion: Option<ConfusionMatrix>,
}

impl LossBatch {
    pub fn new(logits: Logits, gt: LabelMap) -> Result<Self> {
        if logits.height != gt.height() || logits.width != gt.width() {
            return Err(Error::ShapeMismatch(format!(
                "logits {}x{} vs labels {}x{}",
                logits.height,
                logits.width,
                gt.height(),
                gt.width()
            )));
        }
        gt.validate(logits.num_classes)?;
        Ok(LossBatch {
            logits,
            gt,
            weights: None,
            confusion: None,
        })
    }

    pub fn with_weights(mut self, weights: ClassWeights) -> Result<Self> {
        if weights.num_classes() != self.logits.num_classes {
            return Err(Error::ClassCountMismatch {
                expected: self.logits.num_classes,
                found: weights.num_classes(),
            });
        }
        self.weights = Some(weights);
        Ok(self)
    }

    pub fn with_confusion(mut self, confusion: ConfusionMatrix) -> Result<Self> {
        if confusion.num_classes() != self.logits.num_classes {
            return Err(Error::ClassCountMismatch {
                expected: self.logits.num_classes,
                found: confusion.num_classes(),
            });
        }
        self.confusion = Some(confusion);
        Ok(self)
    }

    pub fn logits(&self) -> &Logits {
        &self.logits
    }

    pub fn gt(&self) -> &LabelMap {
        &self.gt
    }

    pub fn weights(&self) -> Option<&ClassWeights> {
        self.weights.as_ref()
    }

    pub fn confusion(&self) -> Option<&ConfusionMatrix> {
        self.confusion.as_ref()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    /// Mean loss over counted pixels.
    pub value: f64,
    /// d(value)/d(logit), channel-major like the logits; exactly zero at ignored pixels.
    pub grad: Vec<f32>,
    pub counted_pixels: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    WeightedCe,
    PixelDistribution,
    ConfusionFocal,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [
        LossKind::WeightedCe,
        LossKind::PixelDistribution,
        LossKind::ConfusionFocal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::WeightedCe => "weighted-ce",
            LossKind::PixelDistribution => "pixel-distribution",
            LossKind::ConfusionFocal => "confusion-focal",
        }
    }

    /// Whether the per-pixel factor depends on the predicted class.
    pub fn uses_argmax(self) -> bool {
        !matches!(self, LossKind::WeightedCe)
    }

    pub fn evaluate(self, batch: &LossBatch) -> Result<LossResult> {
        let ctx = Context::new(self, batch)?;
        let logits: Vec<f64> = batch.logits.data.iter().map(|&v| v as f64).collect();
        let mut grad = vec![0.0f64; logits.len()];
        let (value, counted) = ctx.run(&logits, Some(&mut grad));
        Ok(LossResult {
            value,
            grad: grad.into_iter().map(|g| g as f32).collect(),
            counted_pixels: counted,
        })
    }

    /// Loss value at arbitrary f64 logits, reusing the batch's labels and
    /// weighting context. Used for finite-difference checks.
    pub fn value_at(self, batch: &LossBatch, logits: &[f64]) -> Result<f64> {
        if logits.len() != batch.logits.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} logits, got {}",
                batch.logits.data.len(),
                logits.len()
            )));
        }
        let ctx = Context::new(self, batch)?;
        Ok(ctx.run(logits, None).0)
    }
}

impl core::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidValue(format!("unknown loss `{s}`")))
    }
}

/// Class-weighted cross entropy: mean of `-w[y] ln p[y]`.
pub fn weighted_ce(batch: &LossBatch) -> Result<LossResult> {
    LossKind::WeightedCe.evaluate(batch)
}

/// Cross entropy weighted by `max(w[y], w[y'])`, penalising pixels of a
/// rare class predicted as a common one as heavily as the reverse.
pub fn pixel_distribution_loss(batch: &LossBatch) -> Result<LossResult> {
    LossKind::PixelDistribution.evaluate(batch)
}

/// Focal-style loss scaled by how often the ground-truth class is confused
/// with the predicted class on a held-out set.
pub fn confusion_focal_loss(batch: &LossBatch) -> Result<LossResult> {
    LossKind::ConfusionFocal.evaluate(batch)
}

enum Factor<'a> {
    Weighted(&'a ClassWeights),
    MaxWeighted(&'a ClassWeights),
    Confusion(&'a ConfusionMatrix),
}

impl Factor<'_> {
    #[inline]
    fn get(&self, gt: usize, pred: usize) -> f64 {
        match self {
            Factor::Weighted(w) => w.get(gt),
            Factor::MaxWeighted(w) => w.get(gt).max(w.get(pred)),
            Factor::Confusion(c) => confusion_factor(c, gt, pred),
        }
    }
}

/// `C[y][y'] / max(1, min(C[y][y], C[y'][y']))`.
pub fn confusion_factor(c: &ConfusionMatrix, gt: usize, pred: usize) -> f64 {
    let off = c.get(gt, pred);
    if off == 0 {
        return 0.0;
    }
    let denom = c.get(gt, gt).min(c.get(pred, pred)).max(1);
    off as f64 / denom as f64
}

struct Context<'a> {
    num_classes: usize,
    plane: usize,
    gt: &'a [u8],
    factor: Factor<'a>,
    focal: bool,
}

impl<'a> Context<'a> {
    fn new(kind: LossKind, batch: &'a LossBatch) -> Result<Self> {
        let factor = match kind {
            LossKind::WeightedCe => Factor::Weighted(batch.weights.as_ref().ok_or(Error::MissingWeights)?),
            LossKind::PixelDistribution => {
                Factor::MaxWeighted(batch.weights.as_ref().ok_or(Error::MissingWeights)?)
            }
            LossKind::ConfusionFocal => {
                Factor::Confusion(batch.confusion.as_ref().ok_or(Error::MissingConfusion)?)
            }
        };
        if batch.gt.data().iter().all(|&v| v == IGNORE_LABEL) {
            return Err(Error::AllIgnored);
        }
        Ok(Context {
            num_classes: batch.logits.num_classes,
            plane: batch.gt.len(),
            gt: batch.gt.data(),
            factor,
            focal: kind == LossKind::ConfusionFocal,
        })
    }

    /// Returns (mean loss, counted pixels); fills `grad` when given.
    fn run(&self, logits: &[f64], mut grad: Option<&mut [f64]>) -> (f64, usize) {
        let k = self.num_classes;
        let plane = self.plane;
        let mut probs = vec![0.0f64; k];
        let mut total = 0.0f64;
        let mut counted = 0usize;

        for (px, &y) in self.gt.iter().enumerate() {
            if y == IGNORE_LABEL {
                continue;
            }
            let y = y as usize;
            counted += 1;

            let mut max = f64::NEG_INFINITY;
            for c in 0..k {
                max = max.max(logits[c * plane + px]);
            }
            let mut sum = 0.0;
            for (c, p) in probs.iter_mut().enumerate() {
                *p = libm::exp(logits[c * plane + px] - max);
                sum += *p;
            }
            let mut pred = 0;
            for c in 0..k {
                probs[c] /= sum;
                if probs[c] > probs[pred] {
                    pred = c;
                }
            }

            let p = probs[y];
            let log_p = logits[y * plane + px] - max - libm::log(sum);
            let clamped = log_p < libm::log(PROB_FLOOR);
            let log_p = if clamped { libm::log(PROB_FLOOR) } else { log_p };
            let factor = self.factor.get(y, pred);
            let one_minus = 1.0 - p;
            let focal = if self.focal { one_minus * one_minus } else { 1.0 };
            total += -factor * focal * log_p;

            if let Some(grad) = grad.as_deref_mut() {
                // p[y] * d loss / d p[y]; the chain through softmax gives
                // d loss / d z[c] = g * (delta(c, y) - p[c]).
                let dlog = if clamped { 0.0 } else { 1.0 };
                let g = if self.focal {
                    -factor * (-2.0 * p * one_minus * log_p + one_minus * one_minus * dlog)
                } else {
                    -factor * dlog
                };
                for c in 0..k {
                    let delta = if c == y { 1.0 } else { 0.0 };
                    grad[c * plane + px] = g * (delta - probs[c]);
                }
            }
        }

        let n = counted.max(1) as f64;
        if let Some(grad) = grad {
            grad.iter_mut().for_each(|g| *g /= n);
        }
        (total / n, counted)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, GRAD_CHECK_FLOOR)`.
    pub max_rel_error: f64,
    pub checked: usize,
    /// Logits skipped because their pixel's top two logits are within `2 eps`.
    pub skipped_near_tie: usize,
}

/// Magnitude below which gradient components are compared absolutely.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Compares the analytic gradient against central differences with step `eps`.
///
/// For losses whose factor depends on the predicted class, pixels whose
/// top-two logits are within `2 eps` are skipped: a perturbation could flip
/// the argmax and the loss is discontinuous there.
pub fn gradient_check(kind: LossKind, batch: &LossBatch, eps: f64) -> Result<GradCheck> {
    let analytic = kind.evaluate(batch)?;
    let ctx = Context::new(kind, batch)?;
    let k = batch.logits.num_classes;
    let plane = batch.gt.len();
    let mut logits: Vec<f64> = batch.logits.data.iter().map(|&v| v as f64).collect();

    let mut out = GradCheck {
        max_rel_error: 0.0,
        checked: 0,
        skipped_near_tie: 0,
    };
    for px in 0..plane {
        if kind.uses_argmax() && top_two_gap(&logits, k, plane, px) < 2.0 * eps {
            out.skipped_near_tie += k;
            continue;
        }
        for c in 0..k {
            let idx = c * plane + px;
            let orig = logits[idx];
            logits[idx] = orig + eps;
            let plus = ctx.run(&logits, None).0;
            logits[idx] = orig - eps;
            let minus = ctx.run(&logits, None).0;
            logits[idx] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.grad[idx] as f64;
            let scale = a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
            out.max_rel_error = out.max_rel_error.max((a - numeric).abs() / scale);
            out.checked += 1;
        }
    }
    Ok(out)
}

fn top_two_gap(logits: &[f64], k: usize, plane: usize, px: usize) -> f64 {
    if k < 2 {
        return f64::INFINITY;
    }
    let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for c in 0..k {
        let v = logits[c * plane + px];
        if v > first {
            second = first;
            first = v;
        } else if v > second {
            second = v;
        }
    }
    first - second
}
