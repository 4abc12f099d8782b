//! Confusion-matrix accumulation and IoU / mIoU.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::{LabelMap, IGNORE_LABEL};
use crate::{Error, Result};

/// `K x K` pixel counts; entry `(i, j)` counts pixels with ground truth `i`
/// predicted as `j`.
///
/// Counts are 64-bit: a full video dataset at 480p overflows `u32`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        ConfusionMatrix {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    /// Builds a matrix from row-major counts.
    pub fn from_counts(num_classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != num_classes * num_classes {
            return Err(Error::ShapeMismatch(format!(
                "{num_classes}x{num_classes} confusion matrix needs {} counts, got {}",
                num_classes * num_classes,
                counts.len()
            )));
        }
        Ok(ConfusionMatrix { num_classes, counts })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    #[inline]
    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.num_classes + pred]
    }

    pub fn row_sum(&self, class: usize) -> u64 {
        self.counts[class * self.num_classes..(class + 1) * self.num_classes]
            .iter()
            .sum()
    }

    pub fn col_sum(&self, class: usize) -> u64 {
        (0..self.num_classes).map(|i| self.get(i, class)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn transpose(&self) -> Self {
        let k = self.num_classes;
        let mut counts = vec![0; k * k];
        for i in 0..k {
            for j in 0..k {
                counts[j * k + i] = self.counts[i * k + j];
            }
        }
        ConfusionMatrix { num_classes: k, counts }
    }

    /// Adds one frame. Pixels whose ground truth is the ignore label are
    /// skipped, whatever the prediction holds there; the matrix is left
    /// untouched on error.
    pub fn accumulate(&mut self, gt: &LabelMap, pred: &LabelMap) -> Result<()> {
        if !gt.same_shape(pred) {
            return Err(Error::ShapeMismatch(format!(
                "ground truth {}x{} vs prediction {}x{}",
                gt.height(),
                gt.width(),
                pred.height(),
                pred.width()
            )));
        }
        gt.validate(self.num_classes)?;
        let k = self.num_classes;
        let counted = gt.data().iter().zip(pred.data()).filter(|(&g, _)| g != IGNORE_LABEL);
        if let Some((_, &value)) = counted.clone().find(|(_, &p)| p as usize >= k) {
            return Err(Error::ClassOutOfRange { value, num_classes: k });
        }
        for (&g, &p) in counted {
            self.counts[g as usize * k + p as usize] += 1;
        }
        Ok(())
    }

    /// Consuming form of [`accumulate`](Self::accumulate).
    pub fn accumulated(mut self, gt: &LabelMap, pred: &LabelMap) -> Result<Self> {
        self.accumulate(gt, pred)?;
        Ok(self)
    }

    pub fn merge_from(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if self.num_classes != other.num_classes {
            return Err(Error::ShapeMismatch(format!(
                "cannot merge {0}x{0} with {1}x{1}",
                self.num_classes, other.num_classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// Entrywise sum. With the zero matrix as identity this is a
    /// commutative monoid, so per-frame matrices may be merged in any order.
    pub fn merge(&self, other: &ConfusionMatrix) -> Result<ConfusionMatrix> {
        let mut out = self.clone();
        out.merge_from(other)?;
        Ok(out)
    }

    pub fn miou(&self) -> Result<IouReport> {
        miou(self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IouReport {
    /// `None` for classes that never occur in either ground truth or prediction.
    pub per_class_iou: Vec<Option<f64>>,
    pub mean_iou: f64,
}

impl IouReport {
    pub fn present_classes(&self) -> usize {
        self.per_class_iou.iter().filter(|v| v.is_some()).count()
    }
}

/// Intersection over union for one class given its diagonal count and row / column sums.
#[inline]
pub fn class_iou(intersection: u64, row_sum: u64, col_sum: u64) -> Option<f64> {
    let union = row_sum + col_sum - intersection;
    (union > 0).then(|| intersection as f64 / union as f64)
}

/// Per-class IoU and their mean over classes with a non-zero union.
pub fn miou(cm: &ConfusionMatrix) -> Result<IouReport> {
    let per_class_iou: Vec<Option<f64>> = (0..cm.num_classes)
        .map(|i| class_iou(cm.get(i, i), cm.row_sum(i), cm.col_sum(i)))
        .collect();
    let present: Vec<f64> = per_class_iou.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    let mean_iou = present.iter().sum::<f64>() / present.len() as f64;
    Ok(IouReport {
        per_class_iou,
        mean_iou,
    })
}

/// Fraction of annotated (non-ignore) pixels. An empty map has coverage 0.
pub fn coverage(gt: &LabelMap) -> f64 {
    if gt.is_empty() {
        return 0.0;
    }
    let annotated = gt.data().iter().filter(|&&v| v != IGNORE_LABEL).count();
    annotated as f64 / gt.len() as f64
}
