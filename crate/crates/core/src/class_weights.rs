//! Class-imbalance weights from training-set pixel counts.
//!
//! The weight of class `i` is `sqrt(n_i / mean(n))`, with the mean taken
//! over all `K` classes (zero-count classes included).

use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::{LabelMap, Tensor, TensorData, IGNORE_LABEL};
use crate::{Error, Result};

/// Per-class pixel totals `n_i`; ignore pixels are never counted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelCounts {
    counts: Vec<u64>,
}

impl PixelCounts {
    pub fn zeros(num_classes: usize) -> Self {
        PixelCounts {
            counts: vec![0; num_classes],
        }
    }

    pub fn from_counts(counts: Vec<u64>) -> Self {
        PixelCounts { counts }
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Mean count over all classes, `mu_n`.
    pub fn mean(&self) -> f64 {
        if self.counts.is_empty() {
            return 0.0;
        }
        self.total() as f64 / self.counts.len() as f64
    }

    /// Classes with no pixels at all.
    pub fn absent_classes(&self) -> impl Iterator<Item = usize> + '_ {
        self.counts.iter().enumerate().filter(|(_, &n)| n == 0).map(|(i, _)| i)
    }

    /// Adds one label map. On error the counts are left untouched.
    pub fn add(&mut self, map: &LabelMap) -> Result<()> {
        map.validate(self.counts.len())?;
        for &v in map.data() {
            if v != IGNORE_LABEL {
                self.counts[v as usize] += 1;
            }
        }
        Ok(())
    }

    pub fn merge_from(&mut self, other: &PixelCounts) -> Result<()> {
        if other.counts.len() != self.counts.len() {
            return Err(Error::ClassCountMismatch {
                expected: self.counts.len(),
                found: other.counts.len(),
            });
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

/// Counts class pixels over a sequence of label maps.
pub fn count_pixels<'a, I>(maps: I, num_classes: usize) -> Result<PixelCounts>
where
    I: IntoIterator<Item = &'a LabelMap>,
{
    let mut counts = PixelCounts::zeros(num_classes);
    for map in maps {
        counts.add(map)?;
    }
    Ok(counts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights {
    weights: Vec<f64>,
}

impl ClassWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::InvalidValue(alloc::format!(
                "class weight {w} is negative or non-finite"
            )));
        }
        Ok(ClassWeights { weights })
    }

    pub fn uniform(num_classes: usize) -> Self {
        ClassWeights {
            weights: vec![1.0; num_classes],
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn num_classes(&self) -> usize {
        self.weights.len()
    }

    #[inline]
    pub fn get(&self, class: usize) -> f64 {
        self.weights[class]
    }

    /// Rank-1 f32 tensor of the weights.
    pub fn to_tensor(&self) -> Tensor {
        let data = self.weights.iter().map(|&w| w as f32).collect();
        Tensor::new(vec![self.weights.len() as u32], TensorData::F32(data)).expect("rank-1 length matches")
    }

    pub fn from_tensor(t: Tensor) -> Result<Self> {
        match (t.dims(), t.data()) {
            ([_], TensorData::F32(v)) => ClassWeights::new(v.iter().map(|&w| w as f64).collect()),
            _ => Err(Error::Layout(alloc::format!(
                "class weights need a rank-1 f32 tensor, found dims {:?}",
                t.dims()
            ))),
        }
    }
}

/// `w_i = sqrt(n_i / mu_n)`.
///
/// The ratio is evaluated as `(n_i * K) / sum(n)` from exact integers, so
/// multiplying every count by the same factor yields bit-identical weights
/// while the integers stay below 2^53.
pub fn compute_weights(n: &PixelCounts) -> Result<ClassWeights> {
    let total: u128 = n.counts.iter().map(|&c| c as u128).sum();
    if total == 0 {
        return Err(Error::AllZeroCounts);
    }
    let k = n.counts.len() as u128;
    let weights = n
        .counts
        .iter()
        .map(|&c| libm::sqrt((c as u128 * k) as f64 / total as f64))
        .collect();
    Ok(ClassWeights { weights })
}
