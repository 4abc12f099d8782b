//! Kernels for segmentation-model evaluation and ensembling.
//!
//! Everything in this crate is pure computation over in-memory buffers:
//! confusion-matrix metrics, class-imbalance weights, the weighted and
//! confusion-aware losses with analytic gradients, the seeded training
//! augmentation pipeline, test-time-augmentation fusion, two-model
//! aggregation with a mixing-weight search, checkpoint averaging, and label
//! remapping between taxonomies. It builds without `std` (only `alloc`);
//! file IO, directory walking, thread pools and the CLI live in the
//! `segfuse` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod augment;
pub mod class_weights;
pub mod dataset;
mod error;
pub mod fusion;
pub mod losses;
pub mod metrics;
pub mod params;
pub mod resample;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{argmax_labels, Image, LabelMap, SoftPrediction, Tensor, TensorData, IGNORE_LABEL};
