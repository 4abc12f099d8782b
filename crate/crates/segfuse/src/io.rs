//! File readers and writers for the CLI.
//!
//! Tensors use the SEGT format from `segfuse_core::tensor`. Label maps may
//! also be 8-bit grayscale PNG, and RGB images may be PNG or JPEG.

use std::fs;
use std::path::{Path, PathBuf};

use segfuse_core::class_weights::ClassWeights;
use segfuse_core::dataset::{DatasetManifest, LabelRemap};
use segfuse_core::losses::Logits;
use segfuse_core::metrics::ConfusionMatrix;
use segfuse_core::params::ParameterSet;
use segfuse_core::{argmax_labels, Error, Image, LabelMap, SoftPrediction, Tensor, TensorData};

use crate::error::{CliError, Result};

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_bytes(path, text.as_bytes())
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    Tensor::decode(&read_bytes(path)?).map_err(|e| CliError::invalid(path, e))
}

pub fn write_tensor(path: &Path, t: &Tensor) -> Result<()> {
    write_bytes(path, &t.encode())
}

fn has_ext(path: &Path, exts: &[&str]) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| exts.iter().any(|x| e.eq_ignore_ascii_case(x)))
}

fn decode_image(path: &Path) -> Result<image::DynamicImage> {
    let bytes = read_bytes(path)?;
    image::load_from_memory(&bytes).map_err(|source| CliError::Image {
        path: path.to_owned(),
        source,
    })
}

/// SEGT rank-2 u8, or 8-bit grayscale PNG.
pub fn read_label_map(path: &Path) -> Result<LabelMap> {
    if has_ext(path, &["png"]) {
        let img = decode_image(path)?;
        let image::DynamicImage::ImageLuma8(gray) = img else {
            return Err(CliError::invalid(
                path,
                Error::Layout(format!("label PNG must be 8-bit grayscale, found {:?}", img.color())),
            ));
        };
        let (w, h) = gray.dimensions();
        return LabelMap::new(h as usize, w as usize, gray.into_raw()).map_err(|e| CliError::invalid(path, e));
    }
    LabelMap::from_tensor(read_tensor(path)?).map_err(|e| CliError::invalid(path, e))
}

/// SEGT rank-3 u8 `[H, W, 3]`, or PNG/JPEG converted to RGB.
pub fn read_image(path: &Path) -> Result<Image> {
    if has_ext(path, &["png", "jpg", "jpeg"]) {
        let rgb = decode_image(path)?.into_rgb8();
        let (w, h) = rgb.dimensions();
        return Image::new(h as usize, w as usize, rgb.into_raw()).map_err(|e| CliError::invalid(path, e));
    }
    Image::from_tensor(read_tensor(path)?).map_err(|e| CliError::invalid(path, e))
}

pub fn read_soft(path: &Path) -> Result<SoftPrediction> {
    SoftPrediction::from_tensor(read_tensor(path)?).map_err(|e| CliError::invalid(path, e))
}

/// Hard labels from either a label map or a soft prediction (argmax).
pub fn read_prediction_labels(path: &Path) -> Result<LabelMap> {
    if has_ext(path, &["png"]) {
        return read_label_map(path);
    }
    let t = read_tensor(path)?;
    match (t.data(), t.dims().len()) {
        (TensorData::F32(_), 3) => Ok(argmax_labels(
            &SoftPrediction::from_tensor(t).map_err(|e| CliError::invalid(path, e))?,
        )),
        _ => LabelMap::from_tensor(t).map_err(|e| CliError::invalid(path, e)),
    }
}

pub fn read_logits(path: &Path) -> Result<Logits> {
    Logits::from_tensor(read_tensor(path)?).map_err(|e| CliError::invalid(path, e))
}

pub fn read_weights(path: &Path) -> Result<ClassWeights> {
    ClassWeights::from_tensor(read_tensor(path)?).map_err(|e| CliError::invalid(path, e))
}

/// Confusion matrices are stored as f32 `[K, K]`; entries must be
/// non-negative integers.
pub fn confusion_to_tensor(cm: &ConfusionMatrix) -> Tensor {
    let k = cm.num_classes() as u32;
    let data = cm.counts().iter().map(|&c| c as f32).collect();
    Tensor::new(vec![k, k], TensorData::F32(data)).expect("k*k entries")
}

pub fn read_confusion(path: &Path) -> Result<ConfusionMatrix> {
    let t = read_tensor(path)?;
    let bad = |msg: String| CliError::invalid(path, Error::Layout(msg));
    let (dims, data) = t.into_parts();
    let TensorData::F32(values) = data else {
        return Err(bad("confusion matrix must be f32".into()));
    };
    if dims.len() != 2 || dims[0] != dims[1] {
        return Err(bad(format!("confusion matrix must be [K, K], got {dims:?}")));
    }
    let counts = values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as u64)
            } else {
                Err(bad(format!("entry {i} is {v}, not a non-negative integer")))
            }
        })
        .collect::<Result<Vec<u64>>>()?;
    ConfusionMatrix::from_counts(dims[0] as usize, counts).map_err(|e| CliError::invalid(path, e))
}

pub fn read_params(path: &Path) -> Result<ParameterSet> {
    ParameterSet::decode(&read_bytes(path)?).map_err(|e| CliError::invalid(path, e))
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    DatasetManifest::parse(&read_text(path)?).map_err(|e| CliError::invalid(path, e))
}

pub fn read_remap(path: &Path) -> Result<LabelRemap> {
    LabelRemap::parse(&read_text(path)?).map_err(|e| CliError::invalid(path, e))
}

/// Resolves a path listed in a manifest against the manifest's directory.
pub fn resolve(manifest: &Path, listed: &str) -> PathBuf {
    let listed = Path::new(listed);
    if listed.is_absolute() {
        return listed.to_owned();
    }
    match manifest.parent() {
        Some(dir) => dir.join(listed),
        None => listed.to_owned(),
    }
}

/// Absolute form of `path`, for manifests written to another directory.
pub fn absolute(path: &Path) -> Result<PathBuf> {
    std::path::absolute(path).map_err(|e| CliError::io(path, e))
}
