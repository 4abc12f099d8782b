//! Pixel containers and the `SEGT` binary tensor encoding.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   4 bytes  "SEGT"
//! version u8       1
//! dtype   u8       0 = u8, 1 = f32
//! rank    u8
//! dims    rank x u32
//! payload product(dims) x sizeof(dtype), row-major
//! ```
//!
//! A rank-0 tensor holds exactly one value.

use alloc::format;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Label value marking unannotated pixels.
pub const IGNORE_LABEL: u8 = 255;

pub const MAGIC: [u8; 4] = *b"SEGT";
pub const FORMAT_VERSION: u8 = 1;

const HEADER_FIXED: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    U8,
    F32,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::U8 => 0,
            DType::F32 => 1,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::U8 => 1,
            DType::F32 => 4,
        }
    }

    fn from_code(code: u8, offset: usize) -> Result<Self> {
        match code {
            0 => Ok(DType::U8),
            1 => Ok(DType::F32),
            _ => Err(Error::UnsupportedDtype { code, offset }),
        }
    }
}

/// Payload of a [`Tensor`]. Equality on `F32` compares bit patterns, so a
/// NaN payload equals itself and `-0.0 != 0.0`.
#[derive(Debug, Clone)]
pub enum TensorData {
    U8(Vec<u8>),
    F32(Vec<f32>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::U8(_) => DType::U8,
            TensorData::F32(_) => DType::F32,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::U8(v) => v.len(),
            TensorData::F32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl PartialEq for TensorData {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (TensorData::U8(a), TensorData::U8(b)) => a == b,
            (TensorData::F32(a), TensorData::F32(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            _ => false,
        }
    }
}

impl Eq for TensorData {}

/// A dense row-major tensor as stored in a `.segt` file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tensor {
    dims: Vec<u32>,
    data: TensorData,
}

fn element_count(dims: &[u32]) -> Result<usize> {
    let product: u128 = dims.iter().map(|&d| d as u128).product();
    usize::try_from(product).map_err(|_| Error::DimsOverflow { dims_product: product })
}

impl Tensor {
    pub fn new(dims: Vec<u32>, data: TensorData) -> Result<Self> {
        if dims.len() > u8::MAX as usize {
            return Err(Error::Layout(format!("rank {} exceeds 255", dims.len())));
        }
        let expected = element_count(&dims)?;
        if expected != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "dims {:?} need {} values, got {}",
                dims,
                expected,
                data.len()
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn dims(&self) -> &[u32] {
        &self.dims
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn into_parts(self) -> (Vec<u32>, TensorData) {
        (self.dims, self.data)
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_FIXED + 4 * self.dims.len() + self.data.len() * self.dtype().size()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.encode_into(&mut out);
        out
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&MAGIC);
        out.push(FORMAT_VERSION);
        out.push(self.dtype().code());
        out.push(self.dims.len() as u8);
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        match &self.data {
            TensorData::U8(v) => out.extend_from_slice(v),
            TensorData::F32(v) => {
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
    }

    /// Decodes a buffer that must contain exactly one tensor.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let (tensor, used) = Self::decode_prefix(bytes)?;
        if used != bytes.len() {
            return Err(Error::TrailingBytes {
                offset: used,
                count: bytes.len() - used,
            });
        }
        Ok(tensor)
    }

    /// Decodes one tensor from the front of `bytes`, returning it together
    /// with the number of bytes consumed.
    pub fn decode_prefix(bytes: &[u8]) -> Result<(Self, usize)> {
        let take = |offset: usize, n: usize| -> Result<&[u8]> {
            bytes.get(offset..offset + n).ok_or(Error::TruncatedPayload {
                offset,
                needed: n,
                available: bytes.len().saturating_sub(offset),
            })
        };
        // Check the magic byte-by-byte so a short file that starts wrong
        // reports BadMagic rather than truncation.
        for (i, m) in MAGIC.iter().enumerate() {
            match bytes.get(i) {
                Some(b) if b == m => {}
                Some(_) => return Err(Error::BadMagic { offset: i }),
                None => {
                    return Err(Error::TruncatedPayload {
                        offset: i,
                        needed: MAGIC.len() - i,
                        available: 0,
                    })
                }
            }
        }
        let version = take(4, 1)?[0];
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion { version, offset: 4 });
        }
        let dtype = DType::from_code(take(5, 1)?[0], 5)?;
        let rank = take(6, 1)?[0] as usize;
        let dims_raw = take(HEADER_FIXED, 4 * rank)?;
        let dims: Vec<u32> = dims_raw
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let count = element_count(&dims)?;
        let payload_offset = HEADER_FIXED + 4 * rank;
        let payload_len = count
            .checked_mul(dtype.size())
            .ok_or(Error::DimsOverflow { dims_product: count as u128 * dtype.size() as u128 })?;
        let payload = take(payload_offset, payload_len)?;
        let data = match dtype {
            DType::U8 => TensorData::U8(payload.to_vec()),
            DType::F32 => TensorData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            ),
        };
        Ok((Tensor { dims, data }, payload_offset + payload_len))
    }

    fn expect_layout(&self, dtype: DType, rank: usize, what: &str) -> Result<()> {
        if self.dtype() != dtype || self.dims.len() != rank {
            return Err(Error::Layout(format!(
                "{what} needs a rank-{rank} {dtype:?} tensor, found rank-{} {:?} with dims {:?}",
                self.dims.len(),
                self.dtype(),
                self.dims
            )));
        }
        Ok(())
    }
}

/// An 8-bit RGB image, row-major `H x W x 3`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::ShapeMismatch(format!(
                "image {height}x{width}x3 needs {} bytes, got {}",
                height * width * 3,
                data.len()
            )));
        }
        Ok(Image { height, width, data })
    }

    pub fn filled(height: usize, width: usize, rgb: [u8; 3]) -> Self {
        let data = rgb.iter().copied().cycle().take(height * width * 3).collect();
        Image { height, width, data }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for r in 0..height {
            for c in 0..width {
                data.extend_from_slice(&f(r, c));
            }
        }
        Image { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor {
            dims: alloc::vec![self.height as u32, self.width as u32, 3],
            data: TensorData::U8(self.data.clone()),
        }
    }

    pub fn from_tensor(t: Tensor) -> Result<Self> {
        t.expect_layout(DType::U8, 3, "image")?;
        if t.dims[2] != 3 {
            return Err(Error::Layout(format!("image needs 3 channels, found {}", t.dims[2])));
        }
        let (h, w) = (t.dims[0] as usize, t.dims[1] as usize);
        match t.data {
            TensorData::U8(v) => Image::new(h, w, v),
            TensorData::F32(_) => unreachable!(),
        }
    }
}

/// Per-pixel class ids, row-major `H x W`; [`IGNORE_LABEL`] marks unannotated pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "label map {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(LabelMap { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: u8) -> Self {
        LabelMap {
            height,
            width,
            data: alloc::vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        LabelMap { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    pub fn same_shape(&self, other: &LabelMap) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Checks that every value is a class id below `num_classes` or the ignore label.
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        match self
            .data
            .iter()
            .find(|&&v| v != IGNORE_LABEL && v as usize >= num_classes)
        {
            Some(&value) => Err(Error::ClassOutOfRange { value, num_classes }),
            None => Ok(()),
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor {
            dims: alloc::vec![self.height as u32, self.width as u32],
            data: TensorData::U8(self.data.clone()),
        }
    }

    pub fn from_tensor(t: Tensor) -> Result<Self> {
        t.expect_layout(DType::U8, 2, "label map")?;
        let (h, w) = (t.dims[0] as usize, t.dims[1] as usize);
        match t.data {
            TensorData::U8(v) => LabelMap::new(h, w, v),
            TensorData::F32(_) => unreachable!(),
        }
    }
}

/// Per-pixel class probabilities, stored channel-major as `K x H x W`.
///
/// Values are finite and non-negative. The class count is at most 255 so
/// that every class id fits in a [`LabelMap`] without colliding with the
/// ignore label.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftPrediction {
    num_classes: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

pub const MAX_CLASSES: usize = 255;

impl SoftPrediction {
    pub fn new(num_classes: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if num_classes == 0 || num_classes > MAX_CLASSES {
            return Err(Error::InvalidValue(format!(
                "class count {num_classes} outside 1..={MAX_CLASSES}"
            )));
        }
        if data.len() != num_classes * height * width {
            return Err(Error::ShapeMismatch(format!(
                "soft prediction {num_classes}x{height}x{width} needs {} values, got {}",
                num_classes * height * width,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidValue(format!(
                "probability {} at index {i} is negative or non-finite",
                data[i]
            )));
        }
        Ok(SoftPrediction {
            num_classes,
            height,
            width,
            data,
        })
    }

    /// Builds a prediction from a per-pixel function returning `K` probabilities.
    pub fn from_pixels(
        num_classes: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> Vec<f32>,
    ) -> Result<Self> {
        let plane = height * width;
        let mut data = alloc::vec![0.0f32; num_classes * plane];
        for r in 0..height {
            for c in 0..width {
                let probs = f(r, c);
                if probs.len() != num_classes {
                    return Err(Error::ClassCountMismatch {
                        expected: num_classes,
                        found: probs.len(),
                    });
                }
                for (k, p) in probs.into_iter().enumerate() {
                    data[k * plane + r * width + c] = p;
                }
            }
        }
        SoftPrediction::new(num_classes, height, width, data)
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

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn same_shape(&self, other: &SoftPrediction) -> bool {
        self.num_classes == other.num_classes && self.height == other.height && self.width == other.width
    }

    pub fn channel(&self, class: usize) -> &[f32] {
        let plane = self.num_pixels();
        &self.data[class * plane..(class + 1) * plane]
    }

    #[inline]
    pub fn prob(&self, class: usize, pixel: usize) -> f32 {
        self.data[class * self.num_pixels() + pixel]
    }

    /// Probabilities of one pixel (by flat index), in class order.
    pub fn pixel_probs(&self, pixel: usize) -> impl Iterator<Item = f32> + '_ {
        let plane = self.num_pixels();
        (0..self.num_classes).map(move |k| self.data[k * plane + pixel])
    }

    /// Checks that each pixel's probabilities sum to 1 within `tol`.
    pub fn check_normalized(&self, tol: f64) -> Result<()> {
        for pixel in 0..self.num_pixels() {
            let sum: f64 = self.pixel_probs(pixel).map(f64::from).sum();
            if (sum - 1.0).abs() > tol {
                return Err(Error::InvalidValue(format!(
                    "pixel {pixel} sums to {sum}, not 1 within {tol}"
                )));
            }
        }
        Ok(())
    }

    /// Divides each pixel's probabilities by their sum. Pixels summing to
    /// zero become uniform.
    pub fn renormalized(mut self) -> Self {
        let plane = self.num_pixels();
        let k = self.num_classes;
        for pixel in 0..plane {
            let sum: f64 = (0..k).map(|c| self.data[c * plane + pixel] as f64).sum();
            for c in 0..k {
                let v = &mut self.data[c * plane + pixel];
                *v = if sum > 0.0 {
                    (*v as f64 / sum) as f32
                } else {
                    1.0 / k as f32
                };
            }
        }
        self
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor {
            dims: alloc::vec![self.num_classes as u32, self.height as u32, self.width as u32],
            data: TensorData::F32(self.data.clone()),
        }
    }

    pub fn from_tensor(t: Tensor) -> Result<Self> {
        t.expect_layout(DType::F32, 3, "soft prediction")?;
        let (k, h, w) = (t.dims[0] as usize, t.dims[1] as usize, t.dims[2] as usize);
        match t.data {
            TensorData::F32(v) => SoftPrediction::new(k, h, w, v),
            TensorData::U8(_) => unreachable!(),
        }
    }
}

/// Index of the largest value; the lowest index wins ties.
pub(crate) fn argmax_first<I: IntoIterator<Item = f32>>(values: I) -> usize {
    let mut best = 0;
    let mut best_val = f32::NEG_INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    best
}

/// Hard labels from a soft prediction: per pixel the lowest class index
/// attaining the maximum probability.
pub fn argmax_labels(p: &SoftPrediction) -> LabelMap {
    let data = (0..p.num_pixels())
        .map(|px| argmax_first(p.pixel_probs(px)) as u8)
        .collect();
    LabelMap {
        height: p.height,
        width: p.width,
        data,
    }
}
