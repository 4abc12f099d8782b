//! Named parameter tensors (model checkpoints) and elementwise averaging.
//!
//! Container layout, little-endian:
//!
//! ```text
//! count u32
//! repeated count times:
//!   name_len u16
//!   name     name_len bytes, UTF-8
//!   tensor   one SEGT tensor (f32)
//! ```

use alloc::borrow::ToOwned;
use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::tensor::{Tensor, TensorData};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    entries: Vec<(String, Tensor)>,
}

impl ParameterSet {
    /// Validates unique names, f32 payloads and finite values.
    pub fn new(entries: Vec<(String, Tensor)>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for (name, t) in &entries {
            if !seen.insert(name.as_str()) {
                return Err(Error::NameMismatch(format!("duplicate parameter `{name}`")));
            }
            if name.len() > u16::MAX as usize {
                return Err(Error::InvalidValue(format!("parameter name of {} bytes is too long", name.len())));
            }
            match t.data() {
                TensorData::F32(v) => {
                    if let Some(index) = v.iter().position(|x| !x.is_finite()) {
                        return Err(Error::NonFiniteInput {
                            name: name.clone(),
                            index,
                        });
                    }
                }
                TensorData::U8(_) => {
                    return Err(Error::Layout(format!("parameter `{name}` is not f32")));
                }
            }
        }
        Ok(ParameterSet { entries })
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            t.encode_into(&mut out);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let take = |offset: usize, n: usize| -> Result<&[u8]> {
            bytes.get(offset..offset + n).ok_or(Error::TruncatedPayload {
                offset,
                needed: n,
                available: bytes.len().saturating_sub(offset),
            })
        };
        let c = take(0, 4)?;
        let count = u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize;
        let mut pos = 4;
        let mut entries = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let l = take(pos, 2)?;
            let len = u16::from_le_bytes([l[0], l[1]]) as usize;
            pos += 2;
            let name = core::str::from_utf8(take(pos, len)?)
                .map_err(|e| Error::Layout(format!("parameter name at byte offset {pos} is not UTF-8: {e}")))?
                .to_owned();
            pos += len;
            let (tensor, used) = Tensor::decode_prefix(&bytes[pos..]).map_err(|e| shift_offset(e, pos))?;
            pos += used;
            entries.push((name, tensor));
        }
        if pos != bytes.len() {
            return Err(Error::TrailingBytes {
                offset: pos,
                count: bytes.len() - pos,
            });
        }
        ParameterSet::new(entries)
    }
}

fn shift_offset(e: Error, base: usize) -> Error {
    match e {
        Error::BadMagic { offset } => Error::BadMagic { offset: offset + base },
        Error::UnsupportedVersion { version, offset } => Error::UnsupportedVersion {
            version,
            offset: offset + base,
        },
        Error::UnsupportedDtype { code, offset } => Error::UnsupportedDtype {
            code,
            offset: offset + base,
        },
        Error::TruncatedPayload {
            offset,
            needed,
            available,
        } => Error::TruncatedPayload {
            offset: offset + base,
            needed,
            available,
        },
        other => other,
    }
}

/// Elementwise mean of each named tensor across `sets`.
///
/// Values are accumulated in f64 after sorting each element's values, so the
/// result does not depend on the order of `sets`.
pub fn average_parameters(sets: &[ParameterSet]) -> Result<ParameterSet> {
    let first = sets.first().ok_or(Error::EmptyList)?;
    for (i, s) in sets.iter().enumerate().skip(1) {
        if s.len() != first.len() {
            return Err(Error::NameMismatch(format!(
                "set {i} has {} parameters, set 0 has {}",
                s.len(),
                first.len()
            )));
        }
        for ((a, ta), (b, tb)) in first.entries.iter().zip(&s.entries) {
            if a != b {
                return Err(Error::NameMismatch(format!("set {i} has `{b}` where set 0 has `{a}`")));
            }
            if ta.dims() != tb.dims() {
                return Err(Error::ShapeMismatch(format!(
                    "`{a}`: dims {:?} in set 0 vs {:?} in set {i}",
                    ta.dims(),
                    tb.dims()
                )));
            }
        }
    }

    let n = sets.len() as f64;
    let mut scratch: Vec<f32> = Vec::with_capacity(sets.len());
    let mut entries = Vec::with_capacity(first.len());
    for (idx, (name, t)) in first.entries.iter().enumerate() {
        let columns: Vec<&[f32]> = sets
            .iter()
            .map(|s| match s.entries[idx].1.data() {
                TensorData::F32(v) => v.as_slice(),
                TensorData::U8(_) => unreachable!("validated f32"),
            })
            .collect();
        let len = columns[0].len();
        let mut mean = Vec::with_capacity(len);
        for e in 0..len {
            scratch.clear();
            scratch.extend(columns.iter().map(|c| c[e]));
            scratch.sort_by(f32::total_cmp);
            let sum: f64 = scratch.iter().map(|&v| v as f64).sum();
            mean.push((sum / n) as f32);
        }
        entries.push((name.clone(), Tensor::new(t.dims().to_vec(), TensorData::F32(mean))?));
    }
    ParameterSet::new(entries)
}
