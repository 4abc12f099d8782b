//! Label remapping between taxonomies and coverage-based filtering.
//!
//! Remap tables are CSV text, one `source_id,target_id` pair per line, with
//! `#` starting a comment. Manifests are UTF-8 text with one
//! `image_path<TAB>label_path<TAB>tag` record per line, preceded by an
//! optional version marker and tag declaration:
//!
//! ```text
//! # segfuse-manifest v1
//! # tags: still,video
//! still/0001.png<TAB>still/0001_label.png<TAB>still
//! ```

use alloc::borrow::ToOwned;
use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::{Display, Write as _};

use crate::metrics::coverage;
use crate::tensor::{LabelMap, IGNORE_LABEL};
use crate::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;
const VERSION_PREFIX: &str = "# segfuse-manifest v";
const TAGS_PREFIX: &str = "# tags:";

/// Lookup table from source id to target id. Unmapped sources go to 255.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelRemap {
    table: [u8; 256],
    mapped: [bool; 256],
}

impl Default for LabelRemap {
    fn default() -> Self {
        LabelRemap {
            table: [IGNORE_LABEL; 256],
            mapped: [false; 256],
        }
    }
}

impl LabelRemap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Identity on `ids`, everything else to 255.
    pub fn identity_on(ids: impl IntoIterator<Item = u8>) -> Self {
        let mut m = Self::new();
        for id in ids {
            if id != IGNORE_LABEL {
                m.table[id as usize] = id;
                m.mapped[id as usize] = true;
            }
        }
        m
    }

    /// Adds `source -> target`. A repeated source is rejected; mapping 255 to
    /// anything but 255 is rejected.
    pub fn insert(&mut self, source: u8, target: u8) -> Result<()> {
        if self.mapped[source as usize] {
            return Err(Error::DuplicateSource {
                line: 0,
                source_id: source as u32,
            });
        }
        if source == IGNORE_LABEL && target != IGNORE_LABEL {
            return Err(Error::InvalidValue(format!("255 must map to 255, not {target}")));
        }
        self.table[source as usize] = target;
        self.mapped[source as usize] = true;
        Ok(())
    }

    pub fn get(&self, source: u8) -> u8 {
        self.table[source as usize]
    }

    pub fn is_mapped(&self, source: u8) -> bool {
        self.mapped[source as usize]
    }

    /// Explicitly listed `(source, target)` pairs in source order.
    pub fn pairs(&self) -> impl Iterator<Item = (u8, u8)> + '_ {
        (0..=255u8).filter(|&s| self.mapped[s as usize]).map(|s| (s, self.table[s as usize]))
    }

    /// Distinct targets other than 255.
    pub fn targets(&self) -> BTreeSet<u8> {
        self.pairs().map(|(_, t)| t).filter(|&t| t != IGNORE_LABEL).collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Self::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let mut fields = content.split(',');
            let (Some(s), Some(t), None) = (fields.next(), fields.next(), fields.next()) else {
                return Err(Error::ParseError {
                    line,
                    message: format!("expected `source_id,target_id`, got `{content}`"),
                });
            };
            let source = parse_id(s, line)?;
            let target = parse_id(t, line)?;
            m.insert(source, target).map_err(|e| match e {
                Error::DuplicateSource { source_id, .. } => Error::DuplicateSource { line, source_id },
                Error::InvalidValue(message) => Error::ParseError { line, message },
                other => other,
            })?;
        }
        Ok(m)
    }
}

fn parse_id(field: &str, line: usize) -> Result<u8> {
    let field = field.trim();
    let v: i64 = field.parse().map_err(|_| Error::ParseError {
        line,
        message: format!("`{field}` is not an integer"),
    })?;
    u8::try_from(v).map_err(|_| Error::IdOutOfRange { line, value: v })
}

pub fn remap_labels(lbl: &LabelMap, m: &LabelRemap) -> LabelMap {
    let mut out = lbl.clone();
    for v in out.data_mut() {
        *v = m.get(*v);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRecord {
    pub image: String,
    pub label: String,
    pub tag: String,
}

impl ManifestRecord {
    pub fn new(image: impl Into<String>, label: impl Into<String>, tag: impl Into<String>) -> Self {
        ManifestRecord {
            image: image.into(),
            label: label.into(),
            tag: tag.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetManifest {
    /// Declared tag set; `None` accepts any tag.
    pub tags: Option<BTreeSet<String>>,
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn new(tags: Option<BTreeSet<String>>, records: Vec<ManifestRecord>) -> Result<Self> {
        let m = DatasetManifest { tags, records };
        for (i, r) in m.records.iter().enumerate() {
            m.check_record(r, i + 1)?;
        }
        Ok(m)
    }

    /// Same tag declaration, different records.
    pub fn with_records(&self, records: Vec<ManifestRecord>) -> Self {
        DatasetManifest {
            tags: self.tags.clone(),
            records,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn check_record(&self, r: &ManifestRecord, line: usize) -> Result<()> {
        for (what, v) in [("image path", &r.image), ("label path", &r.label), ("tag", &r.tag)] {
            if v.is_empty() {
                return Err(Error::ParseError {
                    line,
                    message: format!("empty {what}"),
                });
            }
            if v.contains(['\t', '\n', '\r']) {
                return Err(Error::ParseError {
                    line,
                    message: format!("{what} contains a tab or newline"),
                });
            }
        }
        if r.tag.contains(char::is_whitespace) {
            return Err(Error::ParseError {
                line,
                message: format!("tag `{}` contains whitespace", r.tag),
            });
        }
        if let Some(tags) = &self.tags {
            if !tags.contains(&r.tag) {
                return Err(Error::ParseError {
                    line,
                    message: format!("tag `{}` is not declared", r.tag),
                });
            }
        }
        Ok(())
    }

    /// A missing version marker is read as the current version.
    pub fn parse(text: &str) -> Result<Self> {
        let mut m = DatasetManifest::default();
        let mut seen_record = false;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim_end_matches('\r');
            if trimmed.trim().is_empty() {
                continue;
            }
            if let Some(rest) = trimmed.strip_prefix(VERSION_PREFIX) {
                let v: u32 = rest.trim().parse().map_err(|_| Error::ParseError {
                    line,
                    message: format!("bad version marker `{trimmed}`"),
                })?;
                if v != MANIFEST_VERSION {
                    return Err(Error::ParseError {
                        line,
                        message: format!("unsupported manifest version {v}"),
                    });
                }
                continue;
            }
            if let Some(rest) = trimmed.strip_prefix(TAGS_PREFIX) {
                if seen_record || m.tags.is_some() {
                    return Err(Error::ParseError {
                        line,
                        message: "tag declaration must come once, before any record".to_owned(),
                    });
                }
                m.tags = Some(
                    rest.split(',')
                        .map(str::trim)
                        .filter(|t| !t.is_empty())
                        .map(ToString::to_string)
                        .collect(),
                );
                continue;
            }
            if trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split('\t').collect();
            let [image, label, tag] = fields[..] else {
                return Err(Error::ParseError {
                    line,
                    message: format!("expected 3 tab-separated fields, got {}", fields.len()),
                });
            };
            let r = ManifestRecord::new(image, label, tag);
            m.check_record(&r, line)?;
            m.records.push(r);
            seen_record = true;
        }
        Ok(m)
    }

    pub fn format(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{VERSION_PREFIX}{MANIFEST_VERSION}");
        if let Some(tags) = &self.tags {
            let joined: Vec<&str> = tags.iter().map(String::as_str).collect();
            let _ = writeln!(out, "{TAGS_PREFIX} {}", joined.join(","));
        }
        for r in &self.records {
            let _ = writeln!(out, "{}\t{}\t{}", r.image, r.label, r.tag);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredRecord {
    /// Position in the input manifest.
    pub index: usize,
    pub record: ManifestRecord,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FailedRecord {
    pub index: usize,
    pub record: ManifestRecord,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FilterOutcome {
    pub kept: Vec<ScoredRecord>,
    pub dropped: Vec<ScoredRecord>,
    pub errors: Vec<FailedRecord>,
}

impl FilterOutcome {
    pub fn kept_manifest(&self, like: &DatasetManifest) -> DatasetManifest {
        like.with_records(self.kept.iter().map(|s| s.record.clone()).collect())
    }

    pub fn dropped_manifest(&self, like: &DatasetManifest) -> DatasetManifest {
        like.with_records(self.dropped.iter().map(|s| s.record.clone()).collect())
    }
}

/// Coverage of `lbl` after remapping through `m`.
pub fn remapped_coverage(lbl: &LabelMap, m: &LabelRemap) -> f64 {
    coverage(&remap_labels(lbl, m))
}

/// Splits records by precomputed per-record coverage (or load error).
/// `outcomes[i]` belongs to `manifest.records[i]`; order is preserved.
pub fn partition_by_coverage(
    manifest: &DatasetManifest,
    outcomes: Vec<core::result::Result<f64, String>>,
    threshold: f64,
) -> Result<FilterOutcome> {
    if outcomes.len() != manifest.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} outcomes for {} records",
            outcomes.len(),
            manifest.len()
        )));
    }
    let mut out = FilterOutcome::default();
    for (index, (record, outcome)) in manifest.records.iter().zip(outcomes).enumerate() {
        let record = record.clone();
        match outcome {
            Ok(coverage) if coverage >= threshold => out.kept.push(ScoredRecord { index, record, coverage }),
            Ok(coverage) => out.dropped.push(ScoredRecord { index, record, coverage }),
            Err(message) => out.errors.push(FailedRecord { index, record, message }),
        }
    }
    Ok(out)
}

/// Keeps records whose remapped label has coverage at least `threshold`.
/// Records whose label cannot be loaded go to `errors`.
pub fn filter_by_coverage<E: Display>(
    manifest: &DatasetManifest,
    m: &LabelRemap,
    threshold: f64,
    mut load: impl FnMut(&ManifestRecord) -> core::result::Result<LabelMap, E>,
) -> Result<FilterOutcome> {
    let outcomes = manifest
        .records
        .iter()
        .map(|r| load(r).map(|l| remapped_coverage(&l, m)).map_err(|e| e.to_string()))
        .collect();
    partition_by_coverage(manifest, outcomes, threshold)
}
