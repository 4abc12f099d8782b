//! Matching files across directories by relative path stem.
//!
//! `gt/seq1/0001.png` pairs with `pred/seq1/0001.segt`. A stem present in one
//! directory but not the other is an error, as is a directory holding two
//! files with the same stem.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use walkdir::WalkDir;

use crate::error::{usage, CliError, Result};

const EXTENSIONS: [&str; 4] = ["segt", "png", "jpg", "jpeg"];

/// Data files under `dir`, keyed by `/`-joined relative path without extension.
pub fn collect_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in WalkDir::new(dir).follow_links(true) {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(dir).to_owned();
            CliError::io(&path, e.into())
        })?;
        let path = entry.path();
        if !entry.file_type().is_file() {
            continue;
        }
        let Some(ext) = path.extension().and_then(|e| e.to_str()) else {
            continue;
        };
        if !EXTENSIONS.iter().any(|x| ext.eq_ignore_ascii_case(x)) {
            continue;
        }
        let rel = path.strip_prefix(dir).expect("walked under dir").with_extension("");
        let key = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        if let Some(prev) = out.insert(key.clone(), path.to_owned()) {
            return Err(usage(format!(
                "{} and {} share the stem `{key}`",
                prev.display(),
                path.display()
            )));
        }
    }
    Ok(out)
}

/// Files of every directory grouped by shared stem, in sorted stem order.
pub fn pair_dirs(dirs: &[&Path]) -> Result<Vec<(String, Vec<PathBuf>)>> {
    let listings = dirs.iter().map(|d| collect_files(d)).collect::<Result<Vec<_>>>()?;
    let Some(first) = listings.first() else {
        return Ok(Vec::new());
    };
    for (dir, listing) in dirs.iter().zip(&listings).skip(1) {
        if let Some(stem) = first.keys().find(|k| !listing.contains_key(*k)) {
            return Err(usage(format!("`{stem}` from {} has no match in {}", dirs[0].display(), dir.display())));
        }
        if let Some(stem) = listing.keys().find(|k| !first.contains_key(*k)) {
            return Err(usage(format!("`{stem}` from {} has no match in {}", dir.display(), dirs[0].display())));
        }
    }
    if first.is_empty() {
        return Err(usage(format!("no .segt or image files under {}", dirs[0].display())));
    }
    Ok(first
        .keys()
        .map(|k| (k.clone(), listings.iter().map(|l| l[k].clone()).collect()))
        .collect())
}
