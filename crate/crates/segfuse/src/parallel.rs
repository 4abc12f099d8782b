//! Frame-parallel evaluation and gamma search.
//!
//! Frames are mapped on a rayon pool and their confusion matrices are summed.
//! Counts are integers, so the totals do not depend on the thread count or on
//! the order in which partial sums are combined.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use rayon::ThreadPool;
use segfuse_core::fusion::{frame_confusions, gamma_grid, select_gamma, GammaSearch};
use segfuse_core::metrics::ConfusionMatrix;
use segfuse_core::tensor::MAX_CLASSES;
use segfuse_core::{LabelMap, IGNORE_LABEL};

use crate::error::{usage, CliError, Result};
use crate::io::{read_label_map, read_prediction_labels, read_soft};
use crate::pairing::pair_dirs;

/// `threads = None` or `Some(0)` uses every available core.
pub fn thread_pool(threads: Option<usize>) -> Result<ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| usage(format!("cannot start thread pool: {e}")))
}

fn load_pair(gt: &Path, pred: &Path) -> Result<(LabelMap, LabelMap)> {
    let g = read_label_map(gt)?;
    let p = read_prediction_labels(pred)?;
    if !g.same_shape(&p) {
        return Err(usage(format!(
            "{} is {}x{} but {} is {}x{}",
            gt.display(),
            g.height(),
            g.width(),
            pred.display(),
            p.height(),
            p.width()
        )));
    }
    Ok((g, p))
}

fn max_class(maps: [&LabelMap; 2]) -> Option<u8> {
    maps.iter().flat_map(|m| m.data()).copied().filter(|&v| v != IGNORE_LABEL).max()
}

fn merge_maps(
    mut a: BTreeMap<String, ConfusionMatrix>,
    b: BTreeMap<String, ConfusionMatrix>,
) -> Result<BTreeMap<String, ConfusionMatrix>> {
    for (k, cm) in b {
        match a.get_mut(&k) {
            Some(acc) => acc.merge_from(&cm)?,
            None => {
                a.insert(k, cm);
            }
        }
    }
    Ok(a)
}

pub struct EvalOutcome {
    pub num_classes: usize,
    /// Keyed by group name; a single `""` group unless grouping by video.
    pub groups: BTreeMap<String, ConfusionMatrix>,
    pub frames: usize,
}

impl EvalOutcome {
    pub fn total(&self) -> Result<ConfusionMatrix> {
        let mut total = ConfusionMatrix::new(self.num_classes);
        for cm in self.groups.values() {
            total.merge_from(cm)?;
        }
        Ok(total)
    }
}

/// Confusion matrices for every `(gt, pred)` pair of files under two
/// directories. Without `num_classes` the class count is one more than the
/// largest id seen in either directory.
pub fn evaluate_dirs(
    gt_dir: &Path,
    pred_dir: &Path,
    num_classes: Option<usize>,
    per_video: bool,
    pool: &ThreadPool,
) -> Result<EvalOutcome> {
    let pairs = pair_dirs(&[gt_dir, pred_dir])?;
    pool.install(|| {
        let k = match num_classes {
            Some(k) if (1..=MAX_CLASSES).contains(&k) => k,
            Some(k) => return Err(usage(format!("--num-classes {k} outside 1..={MAX_CLASSES}"))),
            None => {
                let maxes = pairs
                    .par_iter()
                    .map(|(_, paths)| load_pair(&paths[0], &paths[1]).map(|(g, p)| max_class([&g, &p])))
                    .collect::<Result<Vec<_>>>()?;
                maxes.into_iter().flatten().max().map_or(1, |m| m as usize + 1)
            }
        };
        let groups = pairs
            .par_iter()
            .map(|(key, paths)| {
                let (g, p) = load_pair(&paths[0], &paths[1])?;
                let cm = ConfusionMatrix::new(k)
                    .accumulated(&g, &p)
                    .map_err(|e| CliError::invalid(&paths[0], e))?;
                let group = if per_video {
                    key.split('/').next().unwrap_or_default().to_owned()
                } else {
                    String::new()
                };
                Ok(BTreeMap::from([(group, cm)]))
            })
            .try_reduce(BTreeMap::new, merge_maps)?;
        Ok(EvalOutcome {
            num_classes: k,
            groups,
            frames: pairs.len(),
        })
    })
}

fn merge_lists(mut a: Option<Vec<ConfusionMatrix>>, b: Option<Vec<ConfusionMatrix>>) -> Result<Option<Vec<ConfusionMatrix>>> {
    match (a.as_mut(), b) {
        (Some(acc), Some(b)) => {
            for (x, y) in acc.iter_mut().zip(&b) {
                x.merge_from(y)?;
            }
            Ok(a)
        }
        (None, b) => Ok(b),
        (Some(_), None) => Ok(a),
    }
}

/// Gamma search over frames stored as matching files in three directories.
pub fn gamma_search_dirs(ps_dir: &Path, pv_dir: &Path, gt_dir: &Path, step: f64, pool: &ThreadPool) -> Result<GammaSearch> {
    let grid = gamma_grid(step)?;
    let triples: Vec<(String, Vec<PathBuf>)> = pair_dirs(&[ps_dir, pv_dir, gt_dir])?;
    let totals = pool.install(|| {
        triples
            .par_iter()
            .map(|(_, paths)| {
                let ps = read_soft(&paths[0])?;
                let pv = read_soft(&paths[1])?;
                let gt = read_label_map(&paths[2])?;
                let cms = frame_confusions(&ps, &pv, &gt, &grid).map_err(|e| CliError::invalid(&paths[2], e))?;
                Ok(Some(cms))
            })
            .try_reduce(|| None, merge_lists)
    })?;
    let totals = totals.ok_or(segfuse_core::Error::EmptyDataset)?;
    Ok(select_gamma(&grid, &totals)?)
}
