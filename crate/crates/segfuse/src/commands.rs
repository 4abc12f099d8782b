use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use segfuse_core::augment::{augment_traced, AugRng, AugmentConfig, AugmentTrace, UnitSource, DRAWS_PER_IMAGE};
use segfuse_core::class_weights::{compute_weights, PixelCounts};
use segfuse_core::dataset::{
    partition_by_coverage, remap_labels, DatasetManifest, FilterOutcome, LabelRemap, ManifestRecord,
};
use segfuse_core::fusion::{aggregate, fuse_tta, score_threshold_report, AggregationSpec, TtaInput};
use segfuse_core::losses::{gradient_check, LossBatch, LossKind};
use segfuse_core::metrics::coverage;
use segfuse_core::params::{average_parameters, ParameterSet};
use segfuse_core::{Error, IGNORE_LABEL};

use crate::cli::{
    AggregateArgs, AugmentArgs, AvgWeightsArgs, ClassWeightsArgs, Command, EvalArgs, FilterArgs, FuseTtaArgs,
    GammaSearchArgs, LossCheckArgs, RemapArgs,
};
use crate::error::{usage, CliError, Result};
use crate::io;
use crate::parallel::{evaluate_dirs, gamma_search_dirs, thread_pool};

pub fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Eval(a) => eval(a),
        Command::ClassWeights(a) => class_weights(a),
        Command::LossCheck(a) => loss_check(a),
        Command::Augment(a) => augment(a),
        Command::FuseTta(a) => fuse(a),
        Command::Aggregate(a) => aggregate_cmd(a),
        Command::GammaSearch(a) => gamma_search(a),
        Command::AvgWeights(a) => avg_weights(a),
        Command::Remap(a) => remap(a),
        Command::Filter(a) => filter(a),
    }
}

fn fmt_iou(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_owned(), |v| format!("{v:.6}"))
}

fn eval(a: EvalArgs) -> Result<()> {
    let pool = thread_pool(a.threads.threads)?;
    let outcome = evaluate_dirs(&a.gt, &a.pred, a.num_classes, a.per_video, &pool)?;
    let total = outcome.total()?;
    let report = total.miou()?;

    println!("class  iou");
    for (c, iou) in report.per_class_iou.iter().enumerate() {
        let shown = iou.map_or_else(|| "absent".to_owned(), |v| format!("{v:.6}"));
        println!("{c:>5}  {shown}");
    }
    if a.per_video {
        for (video, cm) in &outcome.groups {
            match cm.miou() {
                Ok(r) => println!("video {video} mIoU {:.6}", r.mean_iou),
                Err(Error::EmptyMatrix) => println!("video {video} mIoU absent"),
                Err(e) => return Err(e.into()),
            }
        }
    }
    println!("frames {}", outcome.frames);
    println!("mIoU {:.6}", report.mean_iou);

    if let Some(path) = &a.csv {
        let mut s = String::from("class_id,iou\n");
        for (c, iou) in report.per_class_iou.iter().enumerate() {
            let _ = writeln!(s, "{c},{}", fmt_iou(*iou));
        }
        let _ = writeln!(s, "miou,{:.6}", report.mean_iou);
        io::write_text(path, &s)?;
    }
    if let Some(path) = &a.confusion_out {
        if total.counts().iter().any(|&c| c > 1 << 24) {
            eprintln!("warning: confusion counts above 2^24 are rounded in the f32 output");
        }
        io::write_tensor(path, &io::confusion_to_tensor(&total))?;
    }
    Ok(())
}

/// Label paths from either a plain path list or a tab-separated manifest.
fn label_paths(manifest: &Path) -> Result<Vec<PathBuf>> {
    let text = io::read_text(manifest)?;
    if text.lines().any(|l| l.contains('\t')) {
        let m = DatasetManifest::parse(&text).map_err(|e| CliError::invalid(manifest, e))?;
        return Ok(m.records.iter().map(|r| io::resolve(manifest, &r.label)).collect());
    }
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| io::resolve(manifest, l))
        .collect())
}

fn class_weights(a: ClassWeightsArgs) -> Result<()> {
    if a.num_classes == 0 || a.num_classes > segfuse_core::tensor::MAX_CLASSES {
        return Err(usage(format!("--num-classes {} outside 1..=255", a.num_classes)));
    }
    let mut counts = PixelCounts::zeros(a.num_classes);
    for path in label_paths(&a.manifest)? {
        let lbl = io::read_label_map(&path)?;
        counts.add(&lbl).map_err(|e| CliError::invalid(&path, e))?;
    }
    let weights = compute_weights(&counts)?;

    println!("mean_count {:.6}", counts.mean());
    println!("class  count  weight");
    for (c, (&n, &w)) in counts.counts().iter().zip(weights.weights()).enumerate() {
        let flag = if n == 0 { "  absent" } else { "" };
        println!("{c:>5}  {n}  {w:.6}{flag}");
    }
    let absent: Vec<String> = counts.absent_classes().map(|c| c.to_string()).collect();
    if !absent.is_empty() {
        eprintln!("warning: classes with no pixels get weight 0: {}", absent.join(","));
    }

    if let Some(path) = &a.csv {
        let mut s = String::from("class_id,count,weight\n");
        for (c, (&n, &w)) in counts.counts().iter().zip(weights.weights()).enumerate() {
            let _ = writeln!(s, "{c},{n},{w:.6}");
        }
        io::write_text(path, &s)?;
    }
    if let Some(path) = &a.out {
        io::write_tensor(path, &weights.to_tensor())?;
    }
    Ok(())
}

fn loss_check(a: LossCheckArgs) -> Result<()> {
    let logits = io::read_logits(&a.logits)?;
    let gt = io::read_label_map(&a.gt)?;
    let mut batch = LossBatch::new(logits, gt).map_err(|e| CliError::invalid(&a.gt, e))?;
    if let Some(p) = &a.weights {
        batch = batch.with_weights(io::read_weights(p)?).map_err(|e| CliError::invalid(p, e))?;
    }
    if let Some(p) = &a.confusion {
        batch = batch.with_confusion(io::read_confusion(p)?).map_err(|e| CliError::invalid(p, e))?;
    }
    let kinds: Vec<LossKind> = if a.loss == "all" {
        let available: Vec<LossKind> = LossKind::ALL
            .into_iter()
            .filter(|k| match k {
                LossKind::ConfusionFocal => batch.confusion().is_some(),
                _ => batch.weights().is_some(),
            })
            .collect();
        if available.is_empty() {
            return Err(usage("--loss all needs --weights and/or --confusion"));
        }
        available
    } else {
        vec![a.loss.parse::<LossKind>()?]
    };
    if !(a.eps > 0.0 && a.eps.is_finite()) {
        return Err(usage(format!("--eps {} must be positive", a.eps)));
    }

    for kind in kinds {
        let result = kind.evaluate(&batch)?;
        let check = gradient_check(kind, &batch, a.eps)?;
        println!(
            "{} value {:.9} max_rel_grad_error {:.9} checked {} skipped_near_tie {}",
            kind.name(),
            result.value,
            check.max_rel_error,
            check.checked,
            check.skipped_near_tie
        );
    }
    Ok(())
}

fn trace_line(t: &AugmentTrace) -> String {
    let opt = |v: Option<f64>| v.map_or_else(|| "-".to_owned(), |v| format!("{v:.6}"));
    format!(
        "image {} alpha {:.6} beta1 {:.6} beta2 {:.6} resized {}x{} crop {},{} flip {} brightness {} contrast {} saturation {} hue {}",
        t.image_index,
        t.scale.alpha,
        t.scale.beta1,
        t.scale.beta2,
        t.resized.0,
        t.resized.1,
        t.crop_offset.0,
        t.crop_offset.1,
        t.flipped,
        opt(t.distortion.brightness),
        opt(t.distortion.contrast),
        opt(t.distortion.saturation),
        opt(t.distortion.hue),
    )
}

fn augment(a: AugmentArgs) -> Result<()> {
    if a.crop_h == 0 || a.crop_w == 0 {
        return Err(usage("crop size must be positive"));
    }
    let manifest = io::read_manifest(&a.manifest)?;
    let mut cfg = AugmentConfig {
        crop_h: a.crop_h,
        crop_w: a.crop_w,
        seed: a.seed,
        ..AugmentConfig::default()
    };
    if a.no_distortion {
        cfg = cfg.without_distortion();
    }
    std::fs::create_dir_all(&a.out_dir).map_err(|e| CliError::io(&a.out_dir, e))?;
    let pool = thread_pool(a.threads.threads)?;
    let traces = pool.install(|| {
        manifest
            .records
            .par_iter()
            .enumerate()
            .map(|(i, r)| {
                let img_path = io::resolve(&a.manifest, &r.image);
                let lbl_path = io::resolve(&a.manifest, &r.label);
                let img = io::read_image(&img_path)?;
                let lbl = io::read_label_map(&lbl_path)?;
                if (img.height(), img.width()) != (lbl.height(), lbl.width()) {
                    return Err(usage(format!(
                        "{} is {}x{} but {} is {}x{}",
                        img_path.display(),
                        img.height(),
                        img.width(),
                        lbl_path.display(),
                        lbl.height(),
                        lbl.width()
                    )));
                }
                let (img, lbl, trace) = augment_traced(&img, &lbl, &cfg, i as u64);
                io::write_tensor(&a.out_dir.join(format!("{i:06}.image.segt")), &img.to_tensor())?;
                io::write_tensor(&a.out_dir.join(format!("{i:06}.label.segt")), &lbl.to_tensor())?;
                Ok(trace)
            })
            .collect::<Result<Vec<_>>>()
    })?;

    if a.dump_draws {
        for t in &traces {
            let mut rng = AugRng::new(a.seed, t.image_index);
            let draws: Vec<String> = (0..DRAWS_PER_IMAGE).map(|_| format!("{:.9}", rng.next_unit())).collect();
            println!("image {} draws {}", t.image_index, draws.join(","));
            println!("{}", trace_line(t));
        }
    }
    println!("augmented {} images into {}", traces.len(), a.out_dir.display());
    Ok(())
}

fn parse_view(spec: &str) -> Result<(PathBuf, f64, bool)> {
    let bad = || usage(format!("`{spec}` is not PATH@SCALE or PATH@SCALE:flip"));
    let (path, view) = spec.rsplit_once('@').ok_or_else(bad)?;
    let (scale, flipped) = match view.split_once(':') {
        Some((s, "flip")) => (s, true),
        Some(_) => return Err(bad()),
        None => (view, false),
    };
    let scale: f64 = scale.parse().map_err(|_| bad())?;
    if path.is_empty() || !(scale.is_finite() && scale > 0.0) {
        return Err(bad());
    }
    Ok((PathBuf::from(path), scale, flipped))
}

fn fuse(a: FuseTtaArgs) -> Result<()> {
    let mut inputs = Vec::with_capacity(a.inputs.len());
    for spec in &a.inputs {
        let (path, scale, flipped) = parse_view(spec)?;
        inputs.push(TtaInput {
            pred: io::read_soft(&path)?,
            scale,
            flipped,
        });
    }
    let (h, w) = match (a.base_h, a.base_w) {
        (Some(h), Some(w)) if h > 0 && w > 0 => (h, w),
        (None, None) => inputs
            .iter()
            .find(|i| i.scale == 1.0)
            .map(|i| (i.pred.height(), i.pred.width()))
            .ok_or_else(|| usage("no scale-1 input; pass --base-h and --base-w"))?,
        _ => return Err(usage("--base-h and --base-w must be given together and be positive")),
    };
    let fused = fuse_tta(&inputs, h, w)?;
    io::write_tensor(&a.output, &fused.to_tensor())?;
    println!("fused {} views into {}x{}x{}", inputs.len(), fused.num_classes(), h, w);
    Ok(())
}

fn aggregate_cmd(a: AggregateArgs) -> Result<()> {
    let spec = AggregationSpec::new(a.gamma)?;
    let ps = io::read_soft(&a.first)?;
    let pv = io::read_soft(&a.second)?;
    let mixed = aggregate(&ps, &pv, spec)?;
    io::write_tensor(&a.output, &mixed.to_tensor())?;
    if let Some(path) = &a.confidence_out {
        io::write_tensor(path, &score_threshold_report(&mixed).to_tensor())?;
    }
    println!("gamma {:.6}", a.gamma);
    Ok(())
}

fn gamma_search(a: GammaSearchArgs) -> Result<()> {
    let pool = thread_pool(a.threads.threads)?;
    let result = gamma_search_dirs(&a.ps, &a.pv, &a.gt, a.step, &pool)?;
    println!("grid_points {}", result.curve.len());
    println!("gamma {:.6}", result.gamma);
    println!("mIoU {:.6}", result.miou);
    if let Some(path) = &a.curve {
        let mut s = String::from("gamma,miou\n");
        for (g, m) in &result.curve {
            let _ = writeln!(s, "{g:.6},{m:.6}");
        }
        io::write_text(path, &s)?;
    }
    Ok(())
}

fn avg_weights(a: AvgWeightsArgs) -> Result<()> {
    let sets = a.inputs.iter().map(|p| io::read_params(p)).collect::<Result<Vec<ParameterSet>>>()?;
    let avg = average_parameters(&sets)?;
    io::write_bytes(&a.output, &avg.encode())?;
    let values: usize = avg.entries().iter().map(|(_, t)| t.data().len()).sum();
    println!("averaged {} checkpoints: {} tensors, {} values", sets.len(), avg.len(), values);
    Ok(())
}

fn absolute_record(manifest: &Path, r: &ManifestRecord) -> Result<ManifestRecord> {
    let abs = |listed: &str| -> Result<String> {
        Ok(io::absolute(&io::resolve(manifest, listed))?.to_string_lossy().into_owned())
    };
    Ok(ManifestRecord::new(abs(&r.image)?, abs(&r.label)?, r.tag.clone()))
}

fn remap(a: RemapArgs) -> Result<()> {
    let manifest = io::read_manifest(&a.manifest)?;
    let table = io::read_remap(&a.map)?;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| CliError::io(&a.out_dir, e))?;
    let out_dir = io::absolute(&a.out_dir)?;
    let pool = thread_pool(a.threads.threads)?;
    let written = pool.install(|| {
        manifest
            .records
            .par_iter()
            .enumerate()
            .map(|(i, r)| {
                let src = io::resolve(&a.manifest, &r.label);
                let lbl = remap_labels(&io::read_label_map(&src)?, &table);
                let stem = src.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                let dst = out_dir.join(format!("{i:06}_{stem}.segt"));
                io::write_tensor(&dst, &lbl.to_tensor())?;
                let mut rec = absolute_record(&a.manifest, r)?;
                rec.label = dst.to_string_lossy().into_owned();
                Ok((rec, coverage(&lbl)))
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let new_manifest = manifest.with_records(written.iter().map(|(r, _)| r.clone()).collect());
    let manifest_out = a.manifest_out.unwrap_or_else(|| out_dir.join("manifest.tsv"));
    io::write_text(&manifest_out, &new_manifest.format())?;
    let mut s = String::from("index,image,label,coverage\n");
    for (i, (orig, (_, cov))) in manifest.records.iter().zip(&written).enumerate() {
        let _ = writeln!(s, "{i},{},{},{cov:.6}", orig.image, orig.label);
    }
    io::write_text(&a.report.unwrap_or_else(|| out_dir.join("coverage.csv")), &s)?;
    println!("remapped {} labels into {}", written.len(), out_dir.display());
    Ok(())
}

fn filter_report(manifest: &DatasetManifest, out: &FilterOutcome) -> String {
    let mut rows: Vec<(usize, String)> = Vec::with_capacity(manifest.len());
    for (status, part) in [("kept", &out.kept), ("dropped", &out.dropped)] {
        for s in part {
            rows.push((
                s.index,
                format!("{},{},{},{status},{:.6},", s.index, s.record.image, s.record.label, s.coverage),
            ));
        }
    }
    for f in &out.errors {
        let msg = f.message.replace(['\n', ','], " ");
        rows.push((f.index, format!("{},{},{},error,,{msg}", f.index, f.record.image, f.record.label)));
    }
    rows.sort_by_key(|(i, _)| *i);
    let mut s = String::from("index,image,label,status,coverage,message\n");
    for (_, row) in rows {
        s.push_str(&row);
        s.push('\n');
    }
    s
}

fn filter(a: FilterArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&a.threshold) {
        return Err(usage(format!("--threshold {} outside [0, 1]", a.threshold)));
    }
    let manifest = io::read_manifest(&a.manifest)?;
    let table = match &a.map {
        Some(p) => io::read_remap(p)?,
        None => LabelRemap::identity_on(0..IGNORE_LABEL),
    };
    let pool = thread_pool(a.threads.threads)?;
    let outcomes = pool.install(|| {
        manifest
            .records
            .par_iter()
            .map(|r| {
                io::read_label_map(&io::resolve(&a.manifest, &r.label))
                    .map(|l| coverage(&remap_labels(&l, &table)))
                    .map_err(|e| e.to_string())
            })
            .collect::<Vec<_>>()
    });
    let out = partition_by_coverage(&manifest, outcomes, a.threshold)?;

    let absolute = |part: Vec<&ManifestRecord>| -> Result<DatasetManifest> {
        let records = part.into_iter().map(|r| absolute_record(&a.manifest, r)).collect::<Result<_>>()?;
        Ok(manifest.with_records(records))
    };
    let kept = absolute(out.kept.iter().map(|s| &s.record).collect())?;
    let dropped = absolute(out.dropped.iter().map(|s| &s.record).collect())?;
    io::write_text(&a.kept, &kept.format())?;
    io::write_text(&a.dropped, &dropped.format())?;
    if let Some(path) = &a.report {
        io::write_text(path, &filter_report(&manifest, &out))?;
    }
    for f in &out.errors {
        eprintln!("error: record {}: {}", f.index, f.message);
    }
    println!("kept {} dropped {} errors {}", out.kept.len(), out.dropped.len(), out.errors.len());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn view_specs() {
        assert_eq!(parse_view("a/b.segt@1.5").unwrap(), (PathBuf::from("a/b.segt"), 1.5, false));
        assert_eq!(parse_view("x@y.segt@0.5:flip").unwrap(), (PathBuf::from("x@y.segt"), 0.5, true));
        for bad in ["a.segt", "a.segt@", "a.segt@0", "a.segt@1:mirror", "@1", "a.segt@-1"] {
            assert!(parse_view(bad).is_err(), "{bad}");
        }
    }
}
