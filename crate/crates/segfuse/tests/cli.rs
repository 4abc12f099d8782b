mod common;

use std::fs;
use std::path::Path;

use rand::rngs::StdRng;
use rand::SeedableRng;
use segfuse_core::dataset::DatasetManifest;
use segfuse_core::params::ParameterSet;
use segfuse_core::{Image, LabelMap, SoftPrediction, Tensor, TensorData};

use common::{random_labels, random_soft, read, segfuse, stderr, stdout, write};

const SUBCOMMANDS: [&str; 10] = [
    "eval",
    "class-weights",
    "loss-check",
    "augment",
    "fuse-tta",
    "aggregate",
    "gamma-search",
    "avg-weights",
    "remap",
    "filter",
];

fn p(path: &Path) -> String {
    path.to_string_lossy().into_owned()
}

fn save_png(path: &Path, lbl: &LabelMap) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    image::GrayImage::from_raw(lbl.width() as u32, lbl.height() as u32, lbl.data().to_vec())
        .unwrap()
        .save(path)
        .unwrap();
}

#[test]
fn help_and_usage_exit_codes() {
    assert_eq!(segfuse(&["--help"]).status.code(), Some(0));
    for sub in SUBCOMMANDS {
        let o = segfuse(&[sub, "--help"]);
        assert_eq!(o.status.code(), Some(0), "{sub} --help");
        assert!(stdout(&o).contains("Usage"), "{sub}");
    }
    let o = segfuse(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"));
    assert_eq!(segfuse(&["eval", "--gt", "a", "--pred", "b", "--bogus"]).status.code(), Some(1));
    assert_eq!(segfuse(&[]).status.code(), Some(1));
}

#[test]
fn eval_identical_dirs_is_perfect() {
    let d = tempfile::tempdir().unwrap();
    let mut rng = StdRng::seed_from_u64(1);
    for name in ["a/0001", "a/0002", "b/0001"] {
        let lbl = random_labels(&mut rng, 4, 6, 9, 0.1);
        save_png(&d.path().join("gt").join(format!("{name}.png")), &lbl);
        write(&d.path().join("pred").join(format!("{name}.segt")), &lbl.to_tensor());
    }
    let csv = d.path().join("out/iou.csv");
    let cm = d.path().join("cm.segt");
    let o = segfuse(&[
        "eval",
        "--gt",
        &p(&d.path().join("gt")),
        "--pred",
        &p(&d.path().join("pred")),
        "--csv",
        &p(&csv),
        "--per-video",
        "--confusion-out",
        &p(&cm),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("mIoU 1.000000"), "{out}");
    assert!(out.contains("video a mIoU 1.000000"));
    assert!(out.contains("frames 3"));
    let csv = fs::read_to_string(csv).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "class_id,iou");
    assert_eq!(lines[1], "0,1.000000");
    assert_eq!(*lines.last().unwrap(), "miou,1.000000");
    assert_eq!(read(&cm).dims(), &[4, 4]);
}

#[test]
fn eval_reports_absent_classes_and_soft_predictions() {
    let d = tempfile::tempdir().unwrap();
    let gt = LabelMap::new(1, 4, vec![0, 0, 1, 255]).unwrap();
    let pred = SoftPrediction::from_pixels(3, 1, 4, |_, c| match c {
        0 => vec![0.8, 0.1, 0.1],
        1 => vec![0.1, 0.8, 0.1],
        _ => vec![0.1, 0.8, 0.1],
    })
    .unwrap();
    write(&d.path().join("gt/x.segt"), &gt.to_tensor());
    write(&d.path().join("pred/x.segt"), &pred.to_tensor());
    let csv = d.path().join("iou.csv");
    let o = segfuse(&[
        "eval",
        "--gt",
        &p(&d.path().join("gt")),
        "--pred",
        &p(&d.path().join("pred")),
        "--num-classes",
        "3",
        "--csv",
        &p(&csv),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    // class 0: 1/2, class 1: 1/2, class 2 absent
    assert!(stdout(&o).contains("mIoU 0.500000"));
    assert!(stdout(&o).contains("    2  absent"));
    assert_eq!(
        fs::read_to_string(csv).unwrap(),
        "class_id,iou\n0,0.500000\n1,0.500000\n2,nan\nmiou,0.500000\n"
    );
}

#[test]
fn eval_pairing_and_io_errors() {
    let d = tempfile::tempdir().unwrap();
    let lbl = LabelMap::filled(2, 2, 0);
    write(&d.path().join("gt/a.segt"), &lbl.to_tensor());
    write(&d.path().join("pred/b.segt"), &lbl.to_tensor());
    let o = segfuse(&["eval", "--gt", &p(&d.path().join("gt")), "--pred", &p(&d.path().join("pred"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no match"));

    let o = segfuse(&["eval", "--gt", &p(&d.path().join("missing")), "--pred", &p(&d.path().join("pred"))]);
    assert_eq!(o.status.code(), Some(2));

    fs::write(d.path().join("pred/a.segt"), b"SEGX").unwrap();
    fs::remove_file(d.path().join("pred/b.segt")).unwrap();
    let o = segfuse(&["eval", "--gt", &p(&d.path().join("gt")), "--pred", &p(&d.path().join("pred"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bad magic at byte offset 3"), "{}", stderr(&o));
}

#[test]
fn threads_env_fallback() {
    let d = tempfile::tempdir().unwrap();
    let lbl = LabelMap::new(1, 3, vec![0, 1, 2]).unwrap();
    write(&d.path().join("gt/a.segt"), &lbl.to_tensor());
    write(&d.path().join("pred/a.segt"), &lbl.to_tensor());
    let o = std::process::Command::new(env!("CARGO_BIN_EXE_segfuse"))
        .args(["eval", "--gt", &p(&d.path().join("gt")), "--pred", &p(&d.path().join("pred"))])
        .env("SEGFUSE_THREADS", "3")
        .output()
        .unwrap();
    assert!(o.status.success());
    let bad = std::process::Command::new(env!("CARGO_BIN_EXE_segfuse"))
        .args(["eval", "--gt", "x", "--pred", "y"])
        .env("SEGFUSE_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn class_weights_outputs() {
    let d = tempfile::tempdir().unwrap();
    write(&d.path().join("l1.segt"), &LabelMap::new(1, 3, vec![0, 0, 1]).unwrap().to_tensor());
    save_png(&d.path().join("l2.png"), &LabelMap::new(1, 3, vec![0, 0, 255]).unwrap());
    fs::write(d.path().join("labels.txt"), "# label maps\nl1.segt\nl2.png\n").unwrap();
    let csv = d.path().join("w.csv");
    let out = d.path().join("w.segt");
    let o = segfuse(&[
        "class-weights",
        "--manifest",
        &p(&d.path().join("labels.txt")),
        "--num-classes",
        "3",
        "--csv",
        &p(&csv),
        "--out",
        &p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("mean_count 1.666667"), "{text}");
    assert!(text.contains("absent"));
    // counts [4, 1, 0]: sqrt(4 / (5/3)), sqrt(1 / (5/3)), 0
    assert_eq!(
        fs::read_to_string(&csv).unwrap(),
        "class_id,count,weight\n0,4,1.549193\n1,1,0.774597\n2,0,0.000000\n"
    );
    let t = read(&out);
    assert_eq!(t.dims(), &[3]);

    let manifest = "img1.png\tl1.segt\tstill\nimg2.png\tl2.png\tstill\n";
    fs::write(d.path().join("m.tsv"), manifest).unwrap();
    let o = segfuse(&["class-weights", "--manifest", &p(&d.path().join("m.tsv")), "--num-classes", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("    0  4  1.549193"));
}

#[test]
fn loss_check_prints_nine_decimals() {
    let d = tempfile::tempdir().unwrap();
    let logits = Tensor::new(vec![2, 1, 1], TensorData::F32(vec![0.2f32.ln(), 0.8f32.ln()])).unwrap();
    write(&d.path().join("logits.segt"), &logits);
    write(&d.path().join("gt.segt"), &LabelMap::filled(1, 1, 1).to_tensor());
    write(&d.path().join("w.segt"), &Tensor::new(vec![2], TensorData::F32(vec![1.0, 2.0])).unwrap());
    let o = segfuse(&[
        "loss-check",
        "--logits",
        &p(&d.path().join("logits.segt")),
        "--gt",
        &p(&d.path().join("gt.segt")),
        "--weights",
        &p(&d.path().join("w.segt")),
        "--loss",
        "weighted-ce",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let line = stdout(&o);
    assert!(line.starts_with("weighted-ce value 0.446287"), "{line}");
    let value = line.split_whitespace().nth(2).unwrap();
    assert_eq!(value.split('.').nth(1).unwrap().len(), 9);

    let o = segfuse(&[
        "loss-check",
        "--logits",
        &p(&d.path().join("logits.segt")),
        "--gt",
        &p(&d.path().join("gt.segt")),
        "--loss",
        "confusion-focal",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("confusion matrix"));
}

fn augment_fixture(dir: &Path) -> String {
    let mut rng = StdRng::seed_from_u64(5);
    let mut manifest = String::from("# segfuse-manifest v1\n");
    for i in 0..3 {
        let img = Image::from_fn(100 + 10 * i, 150, |r, c| [(r % 256) as u8, (c % 256) as u8, 77]);
        write(&dir.join(format!("img{i}.segt")), &img.to_tensor());
        save_png(&dir.join(format!("lbl{i}.png")), &random_labels(&mut rng, 3, 100 + 10 * i, 150, 0.1));
        manifest.push_str(&format!("img{i}.segt\tlbl{i}.png\tsynthetic\n"));
    }
    fs::write(dir.join("m.tsv"), manifest).unwrap();
    p(&dir.join("m.tsv"))
}

#[test]
fn augment_is_reproducible() {
    let d = tempfile::tempdir().unwrap();
    let manifest = augment_fixture(d.path());
    let run = |out: &str, threads: &str| {
        let o = segfuse(&[
            "augment",
            "--manifest",
            &manifest,
            "--seed",
            "9",
            "--out-dir",
            &p(&d.path().join(out)),
            "--crop-h",
            "64",
            "--crop-w",
            "96",
            "--dump-draws",
            "--threads",
            threads,
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        stdout(&o)
    };
    let a = run("a", "1");
    let b = run("b", "4");
    let audit = |s: &str| s.lines().filter(|l| l.starts_with("image ")).map(str::to_owned).collect::<Vec<_>>();
    assert_eq!(audit(&a), audit(&b));
    assert_eq!(audit(&a).len(), 6);
    assert_eq!(a.lines().filter(|l| l.contains(" draws ")).count(), 3);
    assert_eq!(a.lines().next().unwrap().split(',').count(), 15);
    for i in 0..3 {
        for kind in ["image", "label"] {
            let name = format!("{i:06}.{kind}.segt");
            let x = fs::read(d.path().join("a").join(&name)).unwrap();
            assert_eq!(x, fs::read(d.path().join("b").join(&name)).unwrap(), "{name}");
        }
        let lbl = LabelMap::from_tensor(read(&d.path().join("a").join(format!("{i:06}.label.segt")))).unwrap();
        assert_eq!((lbl.height(), lbl.width()), (64, 96));
    }
}

#[test]
fn fuse_tta_and_aggregate() {
    let d = tempfile::tempdir().unwrap();
    let mut rng = StdRng::seed_from_u64(8);
    let base = random_soft(&mut rng, 3, 6, 8).renormalized();
    write(&d.path().join("s1.segt"), &base.to_tensor());
    write(&d.path().join("s05.segt"), &random_soft(&mut rng, 3, 3, 4).to_tensor());
    let out = d.path().join("fused.segt");
    let o = segfuse(&[
        "fuse-tta",
        &format!("{}@1.0", p(&d.path().join("s1.segt"))),
        &format!("{}@0.5:flip", p(&d.path().join("s05.segt"))),
        "-o",
        &p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let fused = SoftPrediction::from_tensor(read(&out)).unwrap();
    assert_eq!((fused.num_classes(), fused.height(), fused.width()), (3, 6, 8));
    fused.check_normalized(1e-5).unwrap();

    let o = segfuse(&["fuse-tta", &format!("{}@0.5", p(&d.path().join("s05.segt"))), "-o", &p(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--base-h"));

    let other = random_soft(&mut rng, 3, 6, 8);
    write(&d.path().join("b.segt"), &other.to_tensor());
    let mixed = d.path().join("mixed.segt");
    let conf = d.path().join("conf.segt");
    for (gamma, want) in [("1.0", "s1.segt"), ("0", "b.segt")] {
        let o = segfuse(&[
            "aggregate",
            "--gamma",
            gamma,
            &p(&d.path().join("s1.segt")),
            &p(&d.path().join("b.segt")),
            "-o",
            &p(&mixed),
            "--confidence-out",
            &p(&conf),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert_eq!(fs::read(&mixed).unwrap(), fs::read(d.path().join(want)).unwrap());
    }
    assert_eq!(read(&conf).dims(), &[6, 8]);
    let o = segfuse(&["aggregate", "--gamma", "1.5", &p(&d.path().join("s1.segt")), &p(&d.path().join("b.segt")), "-o", &p(&mixed)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn gamma_search_curve() {
    let d = tempfile::tempdir().unwrap();
    let mut rng = StdRng::seed_from_u64(12);
    for name in ["f1", "f2"] {
        write(&d.path().join("ps").join(format!("{name}.segt")), &random_soft(&mut rng, 3, 5, 5).to_tensor());
        write(&d.path().join("pv").join(format!("{name}.segt")), &random_soft(&mut rng, 3, 5, 5).to_tensor());
        save_png(&d.path().join("gt").join(format!("{name}.png")), &random_labels(&mut rng, 3, 5, 5, 0.0));
    }
    let curve = d.path().join("curve.csv");
    let o = segfuse(&[
        "gamma-search",
        "--ps",
        &p(&d.path().join("ps")),
        "--pv",
        &p(&d.path().join("pv")),
        "--gt",
        &p(&d.path().join("gt")),
        "--step",
        "0.01",
        "--curve",
        &p(&curve),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&curve).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "gamma,miou");
    assert_eq!(lines.len(), 102);
    assert!(lines[57].starts_with("0.560000,"));
    assert!(stdout(&o).contains("grid_points 101"));

    let o = segfuse(&[
        "gamma-search",
        "--ps",
        &p(&d.path().join("ps")),
        "--pv",
        &p(&d.path().join("pv")),
        "--gt",
        &p(&d.path().join("gt")),
        "--step",
        "0.7",
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn avg_weights_round_trip() {
    let d = tempfile::tempdir().unwrap();
    let set = |v: [f32; 2]| {
        ParameterSet::new(vec![("w".into(), Tensor::new(vec![2], TensorData::F32(v.to_vec())).unwrap())]).unwrap()
    };
    fs::write(d.path().join("a.params"), set([0.0, 2.0]).encode()).unwrap();
    fs::write(d.path().join("b.params"), set([2.0, 4.0]).encode()).unwrap();
    let out = d.path().join("avg.params");
    let o = segfuse(&["avg-weights", &p(&d.path().join("a.params")), &p(&d.path().join("b.params")), "-o", &p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(ParameterSet::decode(&fs::read(&out).unwrap()).unwrap(), set([1.0, 3.0]));

    let other = ParameterSet::new(vec![("v".into(), Tensor::new(vec![2], TensorData::F32(vec![0.0, 0.0])).unwrap())]).unwrap();
    fs::write(d.path().join("c.params"), other.encode()).unwrap();
    let o = segfuse(&["avg-weights", &p(&d.path().join("a.params")), &p(&d.path().join("c.params")), "-o", &p(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("name mismatch"));
}

fn remap_fixture(dir: &Path) -> String {
    // ids: 0,1,2,3 survive the example table; 4 and 7 become 255
    let labels: [(&str, Vec<u8>); 3] = [
        ("dense", vec![0, 1, 2, 3, 5, 0, 1, 2, 3, 4]),
        ("sparse", vec![4, 4, 7, 7, 0, 1, 4, 4, 7, 7]),
        ("boundary", vec![0, 1, 2, 3, 5, 0, 1, 2, 4, 7]),
    ];
    let mut manifest = String::from("# segfuse-manifest v1\n# tags: still\n");
    for (name, data) in labels {
        save_png(&dir.join(format!("labels/{name}.png")), &LabelMap::new(2, 5, data).unwrap());
        manifest.push_str(&format!("images/{name}.jpg\tlabels/{name}.png\tstill\n"));
    }
    manifest.push_str("images/gone.jpg\tlabels/gone.png\tstill\n");
    fs::write(dir.join("m.tsv"), manifest).unwrap();
    p(&dir.join("m.tsv"))
}

fn example_table() -> String {
    p(&Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/example_remap.csv"))
}

#[test]
fn filter_splits_by_coverage() {
    let d = tempfile::tempdir().unwrap();
    let manifest = remap_fixture(d.path());
    let kept = d.path().join("kept.tsv");
    let dropped = d.path().join("dropped.tsv");
    let report = d.path().join("report.csv");
    let o = segfuse(&[
        "filter",
        "--manifest",
        &manifest,
        "--map",
        &example_table(),
        "--kept",
        &p(&kept),
        "--dropped",
        &p(&dropped),
        "--report",
        &p(&report),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("kept 2 dropped 1 errors 1"), "{}", stdout(&o));
    let kept = DatasetManifest::parse(&fs::read_to_string(&kept).unwrap()).unwrap();
    assert!(kept.records[0].label.ends_with("labels/dense.png"));
    assert!(Path::new(&kept.records[0].label).is_absolute());
    assert!(kept.records[1].label.ends_with("labels/boundary.png"));
    let dropped = DatasetManifest::parse(&fs::read_to_string(&dropped).unwrap()).unwrap();
    assert_eq!(dropped.len(), 1);
    let report = fs::read_to_string(&report).unwrap();
    let rows: Vec<&str> = report.lines().collect();
    assert_eq!(rows[0], "index,image,label,status,coverage,message");
    assert_eq!(rows[1], "0,images/dense.jpg,labels/dense.png,kept,0.900000,");
    assert_eq!(rows[2], "1,images/sparse.jpg,labels/sparse.png,dropped,0.200000,");
    assert_eq!(rows[3], "2,images/boundary.jpg,labels/boundary.png,kept,0.800000,");
    assert!(rows[4].starts_with("3,images/gone.jpg,labels/gone.png,error,,"));
}

#[test]
fn remap_writes_labels_manifest_and_report() {
    let d = tempfile::tempdir().unwrap();
    let full = remap_fixture(d.path());
    let out = d.path().join("out");
    let o = segfuse(&["remap", "--manifest", &full, "--map", &example_table(), "--out-dir", &p(&out)]);
    assert_eq!(o.status.code(), Some(2), "missing label file");

    fs::write(d.path().join("one.tsv"), "images/dense.jpg\tlabels/dense.png\tstill\n").unwrap();
    let manifest = p(&d.path().join("one.tsv"));
    let o = segfuse(&["remap", "--manifest", &manifest, "--map", &example_table(), "--out-dir", &p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = DatasetManifest::parse(&fs::read_to_string(out.join("manifest.tsv")).unwrap()).unwrap();
    let lbl = LabelMap::from_tensor(read(Path::new(&m.records[0].label))).unwrap();
    assert_eq!(lbl.data(), &[0, 1, 1, 2, 3, 0, 1, 1, 2, 255]);
    assert_eq!(
        fs::read_to_string(out.join("coverage.csv")).unwrap(),
        "index,image,label,coverage\n0,images/dense.jpg,labels/dense.png,0.900000\n"
    );
}
