#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use rand::rngs::StdRng;
use rand::Rng;
use segfuse_core::{LabelMap, SoftPrediction, Tensor};

pub fn segfuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_segfuse"))
        .args(args)
        .env_remove("SEGFUSE_THREADS")
        .output()
        .expect("spawn segfuse")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn write(path: &Path, t: &Tensor) {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).unwrap();
    }
    std::fs::write(path, t.encode()).unwrap();
}

pub fn read(path: &Path) -> Tensor {
    Tensor::decode(&std::fs::read(path).unwrap()).unwrap()
}

/// Random strictly positive distribution per pixel.
pub fn random_soft(rng: &mut StdRng, k: usize, h: usize, w: usize) -> SoftPrediction {
    SoftPrediction::from_pixels(k, h, w, |_, _| {
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
        let s: f64 = raw.iter().sum();
        raw.iter().map(|v| (v / s) as f32).collect()
    })
    .unwrap()
}

/// Labels in `0..k`, with roughly `ignore` of them set to 255.
pub fn random_labels(rng: &mut StdRng, k: u8, h: usize, w: usize, ignore: f64) -> LabelMap {
    LabelMap::from_fn(h, w, |_, _| {
        if rng.random_bool(ignore) {
            255
        } else {
            rng.random_range(0..k)
        }
    })
}
