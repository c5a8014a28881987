#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use calibnet::io::{DatasetManifest, ManifestEntry, Raster};
use calibnet::train::synthetic_sample;

pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_calibnet"));
    c.env_remove("CALIB_SEED");
    c
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn calibnet")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Writes one synthetic sample as `{stem}_rgb.ppm`, `{stem}_depth.pgm`,
/// `{stem}_inst.pgm` and `{stem}_obj.pgm`.
pub fn write_sample(dir: &Path, stem: &str, h: usize, w: usize, instances: usize, seed: u64) -> ManifestEntry {
    let s = synthetic_sample::<f64>(h, w, instances, seed).unwrap();
    let rgb = Raster::from_unit_tensor(&s.rgb).unwrap();
    let depth = Raster::from_unit_tensor(&s.depth).unwrap();
    let index = Raster::from_fn_gray(w, h, |y, x| {
        s.instances.iter().position(|m| m.get(&[y, x]) > 0.5).map_or(0, |k| k as u8 + 1)
    });
    let object = Raster::from_fn_gray(w, h, |y, x| u8::from(index.at(y, x, 0) > 0) * 255);
    let name = |suffix: &str| PathBuf::from(format!("{stem}_{suffix}"));
    rgb.write(dir.join(name("rgb.ppm"))).unwrap();
    depth.write(dir.join(name("depth.pgm"))).unwrap();
    index.write(dir.join(name("inst.pgm"))).unwrap();
    object.write(dir.join(name("obj.pgm"))).unwrap();
    ManifestEntry {
        name: stem.to_string(),
        rgb: Some(name("rgb.ppm")),
        depth: Some(name("depth.pgm")),
        object_mask: Some(name("obj.pgm")),
        instances: Some(name("inst.pgm")),
    }
}

/// A small dataset of `n` synthetic 32×48 samples plus a manifest, returning the manifest path.
pub fn write_dataset(dir: &Path, n: usize) -> PathBuf {
    let samples = (0..n).map(|i| write_sample(dir, &format!("s{i}"), 32, 48, 1 + i % 3, i as u64)).collect();
    let m = DatasetManifest { depth_near_is_bright: true, samples, root: dir.to_path_buf() };
    let path = dir.join("manifest.json");
    m.save(&path).unwrap();
    path
}

/// Every file under `dir` with its bytes, sorted by relative path.
pub fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
