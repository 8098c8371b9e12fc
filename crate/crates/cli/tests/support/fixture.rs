#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cbam_pad::{Label, Manifest, Rng, SampleRecord};
use image::{Rgb, RgbImage};
use serde_json::{json, Value};
use tempfile::TempDir;

pub const SIZE: u32 = 16;

/// A small on-disk corpus: smooth gratings as bonafide, pixel noise as
/// attacks, laid out as `<root>/<label>/<pai>/<subject>/<n>.png`.
pub struct Fixture {
    pub dir: TempDir,
    pub root: PathBuf,
    pub live: Vec<SampleRecord>,
    pub spoof: Vec<SampleRecord>,
}

fn grating(rng: &mut Rng) -> RgbImage {
    let phase = rng.uniform() * std::f64::consts::TAU;
    let fx = 1.0 + rng.below(2) as f64;
    let fy = rng.below(2) as f64;
    RgbImage::from_fn(SIZE, SIZE, |x, y| {
        let t = (x as f64 * fx + y as f64 * fy) / SIZE as f64 * std::f64::consts::TAU + phase;
        let px = |mean: f64| (255.0 * (mean + 0.1 * t.sin())).round() as u8;
        Rgb([px(0.3), px(0.5), px(0.7)])
    })
}

fn noise(rng: &mut Rng) -> RgbImage {
    RgbImage::from_fn(SIZE, SIZE, |_, _| Rgb([0, 0, 0].map(|_: u8| rng.below(256) as u8)))
}

impl Fixture {
    pub fn new(live_subjects: usize, spoof_subjects: usize, per_subject: usize) -> Fixture {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("data");
        let mut rng = Rng::new(2024);
        let mut live = Vec::new();
        let mut spoof = Vec::new();
        for s in 0..live_subjects {
            let subject = format!("s{s:02}");
            for i in 0..per_subject {
                let path = root.join("live").join("none").join(&subject).join(format!("{i}.png"));
                fs::create_dir_all(path.parent().unwrap()).unwrap();
                grating(&mut rng).save(&path).unwrap();
                live.push(SampleRecord::live(path, &subject));
            }
        }
        for s in 0..spoof_subjects {
            let subject = format!("a{s:02}");
            let pai = if s % 2 == 0 { "print" } else { "replay" };
            for i in 0..per_subject {
                let path = root.join("spoof").join(pai).join(&subject).join(format!("{i}.png"));
                fs::create_dir_all(path.parent().unwrap()).unwrap();
                noise(&mut rng).save(&path).unwrap();
                spoof.push(SampleRecord::spoof(path, pai, &subject));
            }
        }
        Fixture { dir, root, live, spoof }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn manifest(&self, name: &str, records: Vec<SampleRecord>) -> PathBuf {
        let path = self.path(name);
        Manifest::new(records).unwrap().save(&path).unwrap();
        path
    }

    pub fn live_of(&self, subjects: &[&str]) -> Vec<SampleRecord> {
        self.live.iter().filter(|r| subjects.contains(&r.subject_id.as_str())).cloned().collect()
    }

    /// A file with an image extension that does not decode.
    pub fn broken_image(&self) -> SampleRecord {
        let path = self.root.join("live").join("none").join("zz").join("broken.png");
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(&path, b"not a png").unwrap();
        SampleRecord::live(path, "zz")
    }

    /// Writes `name` with the tiny base configuration merged with `patch`.
    pub fn config(&self, name: &str, patch: Value) -> PathBuf {
        let mut base = json!({
            "seed": 5,
            "model": {
                "input_size": SIZE,
                "depth": 2,
                "base_channels": 4,
                "attention_ratio": 2,
                "dropout_rate": 0.0
            },
            "trainer": { "epochs": 3, "batch_size": 4 },
            "calibration": { "target_bpcer": 10.0, "validation_fraction": 0.25 },
            "paths": { "out_dir": self.path("out") }
        });
        merge(&mut base, patch);
        let path = self.path(name);
        fs::write(&path, serde_json::to_string_pretty(&base).unwrap()).unwrap();
        path
    }
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

pub fn run<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cbam-pad")).args(args).output().unwrap()
}

/// Runs and asserts the exit code, showing stderr on mismatch.
pub fn run_expect<S: AsRef<std::ffi::OsStr>>(args: &[S], code: i32) -> Output {
    let out = run(args);
    assert_eq!(out.status.code(), Some(code), "stderr:\n{}", String::from_utf8_lossy(&out.stderr));
    out
}

pub fn path_arg(p: &Path) -> String {
    p.display().to_string()
}

pub fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

pub fn is_live(r: &SampleRecord) -> bool {
    r.label == Label::Live
}
