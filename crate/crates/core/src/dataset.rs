//! Sample manifests, image preprocessing and subject-disjoint splitting.
//!
//! A manifest is a CSV with header `path,label,pai_type,subject_id,device`.
//! Live rows carry `pai_type = none`; spoof rows name their attack
//! instrument. Relative paths are resolved against the manifest's directory.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Element, Rng, Shape, Tensor};

pub const NO_PAI: &str = "none";
pub const MANIFEST_HEADER: [&str; 5] = ["path", "label", "pai_type", "subject_id", "device"];
const IMAGE_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Live,
    Spoof,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Live => "live",
            Label::Spoof => "spoof",
        })
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "live" => Ok(Label::Live),
            "spoof" => Ok(Label::Spoof),
            other => Err(Error::Usage(format!("unknown label {other:?}, expected live or spoof"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub path: PathBuf,
    pub label: Label,
    pub pai_type: String,
    pub subject_id: String,
    pub device: String,
}

impl SampleRecord {
    pub fn live(path: impl Into<PathBuf>, subject_id: &str) -> Self {
        SampleRecord {
            path: path.into(),
            label: Label::Live,
            pai_type: NO_PAI.into(),
            subject_id: subject_id.into(),
            device: "unknown".into(),
        }
    }

    pub fn spoof(path: impl Into<PathBuf>, pai_type: &str, subject_id: &str) -> Self {
        SampleRecord {
            path: path.into(),
            label: Label::Spoof,
            pai_type: pai_type.into(),
            subject_id: subject_id.into(),
            device: "unknown".into(),
        }
    }

    fn check(&self) -> std::result::Result<(), String> {
        match self.label {
            Label::Live if self.pai_type != NO_PAI => Err(format!(
                "{}: live sample must have pai_type {NO_PAI:?}, found {:?}",
                self.path.display(),
                self.pai_type
            )),
            Label::Spoof if self.pai_type == NO_PAI || self.pai_type.is_empty() => {
                Err(format!("{}: spoof sample must name its attack instrument", self.path.display()))
            }
            _ if self.subject_id.is_empty() => Err(format!("{}: empty subject_id", self.path.display())),
            _ => Ok(()),
        }
    }
}

/// A validated list of samples with unique paths.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    records: Vec<SampleRecord>,
}

impl Manifest {
    /// Validates every record. Errors report 1-based CSV line numbers, as
    /// if the records had been read from a file with a header row.
    pub fn new(records: Vec<SampleRecord>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (i, r) in records.iter().enumerate() {
            let line = i as u64 + 2;
            r.check().map_err(|message| Error::Manifest { line, message })?;
            if !seen.insert(&r.path) {
                return Err(Error::Manifest { line, message: format!("duplicate path {}", r.path.display()) });
            }
        }
        Ok(Manifest { records })
    }

    pub fn from_reader(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.iter().ne(MANIFEST_HEADER) {
            return Err(Error::Manifest {
                line: 1,
                message: format!(
                    "header must be {}, found {}",
                    MANIFEST_HEADER.join(","),
                    header.iter().collect::<Vec<_>>().join(",")
                ),
            });
        }
        let mut records = Vec::new();
        let mut lines = Vec::new();
        for row in rdr.records() {
            let row = row
                .map_err(|e| Error::Manifest { line: e.position().map_or(0, |p| p.line()), message: e.to_string() })?;
            let line = row.position().map_or(0, |p| p.line());
            let record: SampleRecord =
                row.deserialize(Some(&header)).map_err(|e| Error::Manifest { line, message: e.to_string() })?;
            records.push(record);
            lines.push(line);
        }
        Manifest::new(records).map_err(|e| match e {
            Error::Manifest { line, message } => Error::Manifest { line: lines[line as usize - 2], message },
            other => other,
        })
    }

    /// Reads a manifest file; relative sample paths become relative to the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut manifest = Manifest::from_reader(fs::File::open(path)?)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for r in &mut manifest.records {
            if r.path.is_relative() {
                r.path = base.join(&r.path);
            }
        }
        Ok(manifest)
    }

    pub fn write_to(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
        w.write_record(MANIFEST_HEADER)?;
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(fs::File::create(path)?)
    }

    pub fn records(&self) -> &[SampleRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<SampleRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Record count per `(label, pai_type)`.
    pub fn counts(&self) -> BTreeMap<(Label, String), usize> {
        let mut out = BTreeMap::new();
        for r in &self.records {
            *out.entry((r.label, r.pai_type.clone())).or_insert(0) += 1;
        }
        out
    }

    pub fn count(&self, label: Label) -> usize {
        self.records.iter().filter(|r| r.label == label).count()
    }

    /// Sorted distinct subject ids of the live records.
    pub fn live_subjects(&self) -> Vec<String> {
        let set: BTreeSet<&str> =
            self.records.iter().filter(|r| r.label == Label::Live).map(|r| r.subject_id.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }

    /// Records satisfying `keep`, in their original order.
    pub fn filter(&self, mut keep: impl FnMut(&SampleRecord) -> bool) -> Manifest {
        Manifest { records: self.records.iter().filter(|r| keep(r)).cloned().collect() }
    }
}

/// Splits live records by subject so that no subject appears on both sides.
/// `round(train_fraction * subjects)` subjects (at least one on each side)
/// go to training; spoof records always go to the test side.
pub fn subject_split(manifest: &Manifest, train_fraction: f64, seed: u64) -> Result<(Manifest, Manifest)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Usage(format!("train fraction {train_fraction} must lie in (0, 1)")));
    }
    let mut subjects = manifest.live_subjects();
    if subjects.len() < 2 {
        return Err(Error::Usage(format!("subject split needs at least 2 live subjects, found {}", subjects.len())));
    }
    let n = subjects.len();
    let n_train = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    Rng::new(seed).shuffle(&mut subjects);
    let train_subjects: HashSet<String> = subjects.into_iter().take(n_train).collect();
    let is_train = |r: &SampleRecord| r.label == Label::Live && train_subjects.contains(&r.subject_id);
    Ok((manifest.filter(is_train), manifest.filter(|r| !is_train(r))))
}

/// Builds a manifest from `<root>/<label>/<pai_type>/<subject_id>/<file>`.
/// Files without an image extension are ignored; entries come out sorted.
pub fn scan(root: impl AsRef<Path>) -> Result<Manifest> {
    let root = root.as_ref();
    let mut records = Vec::new();
    for label_dir in sorted_dirs(root)? {
        let name = label_dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let label: Label = name.parse().map_err(|_| {
            Error::Usage(format!("{}: top-level directories must be live or spoof", label_dir.display()))
        })?;
        for pai_dir in sorted_dirs(&label_dir)? {
            let pai = pai_dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
            for subject_dir in sorted_dirs(&pai_dir)? {
                let subject = subject_dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
                let mut files: Vec<PathBuf> =
                    fs::read_dir(&subject_dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
                files.retain(|p| p.is_file() && has_image_extension(p));
                files.sort();
                for path in files {
                    records.push(SampleRecord {
                        path,
                        label,
                        pai_type: pai.clone(),
                        subject_id: subject.clone(),
                        device: "unknown".into(),
                    });
                }
            }
        }
    }
    Manifest::new(records)
}

fn sorted_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
    out.retain(|p| p.is_dir());
    out.sort();
    Ok(out)
}

fn has_image_extension(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// 8-bit RGB image, row-major, interleaved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rgb8 {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Rgb8 {
    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let img = image::load_from_memory(bytes)
            .map_err(|e| Error::Decode { path: path.to_path_buf(), message: e.to_string() })?;
        // Grayscale is replicated into all three channels; alpha is dropped.
        let rgb = img.to_rgb8();
        Ok(Rgb8 { width: rgb.width() as usize, height: rgb.height() as usize, pixels: rgb.into_raw() })
    }

    fn channel(&self, c: usize) -> impl Iterator<Item = u8> + '_ {
        self.pixels.iter().skip(c).step_by(3).copied()
    }
}

/// Bilinear resize of one row-major plane with half-pixel centres (edge
/// samples clamp to the border).
pub fn resize_bilinear(src: &[f64], width: usize, height: usize, out_w: usize, out_h: usize) -> Vec<f64> {
    let taps = |out: usize, input: usize| -> Vec<(usize, usize, f64)> {
        let scale = input as f64 / out as f64;
        (0..out)
            .map(|o| {
                let pos = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
                let lo = pos.floor() as usize;
                let hi = (lo + 1).min(input - 1);
                (lo, hi, pos - lo as f64)
            })
            .collect()
    };
    let xs = taps(out_w, width);
    let ys = taps(out_h, height);
    let mut out = Vec::with_capacity(out_w * out_h);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = src[y0 * width + x0] * (1.0 - fx) + src[y0 * width + x1] * fx;
            let bottom = src[y1 * width + x0] * (1.0 - fx) + src[y1 * width + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Converts to a `1 x 3 x size x size` tensor in `[0, 1]`, resizing
/// bilinearly when the image is not already `size x size`.
pub fn to_tensor<T: Element>(img: &Rgb8, size: usize) -> Tensor<T> {
    let scale = T::from_f64_lossy(255.0);
    let mut data = Vec::with_capacity(3 * size * size);
    for c in 0..3 {
        if img.width == size && img.height == size {
            data.extend(img.channel(c).map(|v| T::from_f64_lossy(v as f64) / scale));
        } else {
            let plane: Vec<f64> = img.channel(c).map(f64::from).collect();
            let resized = resize_bilinear(&plane, img.width, img.height, size, size);
            data.extend(resized.into_iter().map(|v| T::from_f64_lossy(v / 255.0)));
        }
    }
    Tensor::new(Shape::new(1, 3, size, size), data).expect("3 planes of size^2")
}

pub fn preprocess<T: Element>(bytes: &[u8], size: usize, path: &Path) -> Result<Tensor<T>> {
    Ok(to_tensor(&Rgb8::decode(bytes, path)?, size))
}

pub fn load_image<T: Element>(path: &Path, size: usize) -> Result<Tensor<T>> {
    let bytes = fs::read(path).map_err(|e| Error::Decode { path: path.to_path_buf(), message: e.to_string() })?;
    preprocess(&bytes, size, path)
}

/// Loads every record's image in parallel; results keep record order.
pub fn load_images<T: Element>(records: &[SampleRecord], size: usize) -> Vec<Result<Tensor<T>>> {
    records.par_iter().map(|r| load_image(&r.path, size)).collect()
}
