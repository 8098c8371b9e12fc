//! Threshold calibration on bonafide scores, decisions, and dataset scoring.

use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{load_image, Label, SampleRecord};
use crate::error::{Error, Result};
use crate::model::Autoencoder;
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Bonafide,
    Attack,
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::Bonafide => "bonafide",
            Decision::Attack => "attack",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Requested bonafide rejection rate, percent.
    pub target_bpcer: f64,
    /// Percentile of the validation scores that became the threshold.
    pub percentile: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdModel {
    pub tau: f64,
    pub calibration: Calibration,
}

impl ThresholdModel {
    pub fn classify(&self, score: f64) -> Decision {
        classify(score, self.tau)
    }
}

/// Bonafide iff `score <= tau`.
pub fn classify(score: f64, tau: f64) -> Decision {
    if score <= tau {
        Decision::Bonafide
    } else {
        Decision::Attack
    }
}

/// Empirical `q`-quantile (`q` in `[0, 1]`) of ascending `sorted`, linearly
/// interpolated between the order statistics around `q * (n - 1)`.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

/// Sets `tau` at the `(100 - target_bpcer)` percentile of bonafide
/// validation scores.
pub fn calibrate_threshold(live_scores: &[f64], target_bpcer: f64) -> Result<ThresholdModel> {
    if live_scores.is_empty() {
        return Err(Error::Usage("calibration needs at least one bonafide score".into()));
    }
    if !(0.0..100.0).contains(&target_bpcer) {
        return Err(Error::Usage(format!("target BPCER {target_bpcer} must lie in [0, 100)")));
    }
    if let Some(bad) = live_scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::Usage(format!("calibration score {bad} is not finite")));
    }
    let mut sorted = live_scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let percentile = 100.0 - target_bpcer;
    Ok(ThresholdModel {
        tau: quantile(&sorted, percentile / 100.0),
        calibration: Calibration { target_bpcer, percentile, count: sorted.len() },
    })
}

/// One manifest row with its reconstruction score.
#[derive(Clone, Debug, PartialEq)]
pub struct Scored {
    pub record: SampleRecord,
    pub score: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreRun {
    /// Successfully scored samples, in input order.
    pub scored: Vec<Scored>,
    /// Samples that could not be loaded, with the reason.
    pub failures: Vec<(SampleRecord, String)>,
}

impl ScoreRun {
    pub fn live_scores(&self) -> Vec<f64> {
        self.scored.iter().filter(|s| s.record.label == Label::Live).map(|s| s.score).collect()
    }
}

/// A record and its score, or why it could not be scored.
type Attempt = (SampleRecord, std::result::Result<f64, String>);

/// Scores every record's image. Chunks of `batch_size` are loaded and
/// scored in parallel; results keep input order and do not depend on
/// `batch_size`. Unreadable images are recorded as failures.
pub fn score_dataset<T: Element>(
    model: &Autoencoder<T>,
    records: &[SampleRecord],
    batch_size: usize,
) -> Result<ScoreRun> {
    let size = model.config.input_size;
    let chunks: Vec<Result<Vec<Attempt>>> = records
        .par_chunks(batch_size.max(1))
        .map(|chunk| {
            let loaded: Vec<_> = chunk.iter().map(|r| load_image::<T>(&r.path, size)).collect();
            let ok: Vec<Tensor<T>> = loaded.iter().filter_map(|t| t.as_ref().ok().cloned()).collect();
            let mut scores =
                if ok.is_empty() { Vec::new() } else { model.reconstruction_scores(&Tensor::stack(&ok)?)? }.into_iter();
            Ok(chunk
                .iter()
                .zip(loaded)
                .map(|(r, t)| {
                    (r.clone(), t.map(|_| scores.next().expect("one score per image")).map_err(|e| e.to_string()))
                })
                .collect())
        })
        .collect();
    let mut run = ScoreRun::default();
    for chunk in chunks {
        for (record, result) in chunk? {
            match result {
                Ok(score) => run.scored.push(Scored { record, score }),
                Err(message) => run.failures.push((record, message)),
            }
        }
    }
    Ok(run)
}

/// One row of `scores.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub path: String,
    pub subject_id: String,
    pub label: Label,
    pub pai_type: String,
    pub score: f64,
    /// Empty when no threshold was applied.
    pub decision: Option<Decision>,
}

impl ScoreRow {
    pub fn new(s: &Scored, tau: Option<f64>) -> Self {
        ScoreRow {
            path: s.record.path.display().to_string(),
            subject_id: s.record.subject_id.clone(),
            label: s.record.label,
            pai_type: s.record.pai_type.clone(),
            score: s.score,
            decision: tau.map(|t| classify(s.score, t)),
        }
    }
}

pub fn write_scores_csv(path: impl AsRef<Path>, rows: &[ScoreRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(["path", "subject_id", "label", "pai_type", "score", "decision"])?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scores_csv(path: impl AsRef<Path>) -> Result<Vec<ScoreRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}
