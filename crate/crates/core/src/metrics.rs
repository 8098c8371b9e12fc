//! Presentation-attack error rates, ROC sweep, EER and subject k-folds.
//!
//! All rates are percentages computed as `100 * count / total`. A sample
//! is accepted as bonafide when its score is `<= tau`.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Rng;

fn percent(count: usize, total: usize) -> f64 {
    100.0 * count as f64 / total as f64
}

/// Operating point at one threshold.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    #[serde(with = "threshold_repr")]
    pub threshold: f64,
    pub apcer: f64,
    pub bpcer: f64,
}

// JSON has no infinities; the sweep's sentinels are written as strings.
mod threshold_repr {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Number(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            Repr::Number(*v).serialize(s)
        } else {
            Repr::Text(v.to_string()).serialize(s)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Number(v) => Ok(v),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub live: usize,
    pub attack: usize,
    pub attack_by_pai: BTreeMap<String, usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tau: f64,
    pub bpcer: f64,
    /// Attack-count-weighted over all instruments.
    pub apcer_overall: f64,
    pub apcer_by_pai: BTreeMap<String, f64>,
    pub acer: f64,
    pub hter: f64,
    pub eer: f64,
    pub counts: Counts,
    /// Raw sweep over every distinct score plus `±inf`.
    pub roc: Vec<RocPoint>,
    /// Upper-left convex hull of the sweep in (APCER, 100 - BPCER) space.
    pub roc_hull: Vec<RocPoint>,
}

/// Rates at `tau` for bonafide scores and attack scores grouped by
/// instrument, with the ROC sweep and EER over all attacks pooled.
pub fn compute_rates(live: &[f64], attacks_by_pai: &BTreeMap<String, Vec<f64>>, tau: f64) -> Result<EvalReport> {
    if live.is_empty() {
        return Err(Error::Usage("no bonafide scores to evaluate".into()));
    }
    let attack_total: usize = attacks_by_pai.values().map(Vec::len).sum();
    if attack_total == 0 {
        return Err(Error::Usage("no attack scores to evaluate".into()));
    }
    let bpcer = percent(live.iter().filter(|&&s| s > tau).count(), live.len());
    let mut accepted_total = 0;
    let mut apcer_by_pai = BTreeMap::new();
    let mut attack_by_pai = BTreeMap::new();
    for (pai, scores) in attacks_by_pai {
        if scores.is_empty() {
            continue;
        }
        let accepted = scores.iter().filter(|&&s| s <= tau).count();
        accepted_total += accepted;
        apcer_by_pai.insert(pai.clone(), percent(accepted, scores.len()));
        attack_by_pai.insert(pai.clone(), scores.len());
    }
    let apcer_overall = percent(accepted_total, attack_total);
    let acer = (apcer_overall + bpcer) / 2.0;
    let pooled: Vec<f64> = attacks_by_pai.values().flatten().copied().collect();
    let roc = roc_curve(live, &pooled);
    Ok(EvalReport {
        tau,
        bpcer,
        apcer_overall,
        apcer_by_pai,
        acer,
        hter: acer,
        eer: eer(&roc),
        counts: Counts { live: live.len(), attack: attack_total, attack_by_pai },
        roc_hull: roc_hull(&roc),
        roc,
    })
}

/// Operating points at `-inf`, every distinct score in ascending order, and
/// `+inf`. Along the sweep APCER rises from 0 to 100 while BPCER falls from
/// 100 to 0.
pub fn roc_curve(live: &[f64], attack: &[f64]) -> Vec<RocPoint> {
    let mut live = live.to_vec();
    let mut attack = attack.to_vec();
    live.sort_by(f64::total_cmp);
    attack.sort_by(f64::total_cmp);
    let mut thresholds: Vec<f64> = live.iter().chain(&attack).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();

    let mut out = Vec::with_capacity(thresholds.len() + 2);
    out.push(RocPoint { threshold: f64::NEG_INFINITY, apcer: 0.0, bpcer: 100.0 });
    let (mut li, mut ai) = (0, 0);
    for t in thresholds {
        while li < live.len() && live[li] <= t {
            li += 1;
        }
        while ai < attack.len() && attack[ai] <= t {
            ai += 1;
        }
        out.push(RocPoint {
            threshold: t,
            apcer: percent(ai, attack.len()),
            bpcer: percent(live.len() - li, live.len()),
        });
    }
    out.push(RocPoint { threshold: f64::INFINITY, apcer: 100.0, bpcer: 0.0 });
    out
}

/// Equal error rate: the first sweep point where APCER - BPCER reaches
/// zero, or the linear interpolation between the two points bracketing
/// the sign change.
pub fn eer(roc: &[RocPoint]) -> f64 {
    let diff = |p: &RocPoint| p.apcer - p.bpcer;
    for (i, p) in roc.iter().enumerate() {
        let d = diff(p);
        if d == 0.0 {
            return p.apcer;
        }
        if d > 0.0 {
            let Some(prev) = i.checked_sub(1).map(|j| &roc[j]) else {
                return p.apcer.min(p.bpcer);
            };
            let d0 = diff(prev);
            let frac = -d0 / (d - d0);
            return prev.apcer + frac * (p.apcer - prev.apcer);
        }
    }
    roc.last().map_or(0.0, |p| p.apcer.min(p.bpcer))
}

/// Upper convex hull of the sweep in (APCER, 100 - BPCER) space, in
/// increasing APCER order.
pub fn roc_hull(roc: &[RocPoint]) -> Vec<RocPoint> {
    let xy = |p: &RocPoint| (p.apcer, 100.0 - p.bpcer);
    let mut pts = roc.to_vec();
    pts.sort_by(|a, b| xy(a).partial_cmp(&xy(b)).expect("finite rates"));
    let mut hull: Vec<RocPoint> = Vec::new();
    for p in pts {
        while hull.len() >= 2 {
            let (ax, ay) = xy(&hull[hull.len() - 2]);
            let (bx, by) = xy(&hull[hull.len() - 1]);
            let (cx, cy) = xy(&p);
            // Drop b unless it lies strictly above the chord a -> c.
            if (bx - ax) * (cy - ay) - (by - ay) * (cx - ax) >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    hull
}

pub fn write_roc_csv(path: impl AsRef<Path>, roc: &[RocPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["threshold", "apcer", "bpcer"])?;
    for p in roc {
        w.write_record([p.threshold.to_string(), p.apcer.to_string(), p.bpcer.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<S: Serialize>(path: impl AsRef<Path>, value: &S) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<Fold>,
}

/// Shuffles the distinct subjects with `seed` and deals them into `k` test
/// groups whose sizes differ by at most one (the first `n % k` folds get
/// the extra subject). Each fold trains on the complement.
pub fn kfold_split(subjects: &[String], k: usize, seed: u64) -> Result<FoldPlan> {
    let distinct: BTreeSet<&String> = subjects.iter().collect();
    let mut order: Vec<String> = distinct.into_iter().cloned().collect();
    if k < 2 {
        return Err(Error::Usage(format!("k-fold needs k >= 2, got {k}")));
    }
    if k > order.len() {
        return Err(Error::Usage(format!("k = {k} exceeds the {} distinct subjects", order.len())));
    }
    Rng::new(seed).shuffle(&mut order);
    let n = order.len();
    let mut start = 0;
    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        let len = n / k + usize::from(f < n % k);
        let mut test = order[start..start + len].to_vec();
        let mut train: Vec<String> = order[..start].iter().chain(&order[start + len..]).cloned().collect();
        test.sort();
        train.sort();
        folds.push(Fold { train, test });
        start += len;
    }
    Ok(FoldPlan { k, seed, folds })
}
