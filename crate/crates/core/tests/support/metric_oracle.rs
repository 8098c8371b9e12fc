#![allow(dead_code)]

//! Quadratic counting versions of the error rates, the ROC sweep and the EER.

use std::collections::BTreeMap;

use cbam_pad::{compute_rates, Rng};

fn pct(count: usize, total: usize) -> f64 {
    100.0 * count as f64 / total as f64
}

fn draw_scores(rng: &mut Rng, count: usize) -> Vec<f64> {
    // Coarse grids produce ties; the continuous branch does not.
    let grid = [0usize, 5, 50][rng.below(3)];
    let shift = rng.uniform();
    (0..count)
        .map(|_| if grid == 0 { rng.uniform() + shift } else { rng.below(grid) as f64 / grid as f64 + shift })
        .collect()
}

/// Brute-force `(threshold, apcer, bpcer)` rows.
pub fn sweep(live: &[f64], attack: &[f64]) -> Vec<(f64, f64, f64)> {
    let mut thresholds = vec![f64::NEG_INFINITY];
    let mut all: Vec<f64> = live.iter().chain(attack).copied().collect();
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for s in all {
        if *thresholds.last().unwrap() != s {
            thresholds.push(s);
        }
    }
    thresholds.push(f64::INFINITY);
    thresholds
        .into_iter()
        .map(|t| {
            let accepted = attack.iter().filter(|&&s| s <= t).count();
            let rejected = live.iter().filter(|&&s| s > t).count();
            (t, pct(accepted, attack.len()), pct(rejected, live.len()))
        })
        .collect()
}

/// First exact crossing, else linear interpolation across the first sign change.
pub fn equal_error(rows: &[(f64, f64, f64)]) -> f64 {
    let k = rows.iter().position(|r| r.1 >= r.2).expect("sweep ends at apcer 100, bpcer 0");
    let (_, a1, b1) = rows[k];
    if a1 == b1 || k == 0 {
        return a1.min(b1);
    }
    let (_, a0, b0) = rows[k - 1];
    let t = (b0 - a0) / ((a1 - b1) - (a0 - b0));
    a0 + t * (a1 - a0)
}

/// Runs `sets` random score sets (up to 1000 scores each) through the
/// library and the counting oracle; returns a description of the first
/// mismatch.
pub fn check(sets: usize, seed: u64) -> Result<(), String> {
    let mut rng = Rng::new(seed);
    for case in 0..sets {
        let n_live = 1 + rng.below(400);
        let live = draw_scores(&mut rng, n_live);
        let mut by_pai = BTreeMap::new();
        for pai in ["print", "replay", "mask"].iter().take(1 + rng.below(3)) {
            let n = 1 + rng.below(200);
            by_pai.insert(pai.to_string(), draw_scores(&mut rng, n));
        }
        let pooled: Vec<f64> = by_pai.values().flatten().copied().collect();
        let tau = match rng.below(3) {
            0 => live[rng.below(live.len())],
            1 => pooled[rng.below(pooled.len())],
            _ => rng.uniform() * 3.0 - 0.5,
        };

        let report = compute_rates(&live, &by_pai, tau).map_err(|e| e.to_string())?;
        let bpcer = pct(live.iter().filter(|&&s| s > tau).count(), live.len());
        let apcer = pct(pooled.iter().filter(|&&s| s <= tau).count(), pooled.len());
        if report.bpcer != bpcer || report.apcer_overall != apcer {
            return Err(format!("case {case}: rates {} {} vs {bpcer} {apcer}", report.bpcer, report.apcer_overall));
        }
        for (pai, scores) in &by_pai {
            let want = pct(scores.iter().filter(|&&s| s <= tau).count(), scores.len());
            if report.apcer_by_pai[pai] != want {
                return Err(format!("case {case}: apcer[{pai}] {} vs {want}", report.apcer_by_pai[pai]));
            }
        }
        if report.acer != (apcer + bpcer) / 2.0 {
            return Err(format!("case {case}: acer {}", report.acer));
        }
        let rows = sweep(&live, &pooled);
        let got: Vec<(f64, f64, f64)> = report.roc.iter().map(|p| (p.threshold, p.apcer, p.bpcer)).collect();
        if got != rows {
            return Err(format!("case {case}: roc differs ({} vs {} points)", got.len(), rows.len()));
        }
        let want = equal_error(&rows);
        if report.eer != want {
            return Err(format!("case {case}: eer {} vs {want}", report.eer));
        }
    }
    Ok(())
}
