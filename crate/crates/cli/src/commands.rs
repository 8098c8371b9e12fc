use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use cbam_pad::checkpoint::load_checkpoint;
use cbam_pad::classifier::{read_scores_csv, score_dataset, write_scores_csv, ScoreRow, ScoreRun};
use cbam_pad::dataset::{load_images, scan, subject_split};
use cbam_pad::metrics::{write_json, write_roc_csv, Counts};
use cbam_pad::trainer::fit;
use cbam_pad::{
    calibrate_threshold, compute_rates, eer, kfold_split, roc_curve, Autoencoder, BonafideSet, Error, EvalReport,
    Label, Manifest, ThresholdModel,
};
use serde::{Deserialize, Serialize};

use crate::config::{existing, RunConfig};
use crate::exit::CliError;

type Result<T> = std::result::Result<T, CliError>;

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const HISTORY_FILE: &str = "history.csv";
pub const THRESHOLD_FILE: &str = "threshold.json";
pub const SCORES_FILE: &str = "scores.csv";
pub const REPORT_FILE: &str = "report.json";
pub const ROC_FILE: &str = "roc.csv";
pub const FOLDS_FILE: &str = "folds.json";

fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.paths.out_dir)?;
    Ok(&cfg.paths.out_dir)
}

fn load_training_manifest(cfg: &RunConfig) -> Result<Manifest> {
    let manifest = Manifest::load(cfg.train_manifest()?)?;
    if let Some(r) = manifest.records().iter().find(|r| r.label != Label::Live) {
        return Err(Error::Contamination(format!(
            "training manifest contains {} sample {} ({})",
            r.label,
            r.path.display(),
            r.pai_type
        ))
        .into());
    }
    if manifest.is_empty() {
        return Err(CliError::usage("training manifest is empty"));
    }
    Ok(manifest)
}

/// Subjects used for fitting and for threshold calibration.
fn fit_and_validation(cfg: &RunConfig, manifest: &Manifest) -> Result<(Manifest, Manifest)> {
    let vf = cfg.calibration.validation_fraction;
    if vf == 0.0 {
        return Ok((manifest.clone(), manifest.clone()));
    }
    Ok(subject_split(manifest, 1.0 - vf, cfg.seed)?)
}

fn load_bonafide(manifest: &Manifest, size: usize) -> Result<BonafideSet> {
    let images = load_images::<f32>(manifest.records(), size);
    let mut items = Vec::with_capacity(images.len());
    for (r, img) in manifest.records().iter().zip(images) {
        items.push((r.path.display(), r.label, img?));
    }
    Ok(BonafideSet::new(items)?)
}

fn load_model(cfg: &RunConfig) -> Result<Autoencoder> {
    let path = cfg.checkpoint_path();
    let path = existing("checkpoint", Some(&path))?;
    Ok(load_checkpoint(path)?)
}

fn score(model: &Autoencoder, manifest: &Manifest, batch: usize) -> Result<ScoreRun> {
    let run = score_dataset(model, manifest.records(), batch)?;
    for (r, msg) in &run.failures {
        eprintln!("warning: skipped {}: {msg}", r.path.display());
    }
    if !run.failures.is_empty() {
        eprintln!("warning: {} of {} samples could not be scored", run.failures.len(), manifest.len());
    }
    Ok(run)
}

fn read_threshold(path: &Path) -> Result<ThresholdModel> {
    let text = fs::read_to_string(existing("--threshold", Some(path))?)?;
    serde_json::from_str(&text).map_err(|e| CliError::io(format!("invalid threshold file {}: {e}", path.display())))
}

pub fn cmd_scan(root: &Path, out: &Path) -> Result<()> {
    let root = fs::canonicalize(root).map_err(|e| CliError::io(format!("{}: {e}", root.display())))?;
    let manifest = scan(&root)?;
    fs::create_dir_all(out)?;
    let path = out.join(MANIFEST_FILE);
    manifest.save(&path)?;
    println!("wrote {} ({} records)", path.display(), manifest.len());
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let manifest = load_training_manifest(cfg)?;
    let (fit_set, _) = fit_and_validation(cfg, &manifest)?;
    let data = load_bonafide(&fit_set, cfg.model.input_size)?;
    let out = out_dir(cfg)?;
    eprintln!("training on {} images from {} subjects", data.len(), fit_set.live_subjects().len());
    let model = Autoencoder::new(&cfg.model)?;
    let (_, run) = fit(model, &cfg.train_config(), &data, |epoch, loss| eprintln!("epoch {epoch}: loss {loss:.6e}"))?;
    run.write_history_csv(out.join(HISTORY_FILE))?;
    println!("wrote {} after {} steps", cfg.checkpoint_path().display(), run.steps);
    Ok(())
}

pub fn cmd_calibrate(cfg: &RunConfig) -> Result<()> {
    let model = load_model(cfg)?;
    let manifest = load_training_manifest(cfg)?;
    let (_, validation) = fit_and_validation(cfg, &manifest)?;
    let run = score(&model, &validation, cfg.trainer.batch_size)?;
    let threshold = calibrate_threshold(&run.live_scores(), cfg.calibration.target_bpcer)?;
    let path = out_dir(cfg)?.join(THRESHOLD_FILE);
    write_json(&path, &threshold)?;
    println!(
        "tau = {} from {} validation scores; wrote {}",
        threshold.tau,
        threshold.calibration.count,
        path.display()
    );
    Ok(())
}

pub fn cmd_score(cfg: &RunConfig, manifest: Option<&Path>, threshold: Option<&Path>) -> Result<()> {
    let model = load_model(cfg)?;
    let manifest_path = match manifest {
        Some(p) => existing("--manifest", Some(p))?,
        None => cfg.test_manifest()?,
    };
    let tau = threshold.map(read_threshold).transpose()?.map(|t| t.tau);
    let manifest = Manifest::load(manifest_path)?;
    let run = score(&model, &manifest, cfg.trainer.batch_size)?;
    let rows: Vec<ScoreRow> = run.scored.iter().map(|s| ScoreRow::new(s, tau)).collect();
    let path = out_dir(cfg)?.join(SCORES_FILE);
    write_scores_csv(&path, &rows)?;
    println!("wrote {} ({} scores)", path.display(), rows.len());
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Failure {
    pub path: PathBuf,
    pub error: String,
}

/// `report.json`: the evaluation report plus where its threshold came from.
#[derive(Debug, Serialize, Deserialize)]
pub struct ReportFile {
    #[serde(flatten)]
    pub report: EvalReport,
    pub tau_source: String,
    pub failures: Vec<Failure>,
}

/// `report.json` for a spoof-only manifest: only attack rates are defined.
#[derive(Debug, Serialize, Deserialize)]
pub struct AttackReportFile {
    pub tau: f64,
    pub apcer_overall: f64,
    pub apcer_by_pai: BTreeMap<String, f64>,
    pub counts: Counts,
    pub tau_source: String,
    pub failures: Vec<Failure>,
}

fn attack_only(
    tau: f64,
    attacks: &BTreeMap<String, Vec<f64>>,
    tau_source: String,
    failures: Vec<Failure>,
) -> Result<AttackReportFile> {
    let total: usize = attacks.values().map(Vec::len).sum();
    if total == 0 {
        return Err(CliError::io("no test sample could be scored"));
    }
    let pct = |scores: &[f64]| 100.0 * scores.iter().filter(|&&s| s <= tau).count() as f64 / scores.len() as f64;
    let accepted: usize = attacks.values().flatten().filter(|&&s| s <= tau).count();
    Ok(AttackReportFile {
        tau,
        apcer_overall: 100.0 * accepted as f64 / total as f64,
        apcer_by_pai: attacks.iter().map(|(k, v)| (k.clone(), pct(v))).collect(),
        counts: Counts {
            live: 0,
            attack: total,
            attack_by_pai: attacks.iter().map(|(k, v)| (k.clone(), v.len())).collect(),
        },
        tau_source,
        failures,
    })
}

pub fn cmd_eval(cfg: &RunConfig, tau: Option<f64>, threshold: Option<&Path>) -> Result<()> {
    let model = load_model(cfg)?;
    let manifest = Manifest::load(cfg.test_manifest()?)?;
    let from_file = threshold.map(read_threshold).transpose()?;
    let run = score(&model, &manifest, cfg.trainer.batch_size)?;

    let live = run.live_scores();
    let (tau, tau_source) = match (tau, from_file, threshold) {
        (Some(t), _, _) => (t, "--tau".to_string()),
        (None, Some(t), Some(p)) => (t.tau, p.display().to_string()),
        _ => {
            if live.is_empty() {
                return Err(CliError::usage(
                    "test manifest has no bonafide samples to calibrate on; supply --tau or --threshold",
                ));
            }
            let t = calibrate_threshold(&live, cfg.calibration.target_bpcer)?;
            (t.tau, format!("test bonafide scores at target BPCER {}%", cfg.calibration.target_bpcer))
        }
    };
    let mut attacks: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for s in run.scored.iter().filter(|s| s.record.label == Label::Spoof) {
        attacks.entry(s.record.pai_type.clone()).or_default().push(s.score);
    }
    let failures: Vec<Failure> =
        run.failures.iter().map(|(r, e)| Failure { path: r.path.clone(), error: e.clone() }).collect();
    let rows: Vec<ScoreRow> = run.scored.iter().map(|s| ScoreRow::new(s, Some(tau))).collect();
    if live.is_empty() {
        let file = attack_only(tau, &attacks, tau_source, failures)?;
        let out = out_dir(cfg)?;
        write_scores_csv(out.join(SCORES_FILE), &rows)?;
        write_json(out.join(REPORT_FILE), &file)?;
        println!("tau {:.6e}: APCER {:.3}% (no bonafide samples)", file.tau, file.apcer_overall);
        return Ok(());
    }
    let report = compute_rates(&live, &attacks, tau)?;

    let out = out_dir(cfg)?;
    write_scores_csv(out.join(SCORES_FILE), &rows)?;
    write_roc_csv(out.join(ROC_FILE), &report.roc)?;
    let file = ReportFile { report, tau_source, failures };
    write_json(out.join(REPORT_FILE), &file)?;
    let r = &file.report;
    println!(
        "tau {:.6e}: APCER {:.3}%  BPCER {:.3}%  ACER {:.3}%  EER {:.3}%",
        r.tau, r.apcer_overall, r.bpcer, r.acer, r.eer
    );
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train_subjects: Vec<String>,
    pub test_subjects: Vec<String>,
    pub tau: f64,
    pub test_samples: usize,
    pub bpcer: f64,
    /// Percent of held-out bonafide samples accepted: `100 - bpcer`.
    pub tpr: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FoldsFile {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<FoldReport>,
    pub bpcer_mean: f64,
    /// Sample standard deviation over folds.
    pub bpcer_std: f64,
    pub tpr_mean: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 { values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

pub fn cmd_kfold(cfg: &RunConfig, k: usize) -> Result<()> {
    let manifest = load_training_manifest(cfg)?;
    let plan = kfold_split(&manifest.live_subjects(), k, cfg.seed)?;
    let mut folds = Vec::with_capacity(k);
    for (i, fold) in plan.folds.iter().enumerate() {
        let train = manifest.filter(|r| fold.train.binary_search(&r.subject_id).is_ok());
        let test = manifest.filter(|r| fold.test.binary_search(&r.subject_id).is_ok());
        let (fit_set, validation) = fit_and_validation(cfg, &train)?;
        let data = load_bonafide(&fit_set, cfg.model.input_size)?;
        let train_cfg = cbam_pad::TrainConfig { checkpoint_dir: None, ..cfg.train_config() };
        eprintln!("fold {}/{k}: training on {} images", i + 1, data.len());
        let (model, _) = fit(Autoencoder::new(&cfg.model)?, &train_cfg, &data, |_, _| {})?;
        let val_scores = score(&model, &validation, cfg.trainer.batch_size)?.live_scores();
        let tau = calibrate_threshold(&val_scores, cfg.calibration.target_bpcer)?.tau;
        let test_scores = score(&model, &test, cfg.trainer.batch_size)?.live_scores();
        if test_scores.is_empty() {
            return Err(CliError::io(format!("fold {}: no test image could be scored", i + 1)));
        }
        let rejected = test_scores.iter().filter(|&&s| s > tau).count();
        let bpcer = 100.0 * rejected as f64 / test_scores.len() as f64;
        eprintln!("fold {}/{k}: BPCER {bpcer:.3}%", i + 1);
        folds.push(FoldReport {
            fold: i + 1,
            train_subjects: fold.train.clone(),
            test_subjects: fold.test.clone(),
            tau,
            test_samples: test_scores.len(),
            bpcer,
            tpr: 100.0 - bpcer,
        });
    }
    let bpcers: Vec<f64> = folds.iter().map(|f| f.bpcer).collect();
    let tprs: Vec<f64> = folds.iter().map(|f| f.tpr).collect();
    let (bpcer_mean, bpcer_std) = mean_std(&bpcers);
    let file = FoldsFile { k, seed: cfg.seed, folds, bpcer_mean, bpcer_std, tpr_mean: mean_std(&tprs).0 };
    let path = out_dir(cfg)?.join(FOLDS_FILE);
    write_json(&path, &file)?;
    println!("BPCER {bpcer_mean:.3}% ± {bpcer_std:.3} over {k} folds; wrote {}", path.display());
    Ok(())
}

pub fn cmd_roc(scores: &Path, out: &Path) -> Result<()> {
    let rows = read_scores_csv(existing("--scores", Some(scores))?)?;
    let live: Vec<f64> = rows.iter().filter(|r| r.label == Label::Live).map(|r| r.score).collect();
    let attack: Vec<f64> = rows.iter().filter(|r| r.label == Label::Spoof).map(|r| r.score).collect();
    if live.is_empty() || attack.is_empty() {
        return Err(CliError::usage("ROC needs both bonafide and attack scores"));
    }
    let roc = roc_curve(&live, &attack);
    fs::create_dir_all(out)?;
    let path = out.join(ROC_FILE);
    write_roc_csv(&path, &roc)?;
    println!("EER {:.3}%; wrote {} ({} points)", eer(&roc), path.display(), roc.len());
    Ok(())
}
