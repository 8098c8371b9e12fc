use std::fs;
use std::path::{Path, PathBuf};

use cbam_pad::{AdamConfig, ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::exit::CliError;

/// One JSON document describing a whole pipeline run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// `model.seed` is overwritten by the run seed.
    pub model: ModelConfig,
    pub trainer: TrainerSection,
    pub calibration: CalibrationSection,
    pub paths: PathsSection,
    /// Drives weight initialisation, splits, shuffling and dropout.
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub checkpoint_every: Option<usize>,
    pub hflip: bool,
}

impl Default for TrainerSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainerSection {
            epochs: t.epochs,
            batch_size: t.batch_size,
            adam: t.adam,
            checkpoint_every: None,
            hflip: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSection {
    /// Percent of bonafide validation samples the threshold may reject.
    pub target_bpcer: f64,
    /// Fraction of training subjects held out for threshold calibration.
    /// Zero calibrates on the training subjects themselves.
    pub validation_fraction: f64,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        CalibrationSection { target_bpcer: 1.0, validation_fraction: 0.2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub train_manifest: Option<PathBuf>,
    pub test_manifest: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Defaults to `<out_dir>/checkpoint.bin`.
    pub checkpoint: Option<PathBuf>,
}

impl Default for PathsSection {
    fn default() -> Self {
        PathsSection { train_manifest: None, test_manifest: None, out_dir: PathBuf::from("out"), checkpoint: None }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub target_bpcer: Option<f64>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::usage(format!("invalid config {}: {e}", path.display())))?;
        if let Some(seed) = overrides.seed {
            cfg.seed = seed;
        }
        if let Some(epochs) = overrides.epochs {
            cfg.trainer.epochs = epochs;
        }
        if let Some(t) = overrides.target_bpcer {
            cfg.calibration.target_bpcer = t;
        }
        if let Some(out) = &overrides.out {
            cfg.paths.out_dir = out.clone();
        }
        cfg.model.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        self.model.validate().map_err(|e| CliError::usage(e.to_string()))?;
        if self.trainer.batch_size == 0 {
            return Err(CliError::usage("trainer.batch_size must be >= 1"));
        }
        let c = &self.calibration;
        if !(0.0..100.0).contains(&c.target_bpcer) {
            return Err(CliError::usage(format!("calibration.target_bpcer {} must lie in [0, 100)", c.target_bpcer)));
        }
        if !(0.0..1.0).contains(&c.validation_fraction) {
            return Err(CliError::usage(format!(
                "calibration.validation_fraction {} must lie in [0, 1)",
                c.validation_fraction
            )));
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.trainer.epochs,
            batch_size: self.trainer.batch_size,
            seed: self.seed,
            adam: self.trainer.adam,
            checkpoint_every: self.trainer.checkpoint_every,
            checkpoint_dir: Some(self.paths.out_dir.clone()),
            hflip: self.trainer.hflip,
        }
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.paths.checkpoint.clone().unwrap_or_else(|| self.paths.out_dir.join(cbam_pad::trainer::CHECKPOINT_FILE))
    }

    pub fn train_manifest(&self) -> Result<&Path, CliError> {
        existing("paths.train_manifest", self.paths.train_manifest.as_deref())
    }

    pub fn test_manifest(&self) -> Result<&Path, CliError> {
        existing("paths.test_manifest", self.paths.test_manifest.as_deref())
    }
}

/// A configured path that must already exist.
pub fn existing<'a>(key: &str, path: Option<&'a Path>) -> Result<&'a Path, CliError> {
    let path = path.ok_or_else(|| CliError::usage(format!("{key} is not set")))?;
    if !path.exists() {
        return Err(CliError::io(format!("{key}: {} does not exist", path.display())));
    }
    Ok(path)
}
