//! `cbam-pad`: train, calibrate and evaluate the attention-autoencoder
//! presentation-attack detector.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 training-set
//! contamination, 3 I/O or data error.

mod commands;
mod config;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Overrides, RunConfig};
use exit::CliError;

#[derive(Parser)]
#[command(name = "cbam-pad", version, about = "One-class presentation-attack detection with an attention autoencoder")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Percent of bonafide samples the calibrated threshold may reject.
    #[arg(long)]
    target_bpcer: Option<f64>,
    /// Output directory (overrides paths.out_dir).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<RunConfig, CliError> {
        let overrides =
            Overrides { seed: self.seed, epochs: self.epochs, target_bpcer: self.target_bpcer, out: self.out.clone() };
        RunConfig::load(&self.config, &overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build manifest.csv from <root>/<label>/<pai_type>/<subject_id>/<file>.
    Scan {
        #[arg(long)]
        root: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Train on the bonafide training manifest; writes checkpoint.bin and history.csv.
    Train(Common),
    /// Fit the decision threshold on held-out bonafide subjects; writes threshold.json.
    Calibrate(Common),
    /// Score a manifest; writes scores.csv.
    Score {
        #[command(flatten)]
        common: Common,
        /// Manifest to score (defaults to paths.test_manifest).
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// threshold.json used to fill the decision column.
        #[arg(long)]
        threshold: Option<PathBuf>,
    },
    /// Evaluate on the test manifest; writes report.json, roc.csv and scores.csv.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, conflicts_with = "threshold")]
        tau: Option<f64>,
        #[arg(long)]
        threshold: Option<PathBuf>,
    },
    /// Subject-disjoint k-fold cross-validation on bonafide data; writes folds.json.
    Kfold {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 5)]
        k: usize,
    },
    /// Recompute the ROC sweep from a scores.csv; writes roc.csv.
    Roc {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Scan { root, out } => commands::cmd_scan(&root, &out),
        Command::Train(c) => commands::cmd_train(&c.load()?),
        Command::Calibrate(c) => commands::cmd_calibrate(&c.load()?),
        Command::Score { common, manifest, threshold } => {
            commands::cmd_score(&common.load()?, manifest.as_deref(), threshold.as_deref())
        }
        Command::Eval { common, tau, threshold } => commands::cmd_eval(&common.load()?, tau, threshold.as_deref()),
        Command::Kfold { common, k } => commands::cmd_kfold(&common.load()?, k),
        Command::Roc { scores, out } => commands::cmd_roc(&scores, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::USAGE } else { exit::SUCCESS });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::from(exit::SUCCESS),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
