//! One-class presentation-attack detection for contactless fingerprint
//! photos.
//!
//! A convolutional autoencoder with channel and spatial attention (CBAM)
//! is trained on bonafide images only. At test time the per-image
//! reconstruction error is the anomaly score: images the model cannot
//! reconstruct are classified as attacks. The crate carries its own small
//! reverse-mode autograd engine, the training loop, threshold calibration,
//! and the APCER/BPCER/ACER/ROC evaluation harness.

pub mod attention;
pub mod autograd;
pub mod checkpoint;
pub mod classifier;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod model;
pub mod params;
pub mod tensor;
pub mod trainer;

pub use autograd::{Activation, Graph, PoolMode, Var};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use classifier::{calibrate_threshold, classify, Decision, ThresholdModel};
pub use dataset::{Label, Manifest, SampleRecord};
pub use error::{CheckpointError, Error, Result};
pub use metrics::{compute_rates, eer, kfold_split, roc_curve, EvalReport, FoldPlan, RocPoint};
pub use model::{build_model, Autoencoder, ModelConfig};
pub use params::ParamTree;
pub use tensor::{Element, Rng, Shape, Tensor};
pub use trainer::{train, AdamConfig, BonafideSet, TrainConfig, TrainRun};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/autograd.md")]
    mod autograd {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
