//! Bonafide-only training: Adam on the mean squared reconstruction error.

use std::fs;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::checkpoint::save_checkpoint;
use crate::dataset::Label;
use crate::error::{Error, Result};
use crate::model::{Autoencoder, ModelConfig};
use crate::params::ParamTree;
use crate::tensor::{Element, Rng, Shape, Tensor};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const BEST_CHECKPOINT_FILE: &str = "checkpoint_best.bin";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moments for a flat list of parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Element = f32> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Element> AdamState<T> {
    pub fn new(config: AdamConfig, shapes: impl IntoIterator<Item = Shape>) -> Self {
        let m: Vec<Tensor<T>> = shapes.into_iter().map(Tensor::zeros).collect();
        AdamState { config, step: 0, v: m.clone(), m }
    }

    /// One bias-corrected update `θ -= lr · m̂ / (sqrt(v̂) + eps)`.
    ///
    /// Every gradient is checked before any parameter changes.
    pub fn step(&mut self, params: &mut [(String, &mut Tensor<T>)], grads: &[Option<Tensor<T>>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::Usage(format!(
                "optimizer tracks {} parameters, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (name, p)) in params.iter().enumerate() {
            let g = grads[i].as_ref().ok_or_else(|| Error::Usage(format!("missing gradient for {name}")))?;
            if g.shape() != p.shape() || self.m[i].shape() != p.shape() {
                return Err(Error::dim(
                    "adam_step",
                    format!("{name}: parameter {}, gradient {}, moments {}", p.shape(), g.shape(), self.m[i].shape()),
                ));
            }
        }

        self.step += 1;
        let c = self.config;
        let t = self.step as f64;
        let b1 = T::from_f64_lossy(c.beta1);
        let b2 = T::from_f64_lossy(c.beta2);
        let one = T::one();
        let correct1 = T::from_f64_lossy(1.0 - c.beta1.powf(t));
        let correct2 = T::from_f64_lossy(1.0 - c.beta2.powf(t));
        let lr = T::from_f64_lossy(c.lr);
        let eps = T::from_f64_lossy(c.eps);
        for (i, (_, p)) in params.iter_mut().enumerate() {
            let g = grads[i].as_ref().expect("checked").data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (j, theta) in p.data_mut().iter_mut().enumerate() {
                m[j] = b1 * m[j] + (one - b1) * g[j];
                v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
                let m_hat = m[j] / correct1;
                let v_hat = v[j] / correct2;
                *theta = *theta - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Training images, guaranteed to be bonafide.
#[derive(Clone, Debug, PartialEq)]
pub struct BonafideSet<T: Element = f32> {
    images: Vec<Tensor<T>>,
}

impl<T: Element> BonafideSet<T> {
    /// Fails with a contamination error if any item is labelled spoof.
    /// `id` names the offending item in the error.
    pub fn new<I: std::fmt::Display>(items: impl IntoIterator<Item = (I, Label, Tensor<T>)>) -> Result<Self> {
        let mut images = Vec::new();
        for (id, label, image) in items {
            if label != Label::Live {
                return Err(Error::Contamination(format!("{id} is labelled {label}")));
            }
            images.push(image);
        }
        Self::from_live(images)
    }

    /// Each image must be a single sample `1 x C x H x W`; all must match.
    pub fn from_live(images: Vec<Tensor<T>>) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Usage("training set is empty".into()));
        }
        let first = images[0].shape();
        for (i, img) in images.iter().enumerate() {
            if img.shape().n != 1 || img.shape() != first {
                return Err(Error::dim(
                    "training set",
                    format!("image {i} has shape {}, expected {first}", img.shape()),
                ));
            }
        }
        Ok(BonafideSet { images })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[Tensor<T>] {
        &self.images
    }
}

fn default_batch_size() -> usize {
    16
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Drives shuffling, dropout masks and flips.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub adam: AdamConfig,
    /// Rewrite the running checkpoint every this many epochs.
    #[serde(default)]
    pub checkpoint_every: Option<usize>,
    #[serde(default)]
    pub checkpoint_dir: Option<PathBuf>,
    /// Random horizontal flips of training images.
    #[serde(default)]
    pub hflip: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: default_batch_size(),
            seed: 0,
            adam: AdamConfig::default(),
            checkpoint_every: None,
            checkpoint_dir: None,
            hflip: false,
        }
    }
}

impl TrainConfig {
    pub fn steps_per_epoch(&self, samples: usize) -> usize {
        samples.div_ceil(self.batch_size.max(1))
    }
}

/// What happened during [`fit`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub steps: u64,
    /// Mean training loss of each completed epoch, weighted by batch size.
    pub history: Vec<f64>,
    pub best_epoch: Option<usize>,
}

impl TrainRun {
    pub fn write_history_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["epoch", "mean_loss"])?;
        for (i, loss) in self.history.iter().enumerate() {
            w.write_record([(i + 1).to_string(), loss.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

const SHUFFLE_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;
const FLIP_STREAM: u64 = 3;

fn hflip<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    Tensor::from_fn(s, |n, c, h, w| x.at(n, c, h, s.w - 1 - w))
}

/// Builds a model from `model_cfg` and trains it.
pub fn train<T: Element>(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    data: &BonafideSet<T>,
) -> Result<(Autoencoder<T>, TrainRun)> {
    fit(Autoencoder::new(model_cfg)?, cfg, data, |_, _| {})
}

/// Trains `model` for `cfg.epochs` epochs, calling `on_epoch(epoch, loss)`
/// after each. Writes `checkpoint.bin` (final) and `checkpoint_best.bin`
/// (lowest epoch loss) when a checkpoint directory is configured.
pub fn fit<T: Element>(
    mut model: Autoencoder<T>,
    cfg: &TrainConfig,
    data: &BonafideSet<T>,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<(Autoencoder<T>, TrainRun)> {
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    let expected = model.config.input_shape(1);
    if data.images[0].shape() != expected {
        return Err(Error::dim(
            "train",
            format!("training images are {}, model expects {expected}", data.images[0].shape()),
        ));
    }
    if let Some(dir) = &cfg.checkpoint_dir {
        fs::create_dir_all(dir)?;
    }

    let base = Rng::new(cfg.seed);
    let mut shuffle_rng = base.fork(SHUFFLE_STREAM);
    let mut dropout_rng = base.fork(DROPOUT_STREAM);
    let mut flip_rng = base.fork(FLIP_STREAM);
    let shapes: Vec<Shape> = model.params.named().iter().map(|(_, t)| t.shape()).collect();
    let mut adam = AdamState::<T>::new(cfg.adam, shapes);
    let mut run = TrainRun {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        seed: cfg.seed,
        steps: 0,
        history: Vec::with_capacity(cfg.epochs),
        best_epoch: None,
    };
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..cfg.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let images: Vec<Tensor<T>> = chunk
                .iter()
                .map(|&i| {
                    let img = &data.images[i];
                    if cfg.hflip && flip_rng.uniform() < 0.5 {
                        hflip(img)
                    } else {
                        img.clone()
                    }
                })
                .collect();
            let batch = Tensor::stack(&images)?;

            let mut g = Graph::new();
            let vars = model.register(&mut g, true);
            let x = g.leaf(batch);
            let recon = vars.forward(&model.config, &mut g, x, true, &mut dropout_rng)?;
            let loss = g.mse_loss(recon, x)?;
            total += g.value(loss).data()[0].to_f64().expect("float") * chunk.len() as f64;
            let grads = g.backward(loss)?;
            let grads: Vec<Option<Tensor<T>>> = vars.named().iter().map(|(_, &v)| grads.get(v).cloned()).collect();
            adam.step(&mut model.params.named_mut(), &grads)?;
            run.steps += 1;
        }
        let mean = total / data.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Usage(format!("training diverged: epoch {} loss is {mean}", epoch + 1)));
        }
        run.history.push(mean);
        on_epoch(epoch + 1, mean);

        if let Some(dir) = &cfg.checkpoint_dir {
            let best = run.best_epoch.is_none_or(|b| mean < run.history[b - 1]);
            if best {
                run.best_epoch = Some(epoch + 1);
                save_checkpoint(&model, dir.join(BEST_CHECKPOINT_FILE))?;
            }
            if cfg.checkpoint_every.is_some_and(|k| k > 0 && (epoch + 1) % k == 0) {
                save_checkpoint(&model, dir.join(CHECKPOINT_FILE))?;
            }
        } else if run.best_epoch.is_none_or(|b| mean < run.history[b - 1]) {
            run.best_epoch = Some(epoch + 1);
        }
    }
    if let Some(dir) = &cfg.checkpoint_dir {
        save_checkpoint(&model, dir.join(CHECKPOINT_FILE))?;
    }
    Ok((model, run))
}
