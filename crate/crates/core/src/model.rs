//! The attention autoencoder.
//!
//! Encoder stage `i` is `conv(k, stride, padding) -> relu -> cbam -> dropout`
//! and halves the spatial size at the default geometry. The decoder mirrors
//! stages `depth-1 .. 1` with transposed convolutions; the head is one more
//! transposed convolution back to the input channels followed by a sigmoid,
//! so both halves carry `depth` convolutions.

use serde::{Deserialize, Serialize};

use crate::attention::CbamParams;
use crate::autograd::{kernels, Graph, Var};
use crate::error::{Error, Result};
use crate::params::{join, ParamTree};
use crate::tensor::{Element, Rng, Shape, Tensor};

/// Missing fields in serialized form take the [`ModelConfig::desk`] values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub input_channels: usize,
    /// Height and width of the (square) input.
    pub input_size: usize,
    pub depth: usize,
    pub base_channels: usize,
    /// Per-stage output channels. Empty means `base_channels` doubled at
    /// every stage.
    pub channel_schedule: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub dropout_rate: f64,
    pub attention_ratio: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// Full-resolution geometry: 256x256 RGB, five stages from 128 to 2048
    /// channels.
    pub fn full_scale() -> Self {
        ModelConfig {
            input_channels: 3,
            input_size: 256,
            depth: 5,
            base_channels: 128,
            channel_schedule: Vec::new(),
            kernel: 4,
            stride: 2,
            padding: 1,
            dropout_rate: 0.5,
            attention_ratio: 8,
            seed: 0,
        }
    }

    /// Desk-scale default: 64x64 input, 8 to 128 channels.
    pub fn desk() -> Self {
        ModelConfig { input_size: 64, base_channels: 8, ..Self::full_scale() }
    }

    pub fn schedule(&self) -> Vec<usize> {
        if self.channel_schedule.is_empty() {
            (0..self.depth).map(|i| self.base_channels << i).collect()
        } else {
            self.channel_schedule.clone()
        }
    }

    pub fn input_shape(&self, batch: usize) -> Shape {
        Shape::new(batch, self.input_channels, self.input_size, self.input_size)
    }

    /// Spatial side after each encoder stage.
    pub fn stage_sizes(&self) -> Vec<usize> {
        let mut size = self.input_size;
        (0..self.depth)
            .map(|_| {
                size = (size + 2 * self.padding - self.kernel) / self.stride + 1;
                size
            })
            .collect()
    }

    pub fn latent_shape(&self) -> Shape {
        let side = self.stage_sizes().last().copied().unwrap_or(self.input_size);
        let c = self.schedule().last().copied().unwrap_or(self.input_channels);
        Shape::new(1, c, side, side)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.input_channels == 0 {
            return fail("input_channels must be >= 1".into());
        }
        if self.depth == 0 {
            return fail("depth must be >= 1".into());
        }
        if !self.input_size.is_power_of_two() {
            return fail(format!("input_size {} must be a power of two", self.input_size));
        }
        if self.kernel == 0 || self.stride == 0 {
            return fail("kernel and stride must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail(format!("dropout_rate {} must lie in [0, 1)", self.dropout_rate));
        }
        let step = self.stride.checked_pow(self.depth as u32).unwrap_or(usize::MAX);
        if !self.input_size.is_multiple_of(step) {
            return fail(format!("input_size {} must be divisible by stride^depth = {step}", self.input_size));
        }
        let schedule = self.schedule();
        if schedule.len() != self.depth {
            return fail(format!("channel_schedule has {} entries, depth is {}", schedule.len(), self.depth));
        }
        for (i, &c) in schedule.iter().enumerate() {
            if self.attention_ratio == 0 || c == 0 || c % self.attention_ratio != 0 {
                return fail(format!(
                    "stage {i}: channel count {c} is not divisible by attention_ratio {}",
                    self.attention_ratio
                ));
            }
        }
        let mut size = self.input_size;
        for i in 0..self.depth {
            let padded = size + 2 * self.padding;
            if padded < self.kernel || !(padded - self.kernel).is_multiple_of(self.stride) {
                return fail(format!(
                    "stage {i}: size {size} with kernel {} stride {} padding {} does not tile exactly, \
                     so the decoder cannot mirror it",
                    self.kernel, self.stride, self.padding
                ));
            }
            size = (padded - self.kernel) / self.stride + 1;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<P> {
    /// `cout x cin x k x k` for a convolution, `cin x cout x k x k` for a
    /// transposed convolution.
    pub weight: P,
    pub bias: P,
}

impl<P> ConvLayer<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> ConvLayer<Q> {
        ConvLayer { weight: f(&self.weight), bias: f(&self.bias) }
    }
}

impl<P> ParamTree<P> for ConvLayer<P> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a P)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut P)) {
        f(join(prefix, "weight"), &mut self.weight);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage<P> {
    pub conv: ConvLayer<P>,
    pub cbam: CbamParams<P>,
}

impl<P> Stage<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> Stage<Q> {
        Stage { conv: self.conv.map(f), cbam: self.cbam.map(f) }
    }
}

impl<P> ParamTree<P> for Stage<P> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a P)) {
        self.conv.visit(&join(prefix, "conv"), f);
        self.cbam.visit(&join(prefix, "cbam"), f);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut P)) {
        self.conv.visit_mut(&join(prefix, "conv"), f);
        self.cbam.visit_mut(&join(prefix, "cbam"), f);
    }
}

/// Every trainable tensor of the autoencoder, in canonical order.
#[derive(Clone, Debug, PartialEq)]
pub struct AutoencoderParams<P> {
    pub encoder: Vec<Stage<P>>,
    pub decoder: Vec<Stage<P>>,
    pub head: ConvLayer<P>,
}

impl<P> AutoencoderParams<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> AutoencoderParams<Q> {
        AutoencoderParams {
            encoder: self.encoder.iter().map(|s| s.map(f)).collect(),
            decoder: self.decoder.iter().map(|s| s.map(f)).collect(),
            head: self.head.map(f),
        }
    }

    /// Same structure, slots filled from `values` in canonical order.
    pub fn refill<Q>(&self, values: impl IntoIterator<Item = Q>) -> Result<AutoencoderParams<Q>> {
        let mut it = values.into_iter();
        let mut missing = false;
        let mut slots = Vec::new();
        let _ = self.map(&mut |_| match it.next() {
            Some(v) => slots.push(Some(v)),
            None => missing = true,
        });
        if missing || it.next().is_some() {
            return Err(Error::Usage("value count does not match the parameter count".into()));
        }
        let mut slots = slots.into_iter();
        Ok(self.map(&mut |_| slots.next().flatten().expect("counted above")))
    }
}

impl<P> ParamTree<P> for AutoencoderParams<P> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a P)) {
        for (i, s) in self.encoder.iter().enumerate() {
            s.visit(&join(prefix, &format!("encoder.{i}")), f);
        }
        for (i, s) in self.decoder.iter().enumerate() {
            s.visit(&join(prefix, &format!("decoder.{i}")), f);
        }
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut P)) {
        for (i, s) in self.encoder.iter_mut().enumerate() {
            s.visit_mut(&join(prefix, &format!("encoder.{i}")), f);
        }
        for (i, s) in self.decoder.iter_mut().enumerate() {
            s.visit_mut(&join(prefix, &format!("decoder.{i}")), f);
        }
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}

impl AutoencoderParams<Var> {
    /// Records a full forward pass and returns the reconstruction node.
    pub fn forward<T: Element>(
        &self,
        cfg: &ModelConfig,
        g: &mut Graph<T>,
        x: Var,
        training: bool,
        rng: &mut Rng,
    ) -> Result<Var> {
        let (s, p) = (cfg.stride, cfg.padding);
        let mut h = x;
        for stage in &self.encoder {
            h = g.conv2d(h, stage.conv.weight, Some(stage.conv.bias), s, p)?;
            h = g.relu(h);
            h = stage.cbam.apply(g, h)?;
            h = g.dropout(h, cfg.dropout_rate, training, rng)?;
        }
        for stage in &self.decoder {
            h = g.conv_transpose2d(h, stage.conv.weight, Some(stage.conv.bias), s, p)?;
            h = g.relu(h);
            h = stage.cbam.apply(g, h)?;
            h = g.dropout(h, cfg.dropout_rate, training, rng)?;
        }
        h = g.conv_transpose2d(h, self.head.weight, Some(self.head.bias), s, p)?;
        Ok(g.sigmoid(h))
    }
}

fn conv_layer<T: Element>(weight_shape: Shape, fan_in: usize, bias_len: usize, rng: &mut Rng) -> ConvLayer<Tensor<T>> {
    let bound = (1.0 / fan_in as f64).sqrt();
    ConvLayer {
        weight: Tensor::uniform(weight_shape, -bound, bound, rng),
        bias: Tensor::zeros(Shape::new(bias_len, 1, 1, 1)),
    }
}

/// A configured autoencoder with its weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Autoencoder<T: Element = f32> {
    pub config: ModelConfig,
    pub params: AutoencoderParams<Tensor<T>>,
}

/// Builds freshly initialised weights for `cfg`: uniform in
/// `±sqrt(1/fan_in)`, biases zero, drawn from `rng` in canonical order.
pub fn build_model<T: Element>(cfg: &ModelConfig, rng: &mut Rng) -> Result<Autoencoder<T>> {
    cfg.validate()?;
    let k = cfg.kernel;
    let schedule = cfg.schedule();
    let mut encoder = Vec::with_capacity(cfg.depth);
    let mut cin = cfg.input_channels;
    for &cout in &schedule {
        let conv = conv_layer(Shape::new(cout, cin, k, k), cin * k * k, cout, rng);
        let cbam = CbamParams::init(cout, cfg.attention_ratio, rng)?;
        encoder.push(Stage { conv, cbam });
        cin = cout;
    }
    // Each transposed-conv output sees ceil(k/stride)^2 taps per input channel.
    let taps = k.div_ceil(cfg.stride).pow(2);
    let mut decoder = Vec::with_capacity(cfg.depth.saturating_sub(1));
    for i in (1..cfg.depth).rev() {
        let (cin, cout) = (schedule[i], schedule[i - 1]);
        let conv = conv_layer(Shape::new(cin, cout, k, k), cin * taps, cout, rng);
        let cbam = CbamParams::init(cout, cfg.attention_ratio, rng)?;
        decoder.push(Stage { conv, cbam });
    }
    let head =
        conv_layer(Shape::new(schedule[0], cfg.input_channels, k, k), schedule[0] * taps, cfg.input_channels, rng);
    Ok(Autoencoder { config: cfg.clone(), params: AutoencoderParams { encoder, decoder, head } })
}

impl<T: Element> Autoencoder<T> {
    /// Builds with an RNG seeded from `cfg.seed`.
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        build_model(cfg, &mut Rng::new(cfg.seed))
    }

    pub fn parameter_count(&self) -> usize {
        self.params.named().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn register(&self, g: &mut Graph<T>, trainable: bool) -> AutoencoderParams<Var> {
        self.params.map(&mut |t| if trainable { g.param(t.clone()) } else { g.leaf(t.clone()) })
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let s = x.shape();
        let want = self.config.input_shape(s.n);
        if s != want {
            return Err(Error::dim("forward", format!("input {s} does not match model input {want}")));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor<T>, training: bool, rng: &mut Rng) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut g = Graph::new();
        let p = self.register(&mut g, false);
        let xv = g.leaf(x.clone());
        let out = p.forward(&self.config, &mut g, xv, training, rng)?;
        Ok(g.take(out))
    }

    /// Inference-mode reconstruction.
    pub fn reconstruct(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        // Dropout is inactive at inference, so the generator is never drawn.
        self.forward(x, false, &mut Rng::new(0))
    }

    /// Per-image mean squared reconstruction error, one entry per batch item.
    pub fn reconstruction_scores(&self, x: &Tensor<T>) -> Result<Vec<f64>> {
        let recon = self.reconstruct(x)?;
        let len = x.shape().sample_len();
        Ok(x.data()
            .chunks(len)
            .zip(recon.data().chunks(len))
            .map(|(a, b)| kernels::mean_squared_error(a, b).to_f64().expect("float"))
            .collect())
    }

    pub fn cast<U: Element>(&self) -> Autoencoder<U> {
        Autoencoder { config: self.config.clone(), params: self.params.map(&mut |t| t.cast()) }
    }
}
