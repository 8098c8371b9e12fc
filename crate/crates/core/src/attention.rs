//! Convolutional block attention: a channel gate followed by a spatial gate.
//!
//! ```text
//! Mc(X)  = sigmoid(mlp(avgpool_hw(X)) + mlp(maxpool_hw(X)))      n x c x 1 x 1
//! Ms(X)  = sigmoid(conv7x7([avgpool_c(X); maxpool_c(X)]))        n x 1 x h x w
//! X'     = Mc(X)  * X
//! X''    = Ms(X') * X'
//! ```
//!
//! `mlp(v) = W_expand · relu(W_reduce · v + b_r) + b_e` is shared between
//! the two pooled descriptors.

use crate::autograd::{Graph, PoolMode, Var};
use crate::error::{Error, Result};
use crate::params::{join, ParamTree};
use crate::tensor::{Element, Rng, Shape, Tensor};

/// Side length of the spatial-attention kernel.
pub const SPATIAL_KERNEL: usize = 7;

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer<P> {
    /// `f_out x f_in x 1 x 1`
    pub weight: P,
    /// `f_out` entries
    pub bias: P,
}

impl<P> DenseLayer<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> DenseLayer<Q> {
        DenseLayer { weight: f(&self.weight), bias: f(&self.bias) }
    }
}

impl<P> ParamTree<P> for DenseLayer<P> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a P)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut P)) {
        f(join(prefix, "weight"), &mut self.weight);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

/// Shared two-layer MLP of the channel gate.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelAttentionParams<P> {
    /// `c/r x c`
    pub reduce: DenseLayer<P>,
    /// `c x c/r`
    pub expand: DenseLayer<P>,
}

impl<P> ChannelAttentionParams<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> ChannelAttentionParams<Q> {
        ChannelAttentionParams { reduce: self.reduce.map(f), expand: self.expand.map(f) }
    }
}

impl<P> ParamTree<P> for ChannelAttentionParams<P> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a P)) {
        self.reduce.visit(&join(prefix, "reduce"), f);
        self.expand.visit(&join(prefix, "expand"), f);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut P)) {
        self.reduce.visit_mut(&join(prefix, "reduce"), f);
        self.expand.visit_mut(&join(prefix, "expand"), f);
    }
}

fn check_ratio(channels: usize, ratio: usize) -> Result<()> {
    if ratio == 0 || channels == 0 || !channels.is_multiple_of(ratio) {
        return Err(Error::Config(format!(
            "attention reduction ratio {ratio} must be >= 1 and divide the channel count {channels}"
        )));
    }
    Ok(())
}

impl<T: Element> ChannelAttentionParams<Tensor<T>> {
    /// Weights uniform in `±sqrt(1/fan_in)`, biases zero.
    pub fn init(channels: usize, ratio: usize, rng: &mut Rng) -> Result<Self> {
        check_ratio(channels, ratio)?;
        let hidden = channels / ratio;
        let reduce_bound = (1.0 / channels as f64).sqrt();
        let expand_bound = (1.0 / hidden as f64).sqrt();
        Ok(ChannelAttentionParams {
            reduce: DenseLayer {
                weight: Tensor::uniform(Shape::new(hidden, channels, 1, 1), -reduce_bound, reduce_bound, rng),
                bias: Tensor::zeros(Shape::new(hidden, 1, 1, 1)),
            },
            expand: DenseLayer {
                weight: Tensor::uniform(Shape::new(channels, hidden, 1, 1), -expand_bound, expand_bound, rng),
                bias: Tensor::zeros(Shape::new(channels, 1, 1, 1)),
            },
        })
    }

    pub fn zeros(channels: usize, ratio: usize) -> Result<Self> {
        check_ratio(channels, ratio)?;
        let hidden = channels / ratio;
        Ok(ChannelAttentionParams {
            reduce: DenseLayer {
                weight: Tensor::zeros(Shape::new(hidden, channels, 1, 1)),
                bias: Tensor::zeros(Shape::new(hidden, 1, 1, 1)),
            },
            expand: DenseLayer {
                weight: Tensor::zeros(Shape::new(channels, hidden, 1, 1)),
                bias: Tensor::zeros(Shape::new(channels, 1, 1, 1)),
            },
        })
    }

    pub fn channels(&self) -> usize {
        self.reduce.weight.shape().c
    }

    pub fn ratio(&self) -> usize {
        self.channels() / self.reduce.weight.shape().n
    }
}

impl ChannelAttentionParams<Var> {
    /// Channel gate `Mc(X)`, shape `n x c x 1 x 1`.
    pub fn apply<T: Element>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let c = g.value(x).shape().c;
        let expected = g.value(self.reduce.weight).shape().c;
        if c != expected {
            return Err(Error::dim(
                "channel_attention",
                format!("axis C: input has {c} channels, attention expects {expected}"),
            ));
        }
        let avg = g.global_pool(x, PoolMode::Avg);
        let max = g.global_pool(x, PoolMode::Max);
        let a = self.mlp(g, avg)?;
        let m = self.mlp(g, max)?;
        let sum = g.add(a, m)?;
        Ok(g.sigmoid(sum))
    }

    fn mlp<T: Element>(&self, g: &mut Graph<T>, v: Var) -> Result<Var> {
        let h = g.dense(v, self.reduce.weight, Some(self.reduce.bias))?;
        let h = g.relu(h);
        g.dense(h, self.expand.weight, Some(self.expand.bias))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpatialAttentionParams<P> {
    /// `1 x 2 x 7 x 7`: input channels are the avg- and max-pooled maps.
    pub kernel: P,
    /// One entry.
    pub bias: P,
}

impl<P> SpatialAttentionParams<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> SpatialAttentionParams<Q> {
        SpatialAttentionParams { kernel: f(&self.kernel), bias: f(&self.bias) }
    }
}

impl<P> ParamTree<P> for SpatialAttentionParams<P> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a P)) {
        f(join(prefix, "kernel"), &self.kernel);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut P)) {
        f(join(prefix, "kernel"), &mut self.kernel);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

fn spatial_kernel_shape() -> Shape {
    Shape::new(1, 2, SPATIAL_KERNEL, SPATIAL_KERNEL)
}

impl<T: Element> SpatialAttentionParams<Tensor<T>> {
    pub fn init(rng: &mut Rng) -> Self {
        let bound = (1.0 / (2 * SPATIAL_KERNEL * SPATIAL_KERNEL) as f64).sqrt();
        SpatialAttentionParams {
            kernel: Tensor::uniform(spatial_kernel_shape(), -bound, bound, rng),
            bias: Tensor::zeros(Shape::new(1, 1, 1, 1)),
        }
    }

    pub fn zeros() -> Self {
        SpatialAttentionParams {
            kernel: Tensor::zeros(spatial_kernel_shape()),
            bias: Tensor::zeros(Shape::new(1, 1, 1, 1)),
        }
    }
}

impl SpatialAttentionParams<Var> {
    /// Spatial gate `Ms(X)`, shape `n x 1 x h x w`.
    pub fn apply<T: Element>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let avg = g.channel_pool(x, PoolMode::Avg);
        let max = g.channel_pool(x, PoolMode::Max);
        let pooled = g.concat_channels(avg, max)?;
        let logits = g.conv2d(pooled, self.kernel, Some(self.bias), 1, SPATIAL_KERNEL / 2)?;
        Ok(g.sigmoid(logits))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CbamParams<P> {
    pub cam: ChannelAttentionParams<P>,
    pub sam: SpatialAttentionParams<P>,
}

impl<P> CbamParams<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> CbamParams<Q> {
        CbamParams { cam: self.cam.map(f), sam: self.sam.map(f) }
    }
}

impl<P> ParamTree<P> for CbamParams<P> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a P)) {
        self.cam.visit(&join(prefix, "cam"), f);
        self.sam.visit(&join(prefix, "sam"), f);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut P)) {
        self.cam.visit_mut(&join(prefix, "cam"), f);
        self.sam.visit_mut(&join(prefix, "sam"), f);
    }
}

impl<T: Element> CbamParams<Tensor<T>> {
    pub fn init(channels: usize, ratio: usize, rng: &mut Rng) -> Result<Self> {
        Ok(CbamParams {
            cam: ChannelAttentionParams::init(channels, ratio, rng)?,
            sam: SpatialAttentionParams::init(rng),
        })
    }

    /// All-zero weights: both gates output exactly 0.5.
    pub fn zeros(channels: usize, ratio: usize) -> Result<Self> {
        Ok(CbamParams { cam: ChannelAttentionParams::zeros(channels, ratio)?, sam: SpatialAttentionParams::zeros() })
    }

    pub fn register(&self, g: &mut Graph<T>, trainable: bool) -> CbamParams<Var> {
        self.map(&mut |t| if trainable { g.param(t.clone()) } else { g.leaf(t.clone()) })
    }
}

impl CbamParams<Var> {
    /// `X'' = Ms(X') * X'` with `X' = Mc(X) * X`.
    pub fn apply<T: Element>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let mc = self.cam.apply(g, x)?;
        let refined = g.hadamard(x, mc)?;
        let ms = self.sam.apply(g, refined)?;
        g.hadamard(refined, ms)
    }
}

/// Channel gate `Mc(X)` on plain tensors.
pub fn channel_attention<T: Element>(x: &Tensor<T>, p: &ChannelAttentionParams<Tensor<T>>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let p = p.map(&mut |t| g.leaf(t.clone()));
    let xv = g.leaf(x.clone());
    let out = p.apply(&mut g, xv)?;
    Ok(g.take(out))
}

/// Spatial gate `Ms(X)` on plain tensors.
pub fn spatial_attention<T: Element>(x: &Tensor<T>, p: &SpatialAttentionParams<Tensor<T>>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let p = p.map(&mut |t| g.leaf(t.clone()));
    let xv = g.leaf(x.clone());
    let out = p.apply(&mut g, xv)?;
    Ok(g.take(out))
}

/// Full attention block on plain tensors; output shape equals input shape.
pub fn cbam<T: Element>(x: &Tensor<T>, p: &CbamParams<Tensor<T>>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let p = p.register(&mut g, false);
    let xv = g.leaf(x.clone());
    let out = p.apply(&mut g, xv)?;
    Ok(g.take(out))
}
