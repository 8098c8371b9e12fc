use crate::autograd::kernels::{self, ConvGeom};
use crate::error::{Error, Result};
use crate::tensor::{Element, Rng, Shape, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    Avg,
    Max,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    /// `geom` describes the equivalent forward convolution from this op's
    /// output back to its input.
    ConvTranspose2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    Activation {
        input: Var,
        kind: Activation,
    },
    /// Reduces each `h x w` plane. `argmax` holds input offsets for max mode.
    GlobalPool {
        input: Var,
        mode: PoolMode,
        argmax: Vec<usize>,
    },
    /// Reduces across channels at each location.
    ChannelPool {
        input: Var,
        mode: PoolMode,
        argmax: Vec<usize>,
    },
    Dense {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    Hadamard {
        a: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Dropout {
        input: Var,
        mask: Vec<T>,
    },
    Mse {
        a: Var,
        b: Var,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records forward operations in creation order; [`Graph::backward`]
/// replays them in reverse.
///
/// Inputs always precede their consumers, so the node list is its own
/// topological order.
#[derive(Debug, Default)]
pub struct Graph<T: Element = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A constant input; receives no gradient.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A trainable input; [`Graph::backward`] reports its gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Moves a node's value out of the graph.
    pub fn take(mut self, v: Var) -> Tensor<T> {
        self.nodes.swap_remove(v.0).value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    fn any_grad(&self, vars: &[Option<Var>]) -> bool {
        vars.iter().flatten().any(|v| self.nodes[v.0].requires_grad)
    }

    fn check_bias(&self, op: &'static str, bias: Option<Var>, channels: usize) -> Result<()> {
        if let Some(b) = bias {
            let n = self.value(b).numel();
            if n != channels {
                return Err(Error::dim(op, format!("axis C: bias has {n} entries, expected {channels}")));
            }
        }
        Ok(())
    }

    /// 2-D cross-correlation with zero padding.
    ///
    /// `weight` is `cout x cin x k x k`; `bias`, when given, has `cout`
    /// entries.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let xs = self.shape(input);
        let ws = self.shape(weight);
        if ws.h != ws.w {
            return Err(Error::dim("conv2d", format!("kernel must be square, got {}x{}", ws.h, ws.w)));
        }
        if xs.c != ws.c {
            return Err(Error::dim("conv2d", format!("axis C: input has {} channels, weight expects {}", xs.c, ws.c)));
        }
        self.check_bias("conv2d", bias, ws.n)?;
        if stride == 0 {
            return Err(Error::Config("conv2d stride must be >= 1".into()));
        }
        let k = ws.h;
        let out_dim = |len: usize, axis: &str| -> Result<usize> {
            let padded = len + 2 * padding;
            if padded < k {
                return Err(Error::Config(format!(
                    "conv2d: axis {axis} of size {len} with padding {padding} is smaller than kernel {k}"
                )));
            }
            Ok((padded - k) / stride + 1)
        };
        let geom = ConvGeom {
            n: xs.n,
            cin: xs.c,
            ih: xs.h,
            iw: xs.w,
            cout: ws.n,
            oh: out_dim(xs.h, "H")?,
            ow: out_dim(xs.w, "W")?,
            k,
            stride,
            pad: padding,
        };
        let data = kernels::conv_forward(
            self.value(input).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
            geom,
        );
        let value = Tensor::from_parts(Shape::new(geom.n, geom.cout, geom.oh, geom.ow), data);
        let rg = self.any_grad(&[Some(input), Some(weight), bias]);
        Ok(self.push(value, Op::Conv2d { input, weight, bias, geom }, rg))
    }

    /// Transposed convolution: the adjoint of [`Graph::conv2d`] with the same
    /// `(k, stride, padding)`.
    ///
    /// `weight` is `cin x cout x k x k`; the output side is
    /// `(h - 1) * stride - 2 * padding + k`.
    pub fn conv_transpose2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let xs = self.shape(input);
        let ws = self.shape(weight);
        if ws.h != ws.w {
            return Err(Error::dim("conv_transpose2d", format!("kernel must be square, got {}x{}", ws.h, ws.w)));
        }
        if xs.c != ws.n {
            return Err(Error::dim(
                "conv_transpose2d",
                format!("axis C: input has {} channels, weight expects {}", xs.c, ws.n),
            ));
        }
        self.check_bias("conv_transpose2d", bias, ws.c)?;
        if stride == 0 {
            return Err(Error::Config("conv_transpose2d stride must be >= 1".into()));
        }
        let k = ws.h;
        let out_dim = |len: usize, axis: &str| -> Result<usize> {
            let full = (len - 1) * stride + k;
            if full <= 2 * padding {
                return Err(Error::Config(format!("conv_transpose2d: axis {axis} output would be non-positive")));
            }
            Ok(full - 2 * padding)
        };
        let geom = ConvGeom {
            n: xs.n,
            cin: ws.c,
            ih: out_dim(xs.h, "H")?,
            iw: out_dim(xs.w, "W")?,
            cout: xs.c,
            oh: xs.h,
            ow: xs.w,
            k,
            stride,
            pad: padding,
        };
        let mut data = kernels::conv_backward_data(self.value(input).data(), self.value(weight).data(), geom);
        if let Some(b) = bias {
            let plane = geom.ih * geom.iw;
            let bv = self.value(b).data();
            for (idx, chunk) in data.chunks_mut(plane).enumerate() {
                let bias = bv[idx % geom.cin];
                chunk.iter_mut().for_each(|v| *v = *v + bias);
            }
        }
        let value = Tensor::from_parts(Shape::new(geom.n, geom.cin, geom.ih, geom.iw), data);
        let rg = self.any_grad(&[Some(input), Some(weight), bias]);
        Ok(self.push(value, Op::ConvTranspose2d { input, weight, bias, geom }, rg))
    }

    pub fn activation(&mut self, input: Var, kind: Activation) -> Var {
        let value = match kind {
            Activation::Relu => self.value(input).map(|v| v.max(T::zero())),
            Activation::Sigmoid => self.value(input).map(kernels::sigmoid),
        };
        let rg = self.requires_grad(input);
        self.push(value, Op::Activation { input, kind }, rg)
    }

    pub fn relu(&mut self, input: Var) -> Var {
        self.activation(input, Activation::Relu)
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        self.activation(input, Activation::Sigmoid)
    }

    /// Reduces every `h x w` plane to one value: `n x c x 1 x 1`.
    pub fn global_pool(&mut self, input: Var, mode: PoolMode) -> Var {
        let x = self.value(input);
        let s = x.shape();
        let plane = s.plane();
        let mut out = Vec::with_capacity(s.n * s.c);
        let mut argmax = Vec::new();
        for (i, p) in x.data().chunks(plane).enumerate() {
            match mode {
                PoolMode::Avg => {
                    out.push(p.iter().copied().sum::<T>() / T::from_usize(plane).unwrap());
                }
                PoolMode::Max => {
                    let (j, m) = first_max(p);
                    out.push(m);
                    argmax.push(i * plane + j);
                }
            }
        }
        let value = Tensor::from_parts(Shape::new(s.n, s.c, 1, 1), out);
        let rg = self.requires_grad(input);
        self.push(value, Op::GlobalPool { input, mode, argmax }, rg)
    }

    /// Reduces across channels at each location: `n x 1 x h x w`.
    pub fn channel_pool(&mut self, input: Var, mode: PoolMode) -> Var {
        let x = self.value(input);
        let s = x.shape();
        let plane = s.plane();
        let mut out = Vec::with_capacity(s.n * plane);
        let mut argmax = Vec::new();
        let inv_c = T::one() / T::from_usize(s.c).unwrap();
        for n in 0..s.n {
            let base = n * s.c * plane;
            for loc in 0..plane {
                match mode {
                    PoolMode::Avg => {
                        let sum: T = (0..s.c).map(|c| x.data()[base + c * plane + loc]).sum();
                        out.push(sum * inv_c);
                    }
                    PoolMode::Max => {
                        let mut best = base + loc;
                        for c in 1..s.c {
                            let o = base + c * plane + loc;
                            if x.data()[o] > x.data()[best] {
                                best = o;
                            }
                        }
                        out.push(x.data()[best]);
                        argmax.push(best);
                    }
                }
            }
        }
        let value = Tensor::from_parts(Shape::new(s.n, 1, s.h, s.w), out);
        let rg = self.requires_grad(input);
        self.push(value, Op::ChannelPool { input, mode, argmax }, rg)
    }

    /// Affine map over each batch item flattened to `f = c*h*w` features.
    ///
    /// `weight` is `f_out x f x 1 x 1`, the output `n x f_out x 1 x 1`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let xs = self.shape(input);
        let ws = self.shape(weight);
        let f = xs.sample_len();
        if ws.sample_len() != f {
            return Err(Error::dim(
                "dense",
                format!("axis F: input has {f} features, weight expects {}", ws.sample_len()),
            ));
        }
        self.check_bias("dense", bias, ws.n)?;
        let (x, w) = (self.value(input).data(), self.value(weight).data());
        let bv = bias.map(|b| self.value(b).data());
        let mut out = Vec::with_capacity(xs.n * ws.n);
        for row in x.chunks(f) {
            for (o, wr) in w.chunks(f).enumerate() {
                let mut acc = bv.map_or(T::zero(), |b| b[o]);
                for (&a, &b) in row.iter().zip(wr) {
                    acc = acc + a * b;
                }
                out.push(acc);
            }
        }
        let value = Tensor::from_parts(Shape::new(xs.n, ws.n, 1, 1), out);
        let rg = self.any_grad(&[Some(input), Some(weight), bias]);
        Ok(self.push(value, Op::Dense { input, weight, bias }, rg))
    }

    /// Elementwise product. `b` may equal `a`'s shape, or broadcast as
    /// `n x c x 1 x 1` (per-channel) or `n x 1 x h x w` (per-location).
    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let index = broadcast_index(sa, sb)?;
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let data = (0..sa.numel()).map(|i| av[i] * bv[index(i)]).collect();
        let value = Tensor::from_parts(sa, data);
        let rg = self.any_grad(&[Some(a), Some(b)]);
        Ok(self.push(value, Op::Hadamard { a, b }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::dim("add", format!("{sa} vs {sb}")));
        }
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x + y).collect();
        let rg = self.any_grad(&[Some(a), Some(b)]);
        Ok(self.push(Tensor::from_parts(sa, data), Op::Add { a, b }, rg))
    }

    /// Channels of `a` followed by channels of `b`.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        for (axis, x, y) in [("N", sa.n, sb.n), ("H", sa.h, sb.h), ("W", sa.w, sb.w)] {
            if x != y {
                return Err(Error::dim("concat_channels", format!("axis {axis}: {x} vs {y}")));
            }
        }
        let (la, lb) = (sa.sample_len(), sb.sample_len());
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(sa.numel() + sb.numel());
        for n in 0..sa.n {
            data.extend_from_slice(&av[n * la..][..la]);
            data.extend_from_slice(&bv[n * lb..][..lb]);
        }
        let value = Tensor::from_parts(Shape::new(sa.n, sa.c + sb.c, sa.h, sa.w), data);
        let rg = self.any_grad(&[Some(a), Some(b)]);
        Ok(self.push(value, Op::Concat { a, b }, rg))
    }

    /// Inverted dropout: in training each element is zeroed with probability
    /// `rate` and survivors are scaled by `1 / (1 - rate)`. Identity otherwise.
    pub fn dropout(&mut self, input: Var, rate: f64, training: bool, rng: &mut Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate must lie in [0, 1), got {rate}")));
        }
        let rg = self.requires_grad(input);
        if !training || rate == 0.0 {
            let value = self.value(input).clone();
            let mask = Vec::new();
            return Ok(self.push(value, Op::Dropout { input, mask }, rg));
        }
        let keep = T::from_f64_lossy(1.0 / (1.0 - rate));
        let x = self.value(input);
        let mask: Vec<T> = (0..x.numel()).map(|_| if rng.uniform() < rate { T::zero() } else { keep }).collect();
        let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let value = Tensor::from_parts(x.shape(), data);
        Ok(self.push(value, Op::Dropout { input, mask }, rg))
    }

    /// Mean over all elements of `(a - b)^2`, as a `1 x 1 x 1 x 1` tensor.
    pub fn mse_loss(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::dim("mse_loss", format!("{sa} vs {sb}")));
        }
        let v = kernels::mean_squared_error(self.value(a).data(), self.value(b).data());
        let rg = self.any_grad(&[Some(a), Some(b)]);
        Ok(self.push(Tensor::scalar(v), Op::Mse { a, b }, rg))
    }

    /// Fingerprint of every non-differentiable branch taken in the forward
    /// pass: relu signs and max-pool winners. Two evaluations with equal
    /// patterns lie on the same smooth piece of the function.
    pub fn branch_pattern(&self) -> Vec<usize> {
        let mut pattern = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Activation { input, kind: Activation::Relu } => {
                    pattern.extend(self.value(*input).data().iter().map(|&v| usize::from(v > T::zero())));
                }
                Op::GlobalPool { argmax, .. } | Op::ChannelPool { argmax, .. } => pattern.extend_from_slice(argmax),
                _ => {}
            }
        }
        pattern
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let loss_shape = self.shape(loss);
        if loss_shape.numel() != 1 {
            return Err(Error::Usage(format!("backward needs a scalar loss, got shape {loss_shape}")));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(node, &g, &mut grads);
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        let leaves = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| match node.op {
                Op::Leaf if node.requires_grad => g.map(|d| Tensor::from_parts(node.value.shape(), d)),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads: leaves, shapes })
    }

    fn backward_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { input, weight, bias, geom } => {
                if wants(*input) {
                    let gx = kernels::conv_backward_data(g, self.value(*weight).data(), *geom);
                    accumulate(grads, *input, gx);
                }
                if wants(*weight) {
                    let gw = kernels::conv_backward_filter(self.value(*input).data(), g, *geom);
                    accumulate(grads, *weight, gw);
                }
                if let Some(b) = bias.filter(|b| wants(*b)) {
                    accumulate(grads, b, kernels::channel_sums(g, geom.n, geom.cout, geom.oh * geom.ow));
                }
            }
            Op::ConvTranspose2d { input, weight, bias, geom } => {
                if wants(*input) {
                    let gx = kernels::conv_forward(g, self.value(*weight).data(), None, *geom);
                    accumulate(grads, *input, gx);
                }
                if wants(*weight) {
                    let gw = kernels::conv_backward_filter(g, self.value(*input).data(), *geom);
                    accumulate(grads, *weight, gw);
                }
                if let Some(b) = bias.filter(|b| wants(*b)) {
                    accumulate(grads, b, kernels::channel_sums(g, geom.n, geom.cin, geom.ih * geom.iw));
                }
            }
            Op::Activation { input, kind } => {
                let gx = match kind {
                    Activation::Relu => self
                        .value(*input)
                        .data()
                        .iter()
                        .zip(g)
                        .map(|(&x, &d)| if x > T::zero() { d } else { T::zero() })
                        .collect(),
                    Activation::Sigmoid => {
                        node.value.data().iter().zip(g).map(|(&y, &d)| d * y * (T::one() - y)).collect()
                    }
                };
                accumulate(grads, *input, gx);
            }
            Op::GlobalPool { input, mode, argmax } => {
                let s = self.shape(*input);
                let plane = s.plane();
                let mut gx = vec![T::zero(); s.numel()];
                match mode {
                    PoolMode::Avg => {
                        let inv = T::one() / T::from_usize(plane).unwrap();
                        for (i, chunk) in gx.chunks_mut(plane).enumerate() {
                            chunk.fill(g[i] * inv);
                        }
                    }
                    PoolMode::Max => {
                        for (&o, &d) in argmax.iter().zip(g) {
                            gx[o] = gx[o] + d;
                        }
                    }
                }
                accumulate(grads, *input, gx);
            }
            Op::ChannelPool { input, mode, argmax } => {
                let s = self.shape(*input);
                let plane = s.plane();
                let mut gx = vec![T::zero(); s.numel()];
                match mode {
                    PoolMode::Avg => {
                        let inv = T::one() / T::from_usize(s.c).unwrap();
                        for n in 0..s.n {
                            for c in 0..s.c {
                                for loc in 0..plane {
                                    gx[(n * s.c + c) * plane + loc] = g[n * plane + loc] * inv;
                                }
                            }
                        }
                    }
                    PoolMode::Max => {
                        for (&o, &d) in argmax.iter().zip(g) {
                            gx[o] = gx[o] + d;
                        }
                    }
                }
                accumulate(grads, *input, gx);
            }
            Op::Dense { input, weight, bias } => {
                let xs = self.shape(*input);
                let f = xs.sample_len();
                let fout = self.shape(*weight).n;
                let x = self.value(*input).data();
                let w = self.value(*weight).data();
                if wants(*input) {
                    let mut gx = vec![T::zero(); xs.numel()];
                    for n in 0..xs.n {
                        let gx_row = &mut gx[n * f..][..f];
                        for o in 0..fout {
                            let d = g[n * fout + o];
                            for (gxv, &wv) in gx_row.iter_mut().zip(&w[o * f..][..f]) {
                                *gxv = *gxv + d * wv;
                            }
                        }
                    }
                    accumulate(grads, *input, gx);
                }
                if wants(*weight) {
                    let mut gw = vec![T::zero(); fout * f];
                    for n in 0..xs.n {
                        let xr = &x[n * f..][..f];
                        for o in 0..fout {
                            let d = g[n * fout + o];
                            for (gwv, &xv) in gw[o * f..][..f].iter_mut().zip(xr) {
                                *gwv = *gwv + d * xv;
                            }
                        }
                    }
                    accumulate(grads, *weight, gw);
                }
                if let Some(b) = bias.filter(|b| wants(*b)) {
                    accumulate(grads, b, kernels::channel_sums(g, xs.n, fout, 1));
                }
            }
            Op::Hadamard { a, b } => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let index = broadcast_index(sa, sb).expect("validated in forward");
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if wants(*a) {
                    let ga = (0..sa.numel()).map(|i| g[i] * bv[index(i)]).collect();
                    accumulate(grads, *a, ga);
                }
                if wants(*b) {
                    let mut gb = vec![T::zero(); sb.numel()];
                    for i in 0..sa.numel() {
                        let j = index(i);
                        gb[j] = gb[j] + g[i] * av[i];
                    }
                    accumulate(grads, *b, gb);
                }
            }
            Op::Add { a, b } => {
                if wants(*a) {
                    accumulate(grads, *a, g.to_vec());
                }
                if wants(*b) {
                    accumulate(grads, *b, g.to_vec());
                }
            }
            Op::Concat { a, b } => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (la, lb) = (sa.sample_len(), sb.sample_len());
                let mut ga = Vec::with_capacity(sa.numel());
                let mut gb = Vec::with_capacity(sb.numel());
                for row in g.chunks(la + lb) {
                    ga.extend_from_slice(&row[..la]);
                    gb.extend_from_slice(&row[la..]);
                }
                if wants(*a) {
                    accumulate(grads, *a, ga);
                }
                if wants(*b) {
                    accumulate(grads, *b, gb);
                }
            }
            Op::Dropout { input, mask } => {
                let gx = if mask.is_empty() { g.to_vec() } else { g.iter().zip(mask).map(|(&d, &m)| d * m).collect() };
                accumulate(grads, *input, gx);
            }
            Op::Mse { a, b } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let scale = g[0] * T::from_f64_lossy(2.0) / T::from_usize(av.len()).unwrap();
                let diff: Vec<T> = av.iter().zip(bv).map(|(&x, &y)| (x - y) * scale).collect();
                if wants(*b) {
                    accumulate(grads, *b, diff.iter().map(|&d| -d).collect());
                }
                if wants(*a) {
                    accumulate(grads, *a, diff);
                }
            }
        }
    }
}

fn first_max<T: Element>(p: &[T]) -> (usize, T) {
    let mut best = 0;
    for (j, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = j;
        }
    }
    (best, p[best])
}

fn accumulate<T: Element>(grads: &mut [Option<Vec<T>>], v: Var, delta: Vec<T>) {
    match &mut grads[v.0] {
        Some(acc) => acc.iter_mut().zip(delta).for_each(|(a, d)| *a = *a + d),
        slot @ None => *slot = Some(delta),
    }
}

/// Maps a flat index of `a`'s shape to the matching index of the
/// broadcast operand `b`.
fn broadcast_index(sa: Shape, sb: Shape) -> Result<Box<dyn Fn(usize) -> usize>> {
    if sa == sb {
        return Ok(Box::new(|i| i));
    }
    if sb.n != sa.n {
        return Err(Error::dim("hadamard", format!("axis N: {} vs {}", sa.n, sb.n)));
    }
    let plane = sa.plane();
    if (sb.c, sb.h, sb.w) == (sa.c, 1, 1) {
        return Ok(Box::new(move |i| i / plane));
    }
    if (sb.c, sb.h, sb.w) == (1, sa.h, sa.w) {
        let per_sample = sa.sample_len();
        return Ok(Box::new(move |i| (i / per_sample) * plane + i % plane));
    }
    Err(Error::dim("hadamard", format!("{sb} does not broadcast against {sa}")))
}

/// Gradients of a scalar with respect to every trainable leaf.
#[derive(Debug)]
pub struct Gradients<T: Element> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Shape>,
}

impl<T: Element> Gradients<T> {
    /// Gradient for `v`, or `None` if `v` is not a trainable leaf reached by
    /// the sweep.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    /// Gradient for `v`; zero when `v` did not participate in the loss.
    pub fn wrt(&self, v: Var) -> Tensor<T> {
        self.grads[v.0].clone().unwrap_or_else(|| Tensor::zeros(self.shapes[v.0]))
    }
}
