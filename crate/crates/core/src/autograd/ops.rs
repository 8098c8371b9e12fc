//! Single-op tensor functions. Each builds a throwaway [`Graph`] so the
//! forward path is exactly the one used during training.

use crate::autograd::graph::{Activation, Graph, PoolMode};
use crate::error::Result;
use crate::tensor::{Element, Rng, Tensor};

pub fn conv2d<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let (x, w) = (g.leaf(input.clone()), g.leaf(weight.clone()));
    let b = bias.map(|b| g.leaf(b.clone()));
    let y = g.conv2d(x, w, b, stride, padding)?;
    Ok(g.take(y))
}

pub fn conv_transpose2d<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let (x, w) = (g.leaf(input.clone()), g.leaf(weight.clone()));
    let b = bias.map(|b| g.leaf(b.clone()));
    let y = g.conv_transpose2d(x, w, b, stride, padding)?;
    Ok(g.take(y))
}

pub fn activation<T: Element>(input: &Tensor<T>, kind: Activation) -> Tensor<T> {
    let mut g = Graph::new();
    let x = g.leaf(input.clone());
    let y = g.activation(x, kind);
    g.take(y)
}

pub fn pool_spatial_global<T: Element>(input: &Tensor<T>, mode: PoolMode) -> Tensor<T> {
    let mut g = Graph::new();
    let x = g.leaf(input.clone());
    let y = g.global_pool(x, mode);
    g.take(y)
}

pub fn pool_channels<T: Element>(input: &Tensor<T>, mode: PoolMode) -> Tensor<T> {
    let mut g = Graph::new();
    let x = g.leaf(input.clone());
    let y = g.channel_pool(x, mode);
    g.take(y)
}

pub fn dense<T: Element>(input: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let (x, w) = (g.leaf(input.clone()), g.leaf(weight.clone()));
    let b = bias.map(|b| g.leaf(b.clone()));
    let y = g.dense(x, w, b)?;
    Ok(g.take(y))
}

pub fn hadamard<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let (a, b) = (g.leaf(a.clone()), g.leaf(b.clone()));
    let y = g.hadamard(a, b)?;
    Ok(g.take(y))
}

pub fn concat_channels<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let (a, b) = (g.leaf(a.clone()), g.leaf(b.clone()));
    let y = g.concat_channels(a, b)?;
    Ok(g.take(y))
}

pub fn dropout<T: Element>(input: &Tensor<T>, rate: f64, training: bool, rng: &mut Rng) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let x = g.leaf(input.clone());
    let y = g.dropout(x, rate, training, rng)?;
    Ok(g.take(y))
}

pub fn mse_loss<T: Element>(x: &Tensor<T>, reconstruction: &Tensor<T>) -> Result<T> {
    let mut g = Graph::new();
    let (a, b) = (g.leaf(x.clone()), g.leaf(reconstruction.clone()));
    let y = g.mse_loss(a, b)?;
    Ok(g.value(y).data()[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::tensor::Shape;

    fn rand_t(shape: Shape, seed: u64) -> Tensor<f64> {
        Tensor::uniform(shape, -1.0, 1.0, &mut Rng::new(seed))
    }

    /// Direct nested-loop convolution with explicit zero padding.
    fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, s: usize, p: usize) -> Tensor<f64> {
        let (xs, ws) = (x.shape(), w.shape());
        let k = ws.h;
        let oh = (xs.h + 2 * p - k) / s + 1;
        let ow = (xs.w + 2 * p - k) / s + 1;
        Tensor::from_fn(Shape::new(xs.n, ws.n, oh, ow), |n, co, oy, ox| {
            let mut acc = 0.0;
            for ci in 0..xs.c {
                for kh in 0..k {
                    for kw in 0..k {
                        let iy = (oy * s + kh) as isize - p as isize;
                        let ix = (ox * s + kw) as isize - p as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < xs.h && (ix as usize) < xs.w {
                            acc += w.at(co, ci, kh, kw) * x.at(n, ci, iy as usize, ix as usize);
                        }
                    }
                }
            }
            acc
        })
    }

    /// Materialises conv2d as a dense matrix by pushing unit vectors through
    /// the oracle.
    fn conv_matrix(in_shape: Shape, w: &Tensor<f64>, s: usize, p: usize) -> (Vec<Vec<f64>>, Shape) {
        let mut cols = Vec::new();
        let mut out_shape = None;
        for i in 0..in_shape.numel() {
            let mut e = Tensor::zeros(in_shape);
            e.data_mut()[i] = 1.0;
            let y = conv_oracle(&e, w, s, p);
            out_shape = Some(y.shape());
            cols.push(y.into_data());
        }
        (cols, out_shape.unwrap())
    }

    #[test]
    fn conv2d_identity_kernel() {
        let x = Tensor::<f64>::scalar(0.37);
        let w = Tensor::scalar(1.0);
        let y = conv2d(&x, &w, Some(&Tensor::vector(vec![0.0]).unwrap()), 1, 0).unwrap();
        assert_eq!(y.data(), &[0.37]);
    }

    #[test]
    fn conv2d_stride_two_geometry_halves_input() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 3, 256, 256));
        let w = Tensor::<f32>::zeros(Shape::new(8, 3, 4, 4));
        assert_eq!(conv2d(&x, &w, None, 2, 1).unwrap().shape(), Shape::new(1, 8, 128, 128));
    }

    #[test]
    fn conv2d_ones_kernel_on_ramp() {
        let x = Tensor::<f64>::new(Shape::new(1, 1, 4, 4), (1..=16).map(f64::from).collect()).unwrap();
        let w = Tensor::full(Shape::new(1, 1, 4, 4), 1.0);
        let expect = conv_oracle(&x, &w, 2, 1);
        // Each output sums the in-bounds 3x3 corner of its padded 4x4 window.
        assert_eq!(expect.data(), &[54.0, 63.0, 90.0, 99.0]);
        assert_eq!(conv2d(&x, &w, None, 2, 1).unwrap(), expect);
    }

    #[test]
    fn conv2d_matches_oracle_on_random_shapes() {
        for (i, &(c, h, co, k, s, p)) in
            [(2, 7, 3, 3, 1, 1), (3, 8, 2, 4, 2, 1), (1, 9, 4, 4, 3, 0), (2, 6, 1, 7, 1, 3)].iter().enumerate()
        {
            let x = rand_t(Shape::new(2, c, h, h + 1), 10 + i as u64);
            let w = rand_t(Shape::new(co, c, k, k), 20 + i as u64);
            let got = conv2d(&x, &w, None, s, p).unwrap();
            let expect = conv_oracle(&x, &w, s, p);
            assert_eq!(got.shape(), expect.shape());
            for (a, b) in got.data().iter().zip(expect.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv2d_shape_errors() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 2, 4, 4));
        let w = Tensor::<f32>::zeros(Shape::new(1, 3, 3, 3));
        match conv2d(&x, &w, None, 1, 0) {
            Err(Error::Dimension { detail, .. }) => assert!(detail.contains("axis C")),
            other => panic!("{other:?}"),
        }
        let w = Tensor::<f32>::zeros(Shape::new(1, 2, 7, 7));
        assert!(matches!(conv2d(&x, &w, None, 1, 0), Err(Error::Config(_))));
    }

    #[test]
    fn conv_transpose_identity_and_shape() {
        let y = conv_transpose2d(&Tensor::<f64>::scalar(-2.5), &Tensor::scalar(1.0), None, 1, 0).unwrap();
        assert_eq!(y.data(), &[-2.5]);
        let x = Tensor::<f32>::zeros(Shape::new(1, 6, 8, 8));
        let w = Tensor::<f32>::zeros(Shape::new(6, 4, 4, 4));
        assert_eq!(conv_transpose2d(&x, &w, None, 2, 1).unwrap().shape(), Shape::new(1, 4, 16, 16));
    }

    #[test]
    fn conv_transpose_is_matrix_transpose_of_conv() {
        let w = rand_t(Shape::new(1, 1, 3, 3), 5);
        let x_shape = Shape::new(1, 1, 4, 4);
        let (cols, y_shape) = conv_matrix(x_shape, &w, 1, 0);
        assert_eq!(y_shape, Shape::new(1, 1, 2, 2));
        let y = rand_t(y_shape, 6);
        let got = conv_transpose2d(&y, &w, None, 1, 0).unwrap();
        assert_eq!(got.shape(), x_shape);
        // (A^T y)_i = <column i of A, y>
        for (i, col) in cols.iter().enumerate() {
            let expect: f64 = col.iter().zip(y.data()).map(|(a, b)| a * b).sum();
            assert!((got.data()[i] - expect).abs() < 1e-12);
        }
        let x = rand_t(x_shape, 7);
        let lhs = conv2d(&x, &w, None, 1, 0).unwrap().dot(&y).unwrap();
        let rhs = x.dot(&got).unwrap();
        assert!((lhs - rhs).abs() <= 1e-6 * lhs.abs().max(1e-12));
    }

    #[test]
    fn conv_transpose_adjoint_with_stride_and_padding() {
        let w = rand_t(Shape::new(3, 2, 4, 4), 8);
        let x = rand_t(Shape::new(2, 2, 8, 8), 9);
        let y = rand_t(Shape::new(2, 3, 4, 4), 10);
        let lhs = conv2d(&x, &w, None, 2, 1).unwrap().dot(&y).unwrap();
        let rhs = x.dot(&conv_transpose2d(&y, &w, None, 2, 1).unwrap()).unwrap();
        assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs());
    }

    #[test]
    fn relu_and_sigmoid_values() {
        let x = Tensor::<f64>::vector(vec![-2.0, 3.0, 0.0]).unwrap();
        assert_eq!(activation(&x, Activation::Relu).data(), &[0.0, 3.0, 0.0]);
        assert_eq!(activation(&x, Activation::Sigmoid).data()[2], 0.5);
        let xs = [-5.0f64, -1.0, 1.0, 5.0];
        let y = activation(&Tensor::vector(xs.to_vec()).unwrap(), Activation::Sigmoid);
        for (v, x) in y.data().iter().zip(xs) {
            let reference = 1.0 / (1.0 + (-x).exp());
            assert!((v - reference).abs() < 1e-12);
            assert!(*v > 0.0 && *v < 1.0);
        }
    }

    #[test]
    fn global_pool_values() {
        let c = Tensor::<f64>::full(Shape::new(1, 1, 3, 3), 0.75);
        assert_eq!(pool_spatial_global(&c, PoolMode::Avg).data(), &[0.75]);
        assert_eq!(pool_spatial_global(&c, PoolMode::Max).data(), &[0.75]);
        let x = Tensor::<f64>::new(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(pool_spatial_global(&x, PoolMode::Avg).data(), &[2.5]);
        assert_eq!(pool_spatial_global(&x, PoolMode::Max).data(), &[4.0]);

        let x = rand_t(Shape::new(2, 3, 5, 5), 11);
        let avg = pool_spatial_global(&x, PoolMode::Avg);
        let max = pool_spatial_global(&x, PoolMode::Max);
        assert_eq!(avg.shape(), Shape::new(2, 3, 1, 1));
        for n in 0..2 {
            for c in 0..3 {
                let mut s = 0.0;
                let mut m = f64::NEG_INFINITY;
                for h in 0..5 {
                    for w in 0..5 {
                        s += x.at(n, c, h, w);
                        m = m.max(x.at(n, c, h, w));
                    }
                }
                assert!((avg.at(n, c, 0, 0) - s / 25.0).abs() < 1e-12);
                assert_eq!(max.at(n, c, 0, 0), m);
            }
        }
    }

    #[test]
    fn channel_pool_values() {
        let x = rand_t(Shape::new(1, 1, 3, 3), 12);
        assert_eq!(pool_channels(&x, PoolMode::Avg), x);
        assert_eq!(pool_channels(&x, PoolMode::Max), x);
        let two = Tensor::<f64>::new(Shape::new(1, 2, 1, 1), vec![2.0, 4.0]).unwrap();
        assert_eq!(pool_channels(&two, PoolMode::Avg).data(), &[3.0]);
        assert_eq!(pool_channels(&two, PoolMode::Max).data(), &[4.0]);

        let x = rand_t(Shape::new(1, 5, 3, 3), 13);
        let avg = pool_channels(&x, PoolMode::Avg);
        let max = pool_channels(&x, PoolMode::Max);
        assert_eq!(avg.shape(), Shape::new(1, 1, 3, 3));
        for h in 0..3 {
            for w in 0..3 {
                let vals: Vec<f64> = (0..5).map(|c| x.at(0, c, h, w)).collect();
                let mean = vals.iter().sum::<f64>() / 5.0;
                let m = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                assert!((avg.at(0, 0, h, w) - mean).abs() < 1e-12);
                assert_eq!(max.at(0, 0, h, w), m);
            }
        }
    }

    #[test]
    fn dense_values() {
        let x = Tensor::<f64>::matrix(1, 2, vec![1.0, 2.0]).unwrap();
        let eye = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(dense(&x, &eye, None).unwrap().data(), x.data());
        let w = Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap();
        let b = Tensor::vector(vec![0.5]).unwrap();
        assert_eq!(dense(&x, &w, Some(&b)).unwrap().data(), &[3.5]);

        let x = rand_t(Shape::new(3, 8, 1, 1), 14);
        let w = rand_t(Shape::new(5, 8, 1, 1), 15);
        let b = rand_t(Shape::new(5, 1, 1, 1), 16);
        let y = dense(&x, &w, Some(&b)).unwrap();
        for n in 0..3 {
            for o in 0..5 {
                let mut acc = b.data()[o];
                for f in 0..8 {
                    acc += w.at(o, f, 0, 0) * x.at(n, f, 0, 0);
                }
                assert!((y.at(n, o, 0, 0) - acc).abs() < 1e-12);
            }
        }
        assert!(dense(&x, &rand_t(Shape::new(5, 7, 1, 1), 1), None).is_err());
    }

    #[test]
    fn hadamard_broadcasts() {
        let a = rand_t(Shape::new(1, 2, 2, 2), 17);
        let ones = Tensor::full(Shape::new(1, 2, 2, 2), 1.0);
        assert_eq!(hadamard(&a, &ones).unwrap(), a);
        let b = Tensor::new(Shape::new(1, 2, 1, 1), vec![2.0, 3.0]).unwrap();
        let y = hadamard(&a, &b).unwrap();
        for h in 0..2 {
            for w in 0..2 {
                assert_eq!(y.at(0, 0, h, w), 2.0 * a.at(0, 0, h, w));
                assert_eq!(y.at(0, 1, h, w), 3.0 * a.at(0, 1, h, w));
            }
        }
        let a = rand_t(Shape::new(2, 3, 4, 5), 18);
        let bc = rand_t(Shape::new(2, 3, 1, 1), 19);
        let bs = rand_t(Shape::new(2, 1, 4, 5), 20);
        let expand_c = Tensor::from_fn(a.shape(), |n, c, _, _| bc.at(n, c, 0, 0));
        let expand_s = Tensor::from_fn(a.shape(), |n, _, h, w| bs.at(n, 0, h, w));
        assert_eq!(hadamard(&a, &bc).unwrap(), hadamard(&a, &expand_c).unwrap());
        assert_eq!(hadamard(&a, &bs).unwrap(), hadamard(&a, &expand_s).unwrap());
        assert!(hadamard(&a, &rand_t(Shape::new(2, 2, 1, 1), 1)).is_err());
    }

    #[test]
    fn concat_preserves_slices() {
        let a = rand_t(Shape::new(2, 1, 3, 3), 21);
        let b = rand_t(Shape::new(2, 2, 3, 3), 22);
        let y = concat_channels(&a, &b).unwrap();
        assert_eq!(y.shape(), Shape::new(2, 3, 3, 3));
        for n in 0..2 {
            for h in 0..3 {
                for w in 0..3 {
                    assert_eq!(y.at(n, 0, h, w), a.at(n, 0, h, w));
                    assert_eq!(y.at(n, 1, h, w), b.at(n, 0, h, w));
                    assert_eq!(y.at(n, 2, h, w), b.at(n, 1, h, w));
                }
            }
        }
        let x = rand_t(Shape::new(1, 1, 3, 3), 23);
        let xx = concat_channels(&x, &x).unwrap();
        assert_eq!(pool_channels(&xx, PoolMode::Avg), x);
        assert!(concat_channels(&a, &rand_t(Shape::new(2, 1, 3, 4), 1)).is_err());
    }

    #[test]
    fn dropout_modes() {
        let x = rand_t(Shape::new(1, 2, 4, 4), 24);
        let mut rng = Rng::new(0);
        assert_eq!(dropout(&x, 0.0, true, &mut rng).unwrap(), x);
        assert_eq!(dropout(&x, 0.5, false, &mut rng).unwrap(), x);
        assert!(matches!(dropout(&x, 1.0, true, &mut rng), Err(Error::Config(_))));
        assert!(matches!(dropout(&x, -0.1, true, &mut rng), Err(Error::Config(_))));
    }

    #[test]
    fn inverted_dropout_preserves_expectation() {
        let n = 100_000;
        let x = Tensor::<f64>::full(Shape::new(1, 1, 1, n), 1.0);
        let y = dropout(&x, 0.5, true, &mut Rng::new(99)).unwrap();
        let mean = y.data().iter().sum::<f64>() / n as f64;
        let sigma = 1.0 / (n as f64).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * sigma, "mean {mean}");
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn dropout_masks_are_seeded() {
        let x = Tensor::<f32>::full(Shape::new(1, 1, 8, 8), 1.0);
        let a = dropout(&x, 0.5, true, &mut Rng::new(5)).unwrap();
        let b = dropout(&x, 0.5, true, &mut Rng::new(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mse_values() {
        let x = rand_t(Shape::new(1, 2, 3, 3), 25);
        assert_eq!(mse_loss(&x, &x).unwrap(), 0.0);
        let a = Tensor::<f64>::vector(vec![0.0, 1.0]).unwrap();
        let b = Tensor::vector(vec![1.0, 1.0]).unwrap();
        assert_eq!(mse_loss(&a, &b).unwrap(), 0.5);
        let y = rand_t(Shape::new(1, 2, 3, 3), 26);
        let mut acc = 0.0;
        for (p, q) in x.data().iter().zip(y.data()) {
            acc += (p - q) * (p - q);
        }
        assert!((mse_loss(&x, &y).unwrap() - acc / 18.0).abs() < 1e-15);
        assert!(mse_loss(&x, &rand_t(Shape::new(1, 2, 3, 4), 1)).is_err());
    }
}
