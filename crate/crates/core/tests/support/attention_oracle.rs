#![allow(dead_code, clippy::needless_range_loop)]

//! Plain nested-loop CBAM over `[n][c][h][w]` arrays, written without the
//! tensor library or the autograd tape.

use cbam_pad::attention::{
    cbam, channel_attention, spatial_attention, CbamParams, ChannelAttentionParams, SpatialAttentionParams,
};
use cbam_pad::{Rng, Shape, Tensor};

type Grid = Vec<Vec<Vec<Vec<f64>>>>;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn grid(t: &Tensor<f64>) -> Grid {
    let [n, c, h, w] = t.shape().dims();
    (0..n)
        .map(|i| (0..c).map(|j| (0..h).map(|y| (0..w).map(|x| t.at(i, j, y, x)).collect()).collect()).collect())
        .collect()
}

fn flatten(g: &Grid) -> Vec<f64> {
    g.iter().flatten().flatten().flatten().copied().collect()
}

/// `expand · relu(reduce · v + b_r) + b_e`
fn mlp(p: &ChannelAttentionParams<Tensor<f64>>, v: &[f64]) -> Vec<f64> {
    let c = v.len();
    let hidden = p.reduce.bias.numel();
    let wr = p.reduce.weight.data();
    let we = p.expand.weight.data();
    let mut h = vec![0.0; hidden];
    for j in 0..hidden {
        let mut s = p.reduce.bias.data()[j];
        for i in 0..c {
            s += wr[j * c + i] * v[i];
        }
        h[j] = s.max(0.0);
    }
    let mut out = vec![0.0; c];
    for i in 0..c {
        let mut s = p.expand.bias.data()[i];
        for j in 0..hidden {
            s += we[i * hidden + j] * h[j];
        }
        out[i] = s;
    }
    out
}

/// Channel gate per sample: `sigmoid(mlp(avg) + mlp(max))`.
pub fn channel_gate(x: &Grid, p: &ChannelAttentionParams<Tensor<f64>>) -> Vec<Vec<f64>> {
    x.iter()
        .map(|sample| {
            let avg: Vec<f64> = sample
                .iter()
                .map(|plane| {
                    let cells = plane.iter().flatten().count() as f64;
                    plane.iter().flatten().sum::<f64>() / cells
                })
                .collect();
            let max: Vec<f64> =
                sample.iter().map(|plane| plane.iter().flatten().fold(f64::NEG_INFINITY, |m, &v| m.max(v))).collect();
            let a = mlp(p, &avg);
            let b = mlp(p, &max);
            a.iter().zip(&b).map(|(u, v)| sigmoid(u + v)).collect()
        })
        .collect()
}

/// Spatial gate per sample: 7x7 zero-padded correlation over the
/// `[mean_c; max_c]` maps, then a sigmoid.
pub fn spatial_gate(x: &Grid, p: &SpatialAttentionParams<Tensor<f64>>) -> Vec<Vec<Vec<f64>>> {
    let k = 7usize;
    let pad = 3isize;
    let kern = p.kernel.data();
    let bias = p.bias.data()[0];
    x.iter()
        .map(|sample| {
            let c = sample.len();
            let (h, w) = (sample[0].len(), sample[0][0].len());
            let mut maps = vec![vec![vec![0.0; w]; h]; 2];
            for y in 0..h {
                for xx in 0..w {
                    let column: Vec<f64> = (0..c).map(|ch| sample[ch][y][xx]).collect();
                    maps[0][y][xx] = column.iter().sum::<f64>() / c as f64;
                    maps[1][y][xx] = column.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                }
            }
            let mut gate = vec![vec![0.0; w]; h];
            for y in 0..h {
                for xx in 0..w {
                    let mut s = bias;
                    for (m, map) in maps.iter().enumerate() {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = y as isize + ky as isize - pad;
                                let ix = xx as isize + kx as isize - pad;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                s += kern[(m * k + ky) * k + kx] * map[iy as usize][ix as usize];
                            }
                        }
                    }
                    gate[y][xx] = sigmoid(s);
                }
            }
            gate
        })
        .collect()
}

pub fn channel_refine(x: &Grid, p: &ChannelAttentionParams<Tensor<f64>>) -> Grid {
    let gate = channel_gate(x, p);
    x.iter()
        .zip(&gate)
        .map(|(sample, g)| {
            sample
                .iter()
                .zip(g)
                .map(|(plane, &m)| plane.iter().map(|row| row.iter().map(|v| v * m).collect()).collect())
                .collect()
        })
        .collect()
}

pub fn spatial_refine(x: &Grid, p: &SpatialAttentionParams<Tensor<f64>>) -> Grid {
    let gate = spatial_gate(x, p);
    x.iter()
        .zip(&gate)
        .map(|(sample, g)| {
            sample
                .iter()
                .map(|plane| {
                    plane.iter().zip(g).map(|(row, grow)| row.iter().zip(grow).map(|(v, m)| v * m).collect()).collect()
                })
                .collect()
        })
        .collect()
}

fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-12)).fold(0.0, f64::max)
}

/// Worst relative error of the library channel gate, spatial gate and full
/// block against the loop versions over `instances` random inputs.
pub fn compare(instances: usize, seed: u64) -> [f64; 3] {
    let mut rng = Rng::new(seed);
    let mut worst = [0.0f64; 3];
    for _ in 0..instances {
        let ratio = [1, 2, 4][rng.below(3)];
        let c = ratio * (1 + rng.below(4));
        let n = 1 + rng.below(2);
        let h = 3 + rng.below(10);
        let w = 3 + rng.below(10);
        let x = Tensor::<f64>::uniform(Shape::new(n, c, h, w), -2.0, 2.0, &mut rng);
        let mut params = CbamParams::<Tensor<f64>>::init(c, ratio, &mut rng).unwrap();
        // Nonzero biases so they are exercised too.
        for b in [&mut params.cam.reduce.bias, &mut params.cam.expand.bias, &mut params.sam.bias] {
            *b = Tensor::uniform(b.shape(), -0.5, 0.5, &mut rng);
        }
        let xg = grid(&x);

        let lib = channel_attention(&x, &params.cam).unwrap();
        let gate: Vec<f64> = channel_gate(&xg, &params.cam).into_iter().flatten().collect();
        worst[0] = worst[0].max(max_rel(lib.data(), &gate));

        let lib = spatial_attention(&x, &params.sam).unwrap();
        let gate: Vec<f64> = spatial_gate(&xg, &params.sam).into_iter().flatten().flatten().collect();
        worst[1] = worst[1].max(max_rel(lib.data(), &gate));

        let lib = cbam(&x, &params).unwrap();
        let oracle = spatial_refine(&channel_refine(&xg, &params.cam), &params.sam);
        worst[2] = worst[2].max(max_rel(lib.data(), &flatten(&oracle)));
    }
    worst
}
