#![allow(dead_code)]

// Synthetic texture corpus for overfitting experiments: smooth gratings
// with a distinct mean per channel, plus structure-breaking corruptions.

use cbam_pad::{Rng, Shape, Tensor};

const CHANNEL_MEANS: [f64; 3] = [0.25, 0.5, 0.75];

/// `count` images of `size x size`, each a sum of two oriented gratings.
pub fn textures(count: usize, size: usize, seed: u64) -> Vec<Tensor<f32>> {
    let mut rng = Rng::new(seed);
    (0..count)
        .map(|_| {
            let fx = 1.0 + rng.below(3) as f64;
            let fy = 1.0 + rng.below(3) as f64;
            let phase: Vec<f64> = (0..3).map(|_| rng.uniform() * std::f64::consts::TAU).collect();
            let tau = std::f64::consts::TAU / size as f64;
            Tensor::from_fn(Shape::new(1, 3, size, size), |_, c, h, w| {
                let a = (tau * fx * w as f64 + phase[c]).sin();
                let b = (tau * fy * h as f64 + 0.5 * phase[c]).cos();
                (CHANNEL_MEANS[c] + 0.1 * a + 0.1 * b) as f32
            })
        })
        .collect()
}

/// Uniform noise in `[0, 1)`.
pub fn noise(like: &Tensor<f32>, seed: u64) -> Tensor<f32> {
    Tensor::uniform(like.shape(), 0.0, 1.0, &mut Rng::new(seed))
}

/// Rotates the channels: R <- G, G <- B, B <- R.
pub fn channel_shuffle(x: &Tensor<f32>) -> Tensor<f32> {
    Tensor::from_fn(x.shape(), |n, c, h, w| x.at(n, (c + 1) % 3, h, w))
}

/// Four noise images and four channel-shuffled training images.
pub fn corruptions(train: &[Tensor<f32>], seed: u64) -> Vec<Tensor<f32>> {
    let mut out: Vec<Tensor<f32>> = (0..4).map(|i| noise(&train[i % train.len()], seed + i as u64)).collect();
    out.extend(train.iter().skip(4).take(4).map(channel_shuffle));
    out
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}
