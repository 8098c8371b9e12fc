#![allow(dead_code)]

// Finite-difference cases shared by the gradient tests and the acceptance
// suite. Every op is reduced to a scalar through an MSE against a fixed
// random target so that all output coordinates contribute.

use cbam_pad::attention::CbamParams;
use cbam_pad::autograd::{finite_diff_check, GradCheckReport, PoolMode};
use cbam_pad::{Autoencoder, Graph, ModelConfig, ParamTree, Result, Rng, Shape, Tensor, Var};

pub const EPS: f64 = 1e-3;

fn rand(shape: Shape, seed: u64) -> Tensor<f64> {
    Tensor::uniform(shape, -1.0, 1.0, &mut Rng::new(seed))
}

fn against_target(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let target = g.leaf(rand(g.value(y).shape(), seed));
    g.mse_loss(y, target)
}

type Case = (&'static str, Box<dyn Fn() -> Result<GradCheckReport>>);

fn case<F>(name: &'static str, params: Vec<Tensor<f64>>, f: F) -> Case
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + 'static,
{
    (name, Box::new(move || finite_diff_check(&f, &params, EPS)))
}

/// One case per differentiable op.
pub fn op_cases() -> Vec<Case> {
    let s = Shape::new;
    vec![
        case("conv2d", vec![rand(s(2, 3, 6, 6), 1), rand(s(4, 3, 3, 3), 2), rand(s(4, 1, 1, 1), 3)], |g, v| {
            let y = g.conv2d(v[0], v[1], Some(v[2]), 2, 1)?;
            against_target(g, y, 4)
        }),
        case(
            "conv_transpose2d",
            vec![rand(s(2, 3, 3, 3), 5), rand(s(3, 2, 4, 4), 6), rand(s(2, 1, 1, 1), 7)],
            |g, v| {
                let y = g.conv_transpose2d(v[0], v[1], Some(v[2]), 2, 1)?;
                against_target(g, y, 8)
            },
        ),
        case("relu", vec![rand(s(2, 3, 4, 4), 9)], |g, v| {
            let y = g.relu(v[0]);
            against_target(g, y, 10)
        }),
        case("sigmoid", vec![rand(s(2, 3, 4, 4), 11)], |g, v| {
            let y = g.sigmoid(v[0]);
            against_target(g, y, 12)
        }),
        case("global_avg_pool", vec![rand(s(2, 3, 4, 5), 13)], |g, v| {
            let y = g.global_pool(v[0], PoolMode::Avg);
            against_target(g, y, 14)
        }),
        case("global_max_pool", vec![rand(s(2, 3, 4, 5), 15)], |g, v| {
            let y = g.global_pool(v[0], PoolMode::Max);
            against_target(g, y, 16)
        }),
        case("channel_avg_pool", vec![rand(s(2, 4, 3, 3), 17)], |g, v| {
            let y = g.channel_pool(v[0], PoolMode::Avg);
            against_target(g, y, 18)
        }),
        case("channel_max_pool", vec![rand(s(2, 4, 3, 3), 19)], |g, v| {
            let y = g.channel_pool(v[0], PoolMode::Max);
            against_target(g, y, 20)
        }),
        case("dense", vec![rand(s(3, 2, 2, 2), 21), rand(s(5, 8, 1, 1), 22), rand(s(5, 1, 1, 1), 23)], |g, v| {
            let y = g.dense(v[0], v[1], Some(v[2]))?;
            against_target(g, y, 24)
        }),
        case("hadamard_same", vec![rand(s(2, 3, 4, 4), 25), rand(s(2, 3, 4, 4), 26)], |g, v| {
            let y = g.hadamard(v[0], v[1])?;
            against_target(g, y, 27)
        }),
        case("hadamard_channel", vec![rand(s(2, 3, 4, 4), 28), rand(s(2, 3, 1, 1), 29)], |g, v| {
            let y = g.hadamard(v[0], v[1])?;
            against_target(g, y, 30)
        }),
        case("hadamard_spatial", vec![rand(s(2, 3, 4, 4), 31), rand(s(2, 1, 4, 4), 32)], |g, v| {
            let y = g.hadamard(v[0], v[1])?;
            against_target(g, y, 33)
        }),
        case("add", vec![rand(s(2, 3, 2, 2), 34), rand(s(2, 3, 2, 2), 35)], |g, v| {
            let y = g.add(v[0], v[1])?;
            against_target(g, y, 36)
        }),
        case("concat_channels", vec![rand(s(2, 2, 3, 3), 37), rand(s(2, 3, 3, 3), 38)], |g, v| {
            let y = g.concat_channels(v[0], v[1])?;
            against_target(g, y, 39)
        }),
        case("dropout", vec![rand(s(2, 3, 4, 4), 40)], |g, v| {
            let y = g.dropout(v[0], 0.3, true, &mut Rng::new(41))?;
            against_target(g, y, 42)
        }),
        case("mse_loss", vec![rand(s(2, 3, 3, 3), 43), rand(s(2, 3, 3, 3), 44)], |g, v| g.mse_loss(v[0], v[1])),
        cbam_case(),
    ]
}

fn cbam_case() -> Case {
    let template = CbamParams::<Tensor<f64>>::init(4, 2, &mut Rng::new(45)).unwrap();
    let mut params = vec![rand(Shape::new(2, 4, 5, 5), 46)];
    params.extend(template.named().into_iter().map(|(_, t)| t.clone()));
    case("cbam", params, move |g, v| {
        let mut rest = v[1..].iter().copied();
        let p = template.map(&mut |_| rest.next().unwrap());
        let y = p.apply(g, v[0])?;
        against_target(g, y, 47)
    })
}

/// Depth-2 autoencoder on one 3x16x16 image, gradient of the reconstruction
/// loss with respect to every weight.
pub fn model_case() -> Case {
    let cfg = ModelConfig {
        input_size: 16,
        depth: 2,
        base_channels: 4,
        attention_ratio: 2,
        dropout_rate: 0.0,
        seed: 48,
        ..ModelConfig::desk()
    };
    let model = Autoencoder::<f64>::new(&cfg).unwrap();
    let x = Tensor::uniform(cfg.input_shape(1), 0.0, 1.0, &mut Rng::new(49));
    let params: Vec<Tensor<f64>> = model.params.named().into_iter().map(|(_, t)| t.clone()).collect();
    case("autoencoder_depth2", params, move |g, v| {
        let p = model.params.refill(v.iter().copied())?;
        let xv = g.leaf(x.clone());
        let y = p.forward(&cfg, g, xv, false, &mut Rng::new(0))?;
        g.mse_loss(y, xv)
    })
}
