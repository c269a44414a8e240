#![allow(dead_code)]

use std::sync::Arc;

use ldpnet::autodiff::gradcheck::{gradcheck, GradcheckOptions, GradcheckReport};
use ldpnet::autodiff::{Graph, Interp, Resampler, Scale, Tensor, Var};
use ldpnet::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type OpCheck = fn(u64, &GradcheckOptions) -> Result<GradcheckReport>;

pub fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| StandardNormal.sample(rng)).collect()).unwrap()
}

fn run(
    seed: u64,
    opts: &GradcheckOptions,
    shapes: &[&[usize]],
    f: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| randn(&mut rng, s)).collect();
    gradcheck(f, &inputs, &GradcheckOptions { seed, ..*opts })
}

/// Every differentiable primitive, each on small random inputs.
pub const OPS: &[(&str, OpCheck)] = &[
    ("conv2d", |s, o| run(s, o, &[&[2, 3, 5, 5], &[4, 3, 3, 3], &[4]], |g, v| g.conv2d(v[0], v[1], Some(v[2]), 1, 1))),
    ("conv2d_stride2", |s, o| run(s, o, &[&[1, 2, 6, 6], &[3, 2, 3, 3]], |g, v| g.conv2d(v[0], v[1], None, 2, 1))),
    ("deconv2d", |s, o| run(s, o, &[&[2, 3, 3, 3], &[3, 2, 4, 4], &[2]], |g, v| g.deconv2d(v[0], v[1], Some(v[2]), 2, 1))),
    ("prelu", |s, o| run(s, o, &[&[2, 3, 4, 4], &[1]], |g, v| g.prelu(v[0], v[1]))),
    ("tanh", |s, o| run(s, o, &[&[2, 3, 4, 4]], |g, v| Ok(g.tanh(v[0])))),
    ("global_avg_pool", |s, o| run(s, o, &[&[2, 3, 4, 5]], |g, v| g.global_avg_pool(v[0]))),
    ("fully_connected", |s, o| run(s, o, &[&[3, 5], &[4, 5], &[4]], |g, v| g.fully_connected(v[0], v[1], Some(v[2])))),
    ("softmax_rows", |s, o| run(s, o, &[&[3, 5]], |g, v| g.softmax_rows(v[0]))),
    ("softmax_vec", |s, o| run(s, o, &[&[7]], |g, v| g.softmax_vec(v[0]))),
    ("kl_div_rows", |s, o| {
        run(s, o, &[&[3, 6], &[3, 6]], |g, v| {
            let p = g.softmax_rows(v[0])?;
            let q = g.softmax_rows(v[1])?;
            g.kl_div_rows(p, q, 1e-8)
        })
    }),
    ("kl_div", |s, o| {
        run(s, o, &[&[9], &[9]], |g, v| {
            let p = g.softmax_vec(v[0])?;
            let q = g.softmax_vec(v[1])?;
            g.kl_div(p, q, 1e-8)
        })
    }),
    ("concat_channels", |s, o| run(s, o, &[&[2, 1, 3, 3], &[2, 3, 3, 3]], |g, v| g.concat_channels(&[v[0], v[1], v[0]]))),
    ("add", |s, o| run(s, o, &[&[2, 3, 4], &[2, 3, 4]], |g, v| g.add(v[0], v[1]))),
    ("sub", |s, o| run(s, o, &[&[2, 3, 4], &[2, 3, 4]], |g, v| g.sub(v[0], v[1]))),
    ("mul", |s, o| run(s, o, &[&[2, 3, 4], &[2, 3, 4]], |g, v| g.mul(v[0], v[1]))),
    ("scalar_mul", |s, o| run(s, o, &[&[2, 3, 4]], |g, v| Ok(g.scalar_mul(v[0], -1.7)))),
    ("add_scalar", |s, o| {
        run(s, o, &[&[2, 3, 4]], |g, v| {
            let y = g.add_scalar(v[0], 0.3);
            g.mul(y, y)
        })
    }),
    ("mean_sq", |s, o| run(s, o, &[&[2, 3, 4, 4]], |g, v| Ok(g.mean_sq(v[0])))),
    ("sum", |s, o| run(s, o, &[&[2, 3, 4]], |g, v| Ok(g.sum(v[0])))),
    ("weighted_band_sum", |s, o| run(s, o, &[&[2, 4, 5, 5], &[2, 4]], |g, v| g.weighted_band_sum(v[0], v[1]))),
    ("repeat_channels", |s, o| run(s, o, &[&[2, 1, 4, 4]], |g, v| g.repeat_channels(v[0], 3))),
    ("upsample_bicubic", |s, o| run(s, o, &[&[1, 2, 4, 4]], |g, v| g.resample_by(v[0], Scale::Up(4), Interp::Bicubic))),
    ("downsample_bicubic", |s, o| run(s, o, &[&[1, 2, 16, 16]], |g, v| g.resample_by(v[0], Scale::Down(4), Interp::Bicubic))),
    ("upsample_bilinear", |s, o| run(s, o, &[&[1, 2, 3, 5]], |g, v| g.resample_by(v[0], Scale::Up(2), Interp::Bilinear))),
    ("downsample_nearest", |s, o| run(s, o, &[&[1, 2, 8, 8]], |g, v| g.resample_by(v[0], Scale::Down(2), Interp::Nearest))),
    ("resample_operator", |s, o| {
        let op = Arc::new(Resampler::new(6, 4, 9, 7, Interp::Bicubic));
        run(s, o, &[&[2, 1, 6, 4]], move |g, v| g.resample(v[0], op.clone()))
    }),
    ("reshape", |s, o| {
        run(s, o, &[&[2, 3, 4]], |g, v| {
            let r = g.reshape(v[0], &[6, 4])?;
            g.softmax_rows(r)
        })
    }),
];

pub const OP_SEEDS: u64 = 100;

pub fn op_options() -> GradcheckOptions {
    GradcheckOptions {
        tol: 1e-4,
        ..GradcheckOptions::default()
    }
}
