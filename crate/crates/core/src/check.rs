//! Finite-difference checks of the network blocks and the full objective.

use std::collections::BTreeMap;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::gradcheck::{gradcheck, GradcheckOptions, GradcheckReport};
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::loss::{build_loss, LossConfig, LossInputs};
use crate::model::{Blocks, Bound, LdpNet, ModelConfig, Stream};

/// Side of the square test images.
pub const CHECK_SIZE: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Composite {
    Feb,
    Dedb,
    Rec,
    Gb,
    Rb,
    Fuse,
    TotalLoss,
}

impl Composite {
    pub const ALL: [Composite; 7] = [
        Composite::Feb,
        Composite::Dedb,
        Composite::Rec,
        Composite::Gb,
        Composite::Rb,
        Composite::Fuse,
        Composite::TotalLoss,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Composite::Feb => "feb",
            Composite::Dedb => "dedb",
            Composite::Rec => "rec",
            Composite::Gb => "gb",
            Composite::Rb => "rb",
            Composite::Fuse => "fuse",
            Composite::TotalLoss => "total_loss",
        }
    }

    /// Parameter-name prefixes the composite depends on.
    fn prefixes(self) -> &'static [&'static str] {
        match self {
            Composite::Feb => &["feb_ms."],
            Composite::Dedb => &["dedb."],
            Composite::Rec => &["rec."],
            Composite::Gb => &["gb."],
            Composite::Rb => &["rb."],
            Composite::Fuse => &["feb_ms.", "feb_pan.", "dedb.", "rec."],
            Composite::TotalLoss => &[""],
        }
    }
}

impl FromStr for Composite {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Composite::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown composite {s:?}"))
    }
}

/// Micro network whose zero-initialized tensors (biases, the last graying
/// layer) are replaced by small random values so every path carries
/// gradient.
pub fn perturbed_micro(seed: u64) -> Result<LdpNet<f64>> {
    let cfg = ModelConfig {
        init_seed: seed,
        ..ModelConfig::micro()
    };
    let mut net = LdpNet::<f64>::new(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let noise = Normal::new(0.0, 0.1).expect("valid sigma");
    for (name, t) in net.params.iter_mut() {
        if name.ends_with(".b") || name.starts_with("gb.fc2") {
            t.data_mut().iter_mut().for_each(|v| *v += noise.sample(&mut rng));
        }
    }
    Ok(net)
}

fn uniform(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("shape")
}

/// Runs the finite-difference check of one composite on a random instance.
pub fn check_composite(which: Composite, seed: u64, opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let net = perturbed_micro(seed)?;
    let cfg = net.config.clone();
    let (c, ch, s) = (cfg.bands, cfg.feb_channels, CHECK_SIZE);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x2545_f491_4f6c_dd1d) ^ 0xc0ffee);

    let data: Vec<Tensor<f64>> = match which {
        Composite::Feb => vec![uniform(&[1, c, s, s], &mut rng, -1.0, 1.0)],
        Composite::Dedb => vec![
            uniform(&[1, ch, s / 2, s / 2], &mut rng, -1.0, 1.0),
            uniform(&[1, ch, s / 2, s / 2], &mut rng, -1.0, 1.0),
        ],
        Composite::Rec => (0..3).map(|_| uniform(&[1, ch, s, s], &mut rng, -1.0, 1.0)).collect(),
        Composite::Gb | Composite::Rb => vec![uniform(&[1, c, s, s], &mut rng, 0.0, 1.0)],
        Composite::Fuse => vec![
            uniform(&[1, c, s, s], &mut rng, -1.0, 1.0),
            uniform(&[1, c, s, s], &mut rng, -1.0, 1.0),
        ],
        Composite::TotalLoss => Vec::new(),
    };
    // The objective takes fixed unit-range observations.
    let obs = [
        uniform(&[1, c, s, s], &mut rng, 0.05, 0.95),
        uniform(&[1, c, s, s], &mut rng, 0.05, 0.95),
        uniform(&[1, c, s / cfg.ratio, s / cfg.ratio], &mut rng, 0.05, 0.95),
    ];

    let names: Vec<String> = net
        .params
        .names()
        .filter(|n| which.prefixes().iter().any(|p| n.starts_with(p)))
        .cloned()
        .collect();
    if names.is_empty() {
        return Err(Error::InvalidArgument(format!("no parameters for {}", which.name())));
    }
    let mut inputs = data.clone();
    inputs.extend(names.iter().map(|n| net.params.get(n).expect("listed").clone()));
    let nd = data.len();
    let loss_cfg = LossConfig::default();

    let f = |g: &mut Graph<f64>, vars: &[Var]| -> Result<Var> {
        let mut map = BTreeMap::new();
        for (name, t) in net.params.iter() {
            let v = match names.iter().position(|n| n == name) {
                Some(i) => vars[nd + i],
                None => g.constant(t.clone())?,
            };
            map.insert(name.clone(), v);
        }
        let bound = Bound::from_vars(map);
        let b = Blocks::new(&cfg, &bound);
        match which {
            Composite::Feb => {
                let o = b.feb_forward(g, vars[0], Stream::Ms)?;
                let (a, r) = (g.mean_sq(o.features), g.mean_sq(o.residual));
                g.add(a, r)
            }
            Composite::Dedb => b.dedb_forward(g, vars[0], vars[1]),
            Composite::Rec => b.rec_forward(g, vars[0], vars[1], vars[2]),
            Composite::Gb => Ok(b.gb_forward(g, vars[0])?.gray),
            Composite::Rb => b.rb_forward(g, vars[0]),
            Composite::Fuse => b.fuse(g, vars[0], vars[1]),
            Composite::TotalLoss => {
                let up = g.constant(obs[0].clone())?;
                let pan = g.constant(obs[1].clone())?;
                let m = g.constant(obs[2].clone())?;
                let up_s = g.scalar_mul(up, 2.0);
                let up_s = g.add_scalar(up_s, -1.0);
                let pan_s = g.scalar_mul(pan, 2.0);
                let pan_s = g.add_scalar(pan_s, -1.0);
                let m_hat_signed = b.fuse(g, up_s, pan_s)?;
                let inp = LossInputs {
                    m_hat_signed,
                    up_m: up,
                    pan,
                    m,
                };
                Ok(build_loss(g, &b, &inp, &loss_cfg)?.total)
            }
        }
    };
    gradcheck(f, &inputs, &GradcheckOptions { seed, ..*opts })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_composite_passes_one_seed() {
        let opts = GradcheckOptions {
            tol: 1e-3,
            max_coords: 6,
            ..GradcheckOptions::default()
        };
        for c in Composite::ALL {
            let r = check_composite(c, 1, &opts).unwrap();
            assert!(r.passed(), "{}: {r:?}", c.name());
            assert!(r.coords_checked > 0);
        }
    }

    #[test]
    fn names_round_trip() {
        for c in Composite::ALL {
            assert_eq!(c.name().parse::<Composite>().unwrap(), c);
        }
        assert!("nope".parse::<Composite>().is_err());
    }
}
