use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ModelConfig;
use crate::autodiff::{Graph, Scalar, Tensor, Var};
use crate::error::{Error, Result};

/// Named trainable tensors of one network. The graying and reblurring
/// blocks are stored once and bound once per graph, so every call site
/// shares the same parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore {
            tensors: BTreeMap::new(),
        }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Puts every tensor on the graph as a trainable leaf.
    pub fn bind(&self, g: &mut Graph<T>) -> Result<Bound> {
        self.bind_with(g, true)
    }

    /// Puts every tensor on the graph; `trainable = false` binds constants.
    pub fn bind_with(&self, g: &mut Graph<T>, trainable: bool) -> Result<Bound> {
        let mut vars = BTreeMap::new();
        for (name, t) in &self.tensors {
            vars.insert(name.clone(), g.leaf(t.clone(), trainable)?);
        }
        Ok(Bound { vars })
    }
}

/// Graph handles for every parameter of a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    /// Wraps handles that were put on the graph by other means.
    pub fn from_vars(vars: BTreeMap<String, Var>) -> Self {
        Bound { vars }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("no parameter named {name:?}")))
    }

    pub fn opt(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

/// Sampled isotropic Gaussian on a `size x size` grid, normalized to sum 1.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let mut k: Vec<f64> = (0..size * size)
        .map(|i| {
            let (y, x) = ((i / size) as f64 - c, (i % size) as f64 - c);
            (-(x * x + y * y) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    fn kaiming(&mut self, shape: &[usize], fan_in: usize) -> Vec<f64> {
        let n: usize = shape.iter().product();
        let d = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        (0..n).map(|_| d.sample(&mut self.rng)).collect()
    }
}

fn t<T: Scalar>(shape: &[usize], data: Vec<f64>) -> Tensor<T> {
    Tensor::new(shape.to_vec(), data.into_iter().map(T::lit).collect()).expect("init shape")
}

pub(crate) const PRELU_INIT: f64 = 0.25;

impl<T: Scalar> ParamStore<T> {
    /// Deterministic initialization from `cfg.init_seed`: fan-in scaled
    /// normal weights, zero biases, PReLU slopes 0.25, a zero final graying
    /// layer (uniform band weights) and a Gaussian blur kernel.
    pub fn init(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut ps = ParamStore::default();
        let mut init = Init {
            rng: ChaCha8Rng::seed_from_u64(cfg.init_seed),
        };
        let c = cfg.bands;
        let ch = cfg.feb_channels;
        let k = cfg.feb_kernel;

        let conv = |ps: &mut ParamStore<T>, init: &mut Init, name: &str, cout: usize, cin: usize, k: usize| {
            let shape = [cout, cin, k, k];
            ps.insert(format!("{name}.w"), t(&shape, init.kaiming(&shape, cin * k * k)));
            ps.insert(format!("{name}.b"), Tensor::zeros(&[cout]));
        };
        let prelu = |ps: &mut ParamStore<T>, name: &str| {
            ps.insert(format!("{name}.a"), Tensor::full(&[1], T::lit(PRELU_INIT)));
        };

        for stream in ["feb_ms", "feb_pan"] {
            conv(&mut ps, &mut init, &format!("{stream}.proj"), ch, c, 1);
            for (i, cin) in [(1, c), (2, ch), (3, ch)] {
                conv(&mut ps, &mut init, &format!("{stream}.conv{i}"), ch, cin, k);
                prelu(&mut ps, &format!("{stream}.act{i}"));
            }
            conv(&mut ps, &mut init, &format!("{stream}.down"), ch, ch, k);
            prelu(&mut ps, &format!("{stream}.act_down"));
        }

        for i in 1..=cfg.dedb_layers {
            conv(&mut ps, &mut init, &format!("dedb.conv{i}"), cfg.dedb_growth, cfg.dedb_layer_inputs(i), k);
            prelu(&mut ps, &format!("dedb.act{i}"));
        }
        // Transposed-conv kernel is (Cin, Cout, k, k).
        let shape = [cfg.dedb_growth, ch, 3, 3];
        ps.insert("dedb.deconv.w", t(&shape, init.kaiming(&shape, cfg.dedb_growth * 9)));
        ps.insert("dedb.deconv.b", Tensor::zeros(&[ch]));
        prelu(&mut ps, "dedb.act_up");

        conv(&mut ps, &mut init, "rec.conv1", ch, 3 * ch, k);
        prelu(&mut ps, "rec.act1");
        conv(&mut ps, &mut init, "rec.conv2", c, ch, k);

        conv(&mut ps, &mut init, "gb.conv1", cfg.gb_hidden_channels, c, 3);
        prelu(&mut ps, "gb.act1");
        conv(&mut ps, &mut init, "gb.conv2", c, cfg.gb_hidden_channels, 3);
        let shape = [cfg.gb_fc_hidden, c];
        ps.insert("gb.fc1.w", t(&shape, init.kaiming(&shape, c)));
        ps.insert("gb.fc1.b", Tensor::zeros(&[cfg.gb_fc_hidden]));
        prelu(&mut ps, "gb.act_fc");
        ps.insert("gb.fc2.w", Tensor::zeros(&[c, cfg.gb_fc_hidden]));
        ps.insert("gb.fc2.b", Tensor::zeros(&[c]));

        let ks = cfg.rb_kernel_size;
        ps.insert("rb.kernel", t(&[1, 1, ks, ks], gaussian_kernel(ks, cfg.rb_init_sigma)));
        Ok(ps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_kernel_is_normalized_and_symmetric() {
        let k = gaussian_kernel(9, 2.0);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(k[0], k[80]);
        assert!(k[40] > k[39]);
    }

    #[test]
    fn init_is_deterministic_and_finite() {
        let cfg = ModelConfig::micro();
        let a = ParamStore::<f32>::init(&cfg).unwrap();
        let b = ParamStore::<f32>::init(&cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.all_finite());
        assert_eq!(a.get("feb_ms.act1.a").unwrap().data(), &[0.25]);
        assert!(a.get("gb.fc2.w").unwrap().data().iter().all(|&v| v == 0.0));
        let other = ParamStore::<f32>::init(&ModelConfig { init_seed: 1, ..cfg }).unwrap();
        assert_ne!(a.get("feb_ms.conv1.w"), other.get("feb_ms.conv1.w"));
    }

    #[test]
    fn degradation_blocks_exist_once() {
        let ps = ParamStore::<f32>::init(&ModelConfig::micro()).unwrap();
        assert_eq!(ps.names().filter(|n| n.starts_with("rb.")).count(), 1);
        assert_eq!(ps.names().filter(|n| n.starts_with("gb.")).count(), 10);
    }
}
