use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn rand_tensor(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

fn with_blocks<R>(net: &LdpNet<f64>, f: impl FnOnce(&mut Graph<f64>, &Blocks) -> R) -> R {
    let mut g = Graph::new();
    let bound = net.params.bind(&mut g).unwrap();
    let blocks = Blocks::new(&net.config, &bound);
    f(&mut g, &blocks)
}

#[test]
fn feb_shape_contract_at_default_width() {
    let net = LdpNet::<f32>::new(ModelConfig::default()).unwrap();
    let mut g = Graph::new();
    let bound = net.params.bind_with(&mut g, false).unwrap();
    let x = g.constant(Tensor::full(&[1, 4, 128, 128], 0.1f32)).unwrap();
    let out = Blocks::new(&net.config, &bound).feb_forward(&mut g, x, Stream::Ms).unwrap();
    assert_eq!(g.shape(out.features), &[1, 128, 64, 64]);
    assert_eq!(g.shape(out.residual), &[1, 128, 128, 128]);
}

#[test]
fn feb_zero_input_gives_zero_output() {
    let net = LdpNet::<f64>::new(ModelConfig::micro()).unwrap();
    with_blocks(&net, |g, b| {
        let x = g.constant(Tensor::zeros(&[1, 4, 8, 8])).unwrap();
        let out = b.feb_forward(g, x, Stream::Pan).unwrap();
        assert!(g.value(out.features).data().iter().all(|&v| v == 0.0));
        assert!(g.value(out.residual).data().iter().all(|&v| v == 0.0));
    });
}

#[test]
fn feb_rejects_wrong_band_count() {
    let net = LdpNet::<f64>::new(ModelConfig::micro()).unwrap();
    with_blocks(&net, |g, b| {
        let x = g.constant(Tensor::zeros(&[1, 3, 8, 8])).unwrap();
        assert!(b.feb_forward(g, x, Stream::Ms).is_err());
    });
}

#[test]
fn dedb_shapes_and_dense_inputs() {
    let cfg = ModelConfig::default();
    for i in 1..=4 {
        assert_eq!(cfg.dedb_layer_inputs(i), 256 + 128 * (i - 1));
    }
    let net = LdpNet::<f32>::new(cfg).unwrap();
    for i in 1..=4 {
        let w = net.params.get(&format!("dedb.conv{i}.w")).unwrap();
        assert_eq!(w.shape(), &[128, 256 + 128 * (i - 1), 3, 3]);
    }
    let mut g = Graph::new();
    let bound = net.params.bind_with(&mut g, false).unwrap();
    let a = g.constant(Tensor::full(&[1, 128, 64, 64], 0.01f32)).unwrap();
    let b = g.constant(Tensor::full(&[1, 128, 64, 64], -0.02f32)).unwrap();
    let u = Blocks::new(&net.config, &bound).dedb_forward(&mut g, a, b).unwrap();
    assert_eq!(g.shape(u), &[1, 128, 128, 128]);
}

#[test]
fn rec_output_is_inside_tanh_range() {
    let net = LdpNet::<f64>::new(ModelConfig::micro()).unwrap();
    with_blocks(&net, |g, b| {
        let u = g.constant(rand_tensor(&[1, 4, 16, 16], 1, -3.0, 3.0)).unwrap();
        let rm = g.constant(rand_tensor(&[1, 4, 16, 16], 2, -3.0, 3.0)).unwrap();
        let rp = g.constant(rand_tensor(&[1, 4, 16, 16], 3, -3.0, 3.0)).unwrap();
        let out = b.rec_forward(g, u, rm, rp).unwrap();
        assert_eq!(g.shape(out), &[1, 4, 16, 16]);
        assert!(g.value(out).data().iter().all(|v| v.abs() < 1.0));
    });
}

#[test]
fn rec_with_zero_final_layer_is_zero() {
    let mut net = LdpNet::<f64>::new(ModelConfig::micro()).unwrap();
    net.params.get_mut("rec.conv2.w").unwrap().data_mut().iter_mut().for_each(|v| *v = 0.0);
    with_blocks(&net, |g, b| {
        let u = g.constant(rand_tensor(&[1, 4, 8, 8], 4, -1.0, 1.0)).unwrap();
        let out = b.rec_forward(g, u, u, u).unwrap();
        assert!(g.value(out).data().iter().all(|&v| v == 0.0));
    });
}

#[test]
fn fuse_is_deterministic_and_checks_shapes() {
    let net = LdpNet::<f32>::new(ModelConfig::micro()).unwrap();
    let m = rand_tensor(&[1, 4, 16, 16], 5, -1.0, 1.0).cast::<f32>();
    let p = rand_tensor(&[1, 4, 16, 16], 6, -1.0, 1.0).cast::<f32>();
    let a = net.fuse_tensors(&m, &p).unwrap();
    let b = net.fuse_tensors(&m, &p).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.shape(), &[1, 4, 16, 16]);
    assert!(a.data().iter().all(|v| v.abs() < 1.0));
    let small = rand_tensor(&[1, 4, 8, 8], 7, -1.0, 1.0).cast::<f32>();
    assert!(net.fuse_tensors(&m, &small).is_err());
}

#[test]
fn fuse_shape_contract_at_default_width() {
    let net = LdpNet::<f32>::new(ModelConfig::default()).unwrap();
    let m = rand_tensor(&[1, 4, 128, 128], 8, -1.0, 1.0).cast::<f32>();
    let out = net.fuse_tensors(&m, &m).unwrap();
    assert_eq!(out.shape(), &[1, 4, 128, 128]);
}

#[test]
fn gb_uniform_weights_give_channel_mean() {
    let net = LdpNet::<f64>::new(ModelConfig::micro()).unwrap();
    let x = rand_tensor(&[2, 4, 6, 6], 9, 0.0, 1.0);
    with_blocks(&net, |g, b| {
        let xv = g.constant(x.clone()).unwrap();
        let out = b.gb_forward(g, xv).unwrap();
        assert!(g.value(out.weights).data().iter().all(|&w| (w - 0.25).abs() < 1e-15));
        let gray = g.value(out.gray).data();
        for s in 0..2 {
            for i in 0..36 {
                let mean: f64 = (0..4).map(|c| x.data()[(s * 4 + c) * 36 + i]).sum::<f64>() / 4.0;
                for c in 0..4 {
                    assert!((gray[(s * 4 + c) * 36 + i] - mean).abs() < 1e-12);
                }
            }
        }
    });
}

#[test]
fn gb_weights_are_a_convex_combination() {
    let mut net = LdpNet::<f64>::new(ModelConfig::micro()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for name in ["gb.fc2.w", "gb.fc2.b"] {
        net.params.get_mut(name).unwrap().data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-2.0..2.0));
    }
    // Band-constant input: every band equals the same plane.
    let plane: Vec<f64> = (0..64).map(|i| (i as f64 * 0.1).sin() * 0.5 + 0.5).collect();
    let mut data = Vec::new();
    for _ in 0..4 {
        data.extend_from_slice(&plane);
    }
    let x = Tensor::new(vec![1, 4, 8, 8], data).unwrap();
    with_blocks(&net, |g, b| {
        let xv = g.constant(x.clone()).unwrap();
        let out = b.gb_forward(g, xv).unwrap();
        let w = g.value(out.weights).data();
        assert!(w.iter().all(|&v| v > 0.0));
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (a, e) in g.value(out.gray).data().iter().zip(x.data()) {
            assert!((a - e).abs() < 1e-12);
        }
    });
}

#[test]
fn rb_delta_kernel_is_identity() {
    let mut net = LdpNet::<f64>::new(ModelConfig::micro()).unwrap();
    let k = net.params.get_mut("rb.kernel").unwrap().data_mut();
    k.iter_mut().for_each(|v| *v = 0.0);
    k[40] = 1.0;
    let x = rand_tensor(&[2, 4, 10, 10], 11, -1.0, 1.0);
    with_blocks(&net, |g, b| {
        let xv = g.constant(x.clone()).unwrap();
        let y = b.rb_forward(g, xv).unwrap();
        assert_eq!(g.value(y).data(), x.data());
    });
}

#[test]
fn rb_normalized_kernel_keeps_constant_interior() {
    let net = LdpNet::<f64>::new(ModelConfig::micro()).unwrap();
    let x = Tensor::full(&[1, 4, 20, 20], 0.7);
    with_blocks(&net, |g, b| {
        let xv = g.constant(x).unwrap();
        let y = b.rb_forward(g, xv).unwrap();
        let v = g.value(y).data();
        for c in 0..4 {
            for yy in 4..16 {
                for xx in 4..16 {
                    assert!((v[(c * 20 + yy) * 20 + xx] - 0.7).abs() < 1e-12);
                }
            }
        }
        // Zero padding attenuates the corner.
        assert!(v[0] < 0.7);
    });
}

#[test]
fn effective_weights_start_uniform() {
    let net = LdpNet::<f32>::new(ModelConfig::micro()).unwrap();
    let xs = vec![rand_tensor(&[1, 4, 8, 8], 12, 0.0, 1.0).cast::<f32>(); 3];
    let w = net.effective_spectral_weights(&xs).unwrap();
    for v in w {
        assert!((v - 0.25).abs() < 1e-7);
    }
    let single = net.gray_weights(&xs[0]).unwrap();
    assert_eq!(net.effective_spectral_weights(&xs[..1]).unwrap(), single[0]);
}

#[test]
fn pansharpen_returns_pan_sized_unit_raster() {
    let net = LdpNet::<f32>::new(ModelConfig::micro()).unwrap();
    let ms = Raster::new(4, 4, 4, vec![0.5; 64], RangeTag::Unit).unwrap();
    let pan = Raster::new(1, 16, 16, vec![0.5; 256], RangeTag::Unit).unwrap();
    let out = net.pansharpen(&ms, &pan).unwrap();
    assert_eq!((out.bands(), out.width(), out.height()), (4, 16, 16));
    assert_eq!(out.range(), RangeTag::Unit);
    let bad_pan = Raster::new(1, 12, 16, vec![0.5; 192], RangeTag::Unit).unwrap();
    assert!(net.pansharpen(&ms, &bad_pan).is_err());
}
