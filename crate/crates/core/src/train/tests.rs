use super::*;
use crate::data::{generate_synthetic, SynthConfig};

fn scalar_store(v: f32) -> ParamStore<f32> {
    let mut p = ParamStore::default();
    p.insert("x", Tensor::full(&[1], v));
    p
}

fn grad(v: f32) -> BTreeMap<String, Vec<f32>> {
    BTreeMap::from([("x".to_string(), vec![v])])
}

#[test]
fn adam_first_step_moves_by_lr() {
    let mut p = scalar_store(1.0);
    let mut s = AdamState::default();
    adam_step(&mut p, &grad(2.0), &mut s, 1e-4).unwrap();
    let x = p.get("x").unwrap().item();
    assert_eq!(format!("{x:.5}"), "0.99990");
    assert_eq!(s.step, 1);
}

#[test]
fn adam_zero_gradient_leaves_parameters() {
    let mut p = scalar_store(0.75);
    let mut s = AdamState::default();
    for _ in 0..50 {
        adam_step(&mut p, &grad(0.0), &mut s, 1e-2).unwrap();
    }
    assert_eq!(p.get("x").unwrap().item(), 0.75);
}

#[test]
fn adam_minimizes_a_parabola_like_the_scalar_recursion() {
    let mut p = scalar_store(1.0);
    let mut s = AdamState::default();
    let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
    for t in 1..=200 {
        let g = 2.0 * p.get("x").unwrap().item();
        adam_step(&mut p, &grad(g), &mut s, 0.05).unwrap();

        let g = 2.0 * x;
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        let mh = m / (1.0 - 0.9f64.powi(t));
        let vh = v / (1.0 - 0.999f64.powi(t));
        x -= 0.05 * mh / (vh.sqrt() + 1e-8);
    }
    let got = p.get("x").unwrap().item() as f64;
    assert!(x.abs() < 0.1, "{x}");
    assert!(got.abs() < 0.1, "{got}");
    assert!((got - x).abs() < 1e-4, "{got} vs {x}");
}

#[test]
fn schedule_decays_every_ten_epochs() {
    let c = TrainConfig::default();
    assert_eq!(c.lr_schedule(0), 1e-4);
    assert!((c.lr_schedule(9) - 1e-4).abs() < 1e-20);
    assert!((c.lr_schedule(10) - 1e-5).abs() < 1e-18);
    assert!((c.lr_schedule(25) - 1e-6).abs() < 1e-18);
    let lrs: Vec<f64> = (0..60).map(|e| c.lr_schedule(e)).collect();
    assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    for e in 0..60 {
        assert_eq!(lrs[e], lrs[e - e % 10]);
    }
}

#[test]
fn clip_scales_to_the_limit() {
    let mut g = BTreeMap::from([("a".to_string(), vec![3.0f32]), ("b".to_string(), vec![4.0f32])]);
    assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
    let n: f32 = g.values().flatten().map(|v| v * v).sum::<f32>().sqrt();
    assert!((n - 1.0).abs() < 1e-6);
}

#[test]
fn config_validation() {
    assert!(TrainConfig::default().validate().is_ok());
    for bad in [
        TrainConfig { lr: 0.0, ..Default::default() },
        TrainConfig { batch: 0, ..Default::default() },
        TrainConfig { clip_norm: Some(-1.0), ..Default::default() },
    ] {
        assert!(bad.validate().is_err());
    }
    let text = toml::to_string(&TrainConfig::default()).unwrap();
    assert_eq!(toml::from_str::<TrainConfig>(&text).unwrap(), TrainConfig::default());
}

fn tiny_dataset(dir: &Path) -> DatasetManifest {
    let cfg = SynthConfig {
        n_scenes: 3,
        n_test: 1,
        size: 128,
        ..SynthConfig::default()
    };
    generate_synthetic(&cfg, dir).unwrap()
}

fn small_pairs(n: usize, seed: u64) -> Vec<PatchPair> {
    let cfg = SynthConfig {
        n_scenes: n,
        n_test: 0,
        size: 32,
        seed,
        ..SynthConfig::default()
    };
    (0..n as u64)
        .map(|i| {
            let s = crate::data::synth_scene(&cfg, i).unwrap();
            PatchPair {
                id: format!("s{i}"),
                lrms: s.lrms,
                pan: s.pan,
                reference: Some(s.ms),
            }
        })
        .collect()
}

fn micro_trainer(cfg: TrainConfig) -> Trainer {
    let pairs = small_pairs(4, 0);
    Trainer::new(LdpNet::new(ModelConfig::micro()).unwrap(), cfg, &pairs[..3], &pairs[3..]).unwrap()
}

#[test]
fn first_step_is_a_descent_direction() {
    let mut t = micro_trainer(TrainConfig { batch: 2, ..Default::default() });
    let b = t.batch_at(0).unwrap();
    let (_, grads) = batch_loss(&t.net, &b, &t.cfg.loss, true).unwrap();
    let before = t.net.params.clone();
    t.step_on(&b).unwrap();
    for (name, p) in t.net.params.iter() {
        let dot: f64 = p
            .data()
            .iter()
            .zip(before.get(name).unwrap().data())
            .zip(&grads[name])
            .map(|((a, b), g)| (a - b) as f64 * *g as f64)
            .sum();
        assert!(dot <= 0.0, "{name}: {dot}");
    }
}

#[test]
fn one_step_reduces_the_batch_loss() {
    let mut t = micro_trainer(TrainConfig {
        batch: 3,
        lr: 1e-3,
        ..Default::default()
    });
    let b = t.batch_at(0).unwrap();
    let before = t.step_on(&b).unwrap().loss.total;
    let (after, _) = batch_loss(&t.net, &b, &t.cfg.loss, false).unwrap();
    assert!(after.total < before, "{} >= {before}", after.total);
}

#[test]
fn epoch_order_is_a_seeded_permutation() {
    let mut t = micro_trainer(TrainConfig { batch: 2, ..Default::default() });
    assert_eq!(t.steps_per_epoch(), 2);
    let mut e0: Vec<usize> = [t.batch_indices(0), t.batch_indices(1)].concat();
    assert_eq!(t.batch_indices(1).len(), 1);
    e0.sort_unstable();
    assert_eq!(e0, vec![0, 1, 2]);
    let again = micro_trainer(TrainConfig { batch: 2, ..Default::default() }).batch_indices(4);
    assert_eq!(t.batch_indices(4), again);
}

#[test]
fn resume_reproduces_the_next_step_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig { batch: 2, ..Default::default() };
    let mut a = micro_trainer(cfg.clone());
    a.step().unwrap();
    a.step().unwrap();
    let ck = dir.path().join("ck.ldpc");
    a.save(&ck).unwrap();
    let next_a = a.step().unwrap();

    let mut b = micro_trainer(cfg);
    b.restore(&ck).unwrap();
    assert_eq!(b.step, 2);
    let next_b = b.step().unwrap();
    assert_eq!(next_a.loss.total.to_bits(), next_b.loss.total.to_bits());
    assert_eq!(next_a, next_b);
    assert_eq!(a.net, b.net);
    assert_eq!(a.adam, b.adam);
}

#[test]
fn masked_terms_are_logged_as_zero() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = TrainConfig {
        batch: 2,
        max_steps: Some(2),
        ..Default::default()
    };
    cfg.loss.ablation = Ablation {
        use_spatial_l: false,
        use_kl: false,
    };
    let mut t = micro_trainer(cfg);
    let s = t.run(dir.path()).unwrap();
    assert_eq!(s.steps, 2);
    let log = std::fs::read_to_string(dir.path().join(TRAIN_LOG)).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines.len(), 2);
    for l in lines {
        let f: Vec<&str> = l.split_whitespace().collect();
        assert_eq!(f.len(), 9);
        assert_eq!(f[3].parse::<f64>().unwrap(), 0.0);
        assert_eq!(f[7].parse::<f64>().unwrap(), 0.0);
        assert!(f[8].parse::<f64>().unwrap() > 0.0);
    }
    assert!(dir.path().join(LAST_CHECKPOINT).exists());
    assert!(dir.path().join(BEST_CHECKPOINT).exists());
}

#[test]
fn nan_parameters_abort_with_the_batch_ids() {
    let dir = tempfile::tempdir().unwrap();
    let mut t = micro_trainer(TrainConfig {
        batch: 3,
        max_steps: Some(1),
        ..Default::default()
    });
    t.net.params.get_mut("rec.conv2.b").unwrap().data_mut()[0] = f32::NAN;
    match t.run(dir.path()) {
        Err(Error::NanLoss { step, batch }) => {
            assert_eq!(step, 0);
            assert_eq!(batch.split(',').count(), 3);
        }
        other => panic!("expected a NaN abort, got {other:?}"),
    }
    assert!(dir.path().join("nan_dump.txt").exists());
}

#[test]
fn prefetch_matches_inline_batches() {
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = TrainConfig {
        batch: 2,
        max_steps: Some(3),
        ..Default::default()
    };
    let mut a = micro_trainer(cfg.clone());
    a.run(d1.path()).unwrap();
    let mut b = micro_trainer(TrainConfig { workers: 3, ..cfg });
    b.run(d2.path()).unwrap();
    assert_eq!(a.net, b.net);
    assert_eq!(
        std::fs::read(d1.path().join(TRAIN_LOG)).unwrap(),
        std::fs::read(d2.path().join(TRAIN_LOG)).unwrap()
    );
}

#[test]
fn train_from_manifest_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let m = tiny_dataset(&dir.path().join("data"));
    let cfg = TrainConfig {
        batch: 2,
        max_steps: Some(1),
        ..Default::default()
    };
    let (net, s) = train(&m, &ModelConfig::micro(), &cfg, &dir.path().join("run")).unwrap();
    assert_eq!(s.steps, 1);
    let test = m.load_split(Split::Test).unwrap();
    let rep = evaluate_reduced(&net, &test, &MetricOptions::default()).unwrap();
    assert_eq!(rep.aggregate().len(), 4);
    assert!(rep.aggregate().iter().all(|v| v.is_finite()));
}

#[test]
fn ablation_table_has_four_labelled_rows() {
    let dir = tempfile::tempdir().unwrap();
    let m = tiny_dataset(&dir.path().join("data"));
    let cfg = TrainConfig {
        batch: 2,
        max_steps: Some(1),
        ..Default::default()
    };
    let rep = ablation_matrix(&m, &ModelConfig::micro(), &cfg, &dir.path().join("ab")).unwrap();
    let labels: Vec<&str> = rep.rows.iter().map(|r| r.label.as_str()).collect();
    assert_eq!(labels, ["basic", "+L_spatial_l", "+L_KL", "+L_spatial_l +L_KL"]);
    let t = rep.to_table();
    assert_eq!(t.lines().count(), 6);
    assert!(t.contains("SAM 12.9600") && t.contains("SCC 0.8796") && t.contains("ERGAS 3.3794") && t.contains("Q4 0.9793"));
}
