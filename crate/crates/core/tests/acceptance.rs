//! End-to-end acceptance checks. Each test prints one line:
//! `criterion <n> <name>: PASS|FAIL <values>`.
//!
//! The training criteria run for tens of minutes on one core; the heavy
//! tests take a shared lock so they do not slow each other down.

mod common;

use std::path::{Path, PathBuf};
use std::sync::{Mutex, OnceLock};

use ldpnet::autodiff::gradcheck::GradcheckOptions;
use ldpnet::autodiff::{Graph, Interp, Scale, Tensor};
use ldpnet::baselines::{brovey_fuse, ihs_fuse, pca_fuse, PcaBasis};
use ldpnet::check::{check_composite, Composite};
use ldpnet::data::{generate_synthetic, resample_raster, DatasetManifest, Split, SynthConfig, MS_PATCH, PAN_PATCH, TRAIN_FRACTION};
use ldpnet::loss::{build_loss, Ablation, LossBreakdown, LossConfig, LossInputs, LossWeights};
use ldpnet::metrics::{d_lambda, d_s, ergas, full_metrics, q4, qnr, sam, scc, MetricOptions, MetricsReport};
use ldpnet::model::{batch_tensor, upsample_raster, Blocks, LdpNet, ModelConfig};
use ldpnet::raster::{decode_raster, encode_raster, load_raster, save_raster, RangeTag, Raster};
use ldpnet::train::{evaluate_reduced, Trainer, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{op_options, OPS, OP_SEEDS};

static HEAVY: Mutex<()> = Mutex::new(());

fn heavy() -> std::sync::MutexGuard<'static, ()> {
    HEAVY.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(n: u32, name: &str, pass: bool, detail: &str) {
    println!("criterion {n} {name}: {} {detail}", if pass { "PASS" } else { "FAIL" });
}

// ---------------------------------------------------------------- 1

const COMPOSITE_TOL: f64 = 1e-3;
const COMPOSITE_SEEDS: u64 = 100;
/// Coordinates sampled per tensor per seed for the network composites.
const COMPOSITE_COORDS: usize = 4;

#[test]
fn criterion_1_gradient_correctness() {
    let _g = heavy();
    let t0 = std::time::Instant::now();
    let opts = op_options();
    let (mut op_worst, mut op_fail) = (0f64, Vec::new());
    for (name, check) in OPS {
        for seed in 0..OP_SEEDS {
            let r = check(seed, &opts).unwrap();
            op_worst = op_worst.max(r.max_rel_err);
            if !r.passed() || r.coords_checked == 0 {
                op_fail.push(format!("{name}:{seed}"));
            }
        }
    }

    let copts = GradcheckOptions {
        tol: COMPOSITE_TOL,
        max_coords: COMPOSITE_COORDS,
        ..GradcheckOptions::default()
    };
    let (mut comp_worst, mut comp_fail, mut checked, mut skipped) = (0f64, Vec::new(), 0usize, 0usize);
    for c in Composite::ALL {
        for seed in 0..COMPOSITE_SEEDS {
            let r = check_composite(c, seed, &copts).unwrap();
            comp_worst = comp_worst.max(r.max_rel_err);
            checked += r.coords_checked;
            skipped += r.kinks_skipped;
            if !r.passed() {
                comp_fail.push(format!("{}:{seed}", c.name()));
            }
        }
    }
    // Kink skips must stay rare or the check proves nothing.
    let skip_ok = skipped * 100 <= checked;
    let pass = op_fail.is_empty() && comp_fail.is_empty() && op_worst <= 1e-4 && comp_worst <= COMPOSITE_TOL && skip_ok;
    verdict(
        1,
        "gradient correctness",
        pass,
        &format!(
            "ops={} seeds={OP_SEEDS} max_rel_err={op_worst:.3e} composites={} seeds={COMPOSITE_SEEDS} max_rel_err={comp_worst:.3e} coords={checked} kinks_skipped={skipped} time={:.0}s",
            OPS.len(),
            Composite::ALL.len(),
            t0.elapsed().as_secs_f64()
        ),
    );
    assert!(op_fail.is_empty(), "op failures: {op_fail:?}");
    assert!(comp_fail.is_empty(), "composite failures: {comp_fail:?}");
    assert!(pass);
}

// ---------------------------------------------------------------- 2

#[test]
fn criterion_2_loss_fixed_point() {
    let mut net = LdpNet::<f64>::new(ModelConfig::micro()).unwrap();
    let k = net.config.rb_kernel_size;
    let kernel = net.params.get_mut("rb.kernel").unwrap().data_mut();
    kernel.iter_mut().for_each(|v| *v = 0.0);
    kernel[k * k / 2] = 1.0;
    // A zero last layer gives uniform graying weights.
    for name in ["gb.fc2.w", "gb.fc2.b"] {
        net.params.get_mut(name).unwrap().data_mut().iter_mut().for_each(|v| *v = 0.0);
    }

    // A band-constant image that is the bicubic upsampling of a low-res
    // plane; LRMS, upsampled LRMS and PAN are all consistent with it.
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let low: Vec<f64> = (0..64).map(|_| rng.gen_range(0.2..0.8)).collect();
    let mut g = Graph::<f64>::new();
    let bound = net.params.bind(&mut g).unwrap();
    let blocks = Blocks::new(&net.config, &bound);
    let low = g.constant(Tensor::new(vec![1, 1, 8, 8], low).unwrap()).unwrap();
    let plane = g.resample_by(low, Scale::Up(4), Interp::Bicubic).unwrap();
    let plane = g.detach(plane);
    let hr = g.repeat_channels(plane, 4).unwrap();
    let m = g.resample_by(hr, Scale::Down(4), Interp::Bicubic).unwrap();
    let m = g.detach(m);
    let signed = g.scalar_mul(hr, 2.0);
    let signed = g.add_scalar(signed, -1.0);
    let inp = LossInputs {
        m_hat_signed: signed,
        up_m: hr,
        pan: hr,
        m,
    };
    let lg = build_loss(&mut g, &blocks, &inp, &LossConfig::default()).unwrap();
    let b = LossBreakdown::read(&g, &lg);
    let pass = b.total <= 1e-9;
    verdict(2, "loss fixed point", pass, &format!("total={:.3e} terms=[{b}]", b.total));
    assert!(pass);
}

// ---------------------------------------------------------------- 3 and 4

/// Training settings of the recovery run. The published schedule (1e-4,
/// batch 16, 50 epochs) does not fit the step budget; the width, batch and
/// rate below do.
const RECOVERY_STEPS: u64 = 4000;
const RECOVERY_BATCH: usize = 4;
const RECOVERY_LR: f64 = 4e-3;

const ALPHA_COSINE_MIN: f64 = 0.95;
const KERNEL_DIST_MAX: f64 = 0.3;
const SAM_MAX: f64 = 5.0;
const SCC_MIN: f64 = 0.85;
const ERGAS_MAX: f64 = 4.0;

struct Run {
    net: LdpNet<f32>,
    report: MetricsReport,
    seconds: f64,
}

fn dataset() -> &'static (PathBuf, DatasetManifest) {
    static DATA: OnceLock<(PathBuf, DatasetManifest)> = OnceLock::new();
    DATA.get_or_init(|| {
        let dir = std::env::temp_dir().join(format!("ldpnet-acceptance-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        let m = generate_synthetic(&SynthConfig::default(), &dir).unwrap();
        (dir, m)
    })
}

fn train_run(ablation: Ablation) -> Run {
    let (_, manifest) = dataset();
    let mut cfg = TrainConfig {
        lr: RECOVERY_LR,
        batch: RECOVERY_BATCH,
        max_steps: Some(RECOVERY_STEPS),
        // Constant rate over the whole step budget.
        epochs: 100_000,
        decay_every: 100_000,
        seed: 0,
        ..TrainConfig::default()
    };
    cfg.loss.ablation = ablation;
    let net = LdpNet::new(ModelConfig::compact()).unwrap();
    let mut t = Trainer::from_manifest(manifest, net, cfg).unwrap();
    let t0 = std::time::Instant::now();
    while t.step < RECOVERY_STEPS {
        t.step().unwrap();
    }
    let seconds = t0.elapsed().as_secs_f64();
    let test = manifest.load_split(Split::Test).unwrap();
    let report = evaluate_reduced(&t.net, &test, &MetricOptions::default()).unwrap();
    Run {
        net: t.net,
        report,
        seconds,
    }
}

fn full_run() -> &'static Run {
    static RUN: OnceLock<Run> = OnceLock::new();
    RUN.get_or_init(|| train_run(Ablation::default()))
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Shifts the kernel by whole pixels so its centroid is nearest the centre,
/// then scales it to unit sum.
fn center_and_normalize(k: &[f64], size: usize) -> Vec<f64> {
    let sum: f64 = k.iter().sum();
    let (mut cy, mut cx) = (0.0, 0.0);
    for y in 0..size {
        for x in 0..size {
            cy += y as f64 * k[y * size + x] / sum;
            cx += x as f64 * k[y * size + x] / sum;
        }
    }
    let c = (size / 2) as f64;
    let (dy, dx) = ((c - cy).round() as isize, (c - cx).round() as isize);
    let mut out = vec![0.0; size * size];
    for y in 0..size as isize {
        for x in 0..size as isize {
            let (ty, tx) = (y + dy, x + dx);
            if (0..size as isize).contains(&ty) && (0..size as isize).contains(&tx) {
                out[ty as usize * size + tx as usize] = k[y as usize * size + x as usize];
            }
        }
    }
    let s: f64 = out.iter().sum();
    out.iter().map(|v| v / s).collect()
}

fn relative_l2(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    d / b.iter().map(|y| y * y).sum::<f64>().sqrt()
}

#[test]
fn criterion_3_degradation_recovery() {
    let _g = heavy();
    let (_, manifest) = dataset();
    let run = full_run();
    let synth = SynthConfig::default();

    let train = manifest.load_split(Split::Train).unwrap();
    let ups: Vec<Tensor<f32>> = train
        .iter()
        .map(|p| batch_tensor(&[&upsample_raster(&p.lrms, synth.ratio, Interp::Bicubic).unwrap()], |v| v as f64).unwrap())
        .collect();
    let weights = run.net.effective_spectral_weights(ups.iter()).unwrap();
    let cos = cosine(&weights, &synth.alpha);

    let size = run.net.config.rb_kernel_size;
    let learned = center_and_normalize(&run.net.blur_kernel(), size);
    let truth: Vec<f64> = manifest.true_kernel().unwrap().unwrap().data().iter().map(|&v| v as f64).collect();
    let kdist = relative_l2(&learned, &truth);

    let (s, c, e) = (run.report.get("SAM").unwrap(), run.report.get("SCC").unwrap(), run.report.get("ERGAS").unwrap());
    let checks = [
        cos >= ALPHA_COSINE_MIN,
        kdist <= KERNEL_DIST_MAX,
        s <= SAM_MAX,
        c >= SCC_MIN,
        e <= ERGAS_MAX,
    ];
    let pass = checks.iter().all(|&ok| ok);
    verdict(
        3,
        "degradation recovery",
        pass,
        &format!(
            "alpha_cosine={cos:.4} (>= {ALPHA_COSINE_MIN}) kernel_rel_l2={kdist:.4} (<= {KERNEL_DIST_MAX}) SAM={s:.4} (<= {SAM_MAX}) SCC={c:.4} (>= {SCC_MIN}) ERGAS={e:.4} (<= {ERGAS_MAX}) weights={weights:.4?} steps={RECOVERY_STEPS} train_time={:.0}s",
            run.seconds
        ),
    );
    assert!(pass, "checks [cosine, kernel, SAM, SCC, ERGAS] = {checks:?}");
}

#[test]
fn criterion_4_ablation_direction() {
    let _g = heavy();
    let full = full_run();
    let no_kl = train_run(Ablation {
        use_spatial_l: true,
        use_kl: false,
    });
    let (fs, fe) = (full.report.get("SAM").unwrap(), full.report.get("ERGAS").unwrap());
    let (ns, ne) = (no_kl.report.get("SAM").unwrap(), no_kl.report.get("ERGAS").unwrap());
    let pass = fs <= ns && fe <= ne;
    verdict(
        4,
        "ablation direction",
        pass,
        &format!("full: SAM={fs:.4} ERGAS={fe:.4}; no KL: SAM={ns:.4} ERGAS={ne:.4}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 5

fn random_raster(bands: usize, size: usize, seed: u64) -> Raster {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..bands * size * size).map(|_| rng.gen_range(0.05f32..0.95)).collect();
    Raster::new(bands, size, size, data, RangeTag::Unit).unwrap()
}

/// Correlated prediction: the reference plus independent noise.
fn perturbed(r: &Raster, seed: u64, amp: f32) -> Raster {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = r.data().iter().map(|v| (v + rng.gen_range(-amp..amp)).clamp(0.0, 1.0)).collect();
    Raster::new(r.bands(), r.width(), r.height(), data, RangeTag::Unit).unwrap()
}

/// Brute-force Q4 from raw moments over non-overlapping windows.
fn q4_oracle(x: &Raster, y: &Raster, win: usize) -> f64 {
    let w = x.width();
    let (mut total, mut count) = (0.0, 0);
    for y0 in (0..=x.height() - win).step_by(win) {
        for x0 in (0..=w - win).step_by(win) {
            let n = (win * win) as f64;
            let (mut sx, mut sy) = ([0.0f64; 4], [0.0f64; 4]);
            let (mut sxx, mut syy) = (0.0, 0.0);
            // Raw sums of the quaternion product x * conj(y).
            let (mut p0, mut p1, mut p2, mut p3) = (0.0, 0.0, 0.0, 0.0);
            for yy in y0..y0 + win {
                for xx in x0..x0 + win {
                    let i = yy * w + xx;
                    let a: Vec<f64> = (0..4).map(|b| x.band(b)[i] as f64).collect();
                    let c: Vec<f64> = (0..4).map(|b| y.band(b)[i] as f64).collect();
                    for b in 0..4 {
                        sx[b] += a[b];
                        sy[b] += c[b];
                        sxx += a[b] * a[b];
                        syy += c[b] * c[b];
                    }
                    // a * conj(c) with conj(c) = (c0, -c1, -c2, -c3).
                    p0 += a[0] * c[0] + a[1] * c[1] + a[2] * c[2] + a[3] * c[3];
                    p1 += -a[0] * c[1] + a[1] * c[0] - a[2] * c[3] + a[3] * c[2];
                    p2 += -a[0] * c[2] + a[1] * c[3] + a[2] * c[0] - a[3] * c[1];
                    p3 += -a[0] * c[3] - a[1] * c[2] + a[2] * c[1] + a[3] * c[0];
                }
            }
            let mx: Vec<f64> = sx.iter().map(|v| v / n).collect();
            let my: Vec<f64> = sy.iter().map(|v| v / n).collect();
            let mxn2: f64 = mx.iter().map(|v| v * v).sum();
            let myn2: f64 = my.iter().map(|v| v * v).sum();
            let vx = sxx / n - mxn2;
            let vy = syy / n - myn2;
            // Covariance = E[x conj(y)] - mean_x conj(mean_y).
            let m0 = mx[0] * my[0] + mx[1] * my[1] + mx[2] * my[2] + mx[3] * my[3];
            let m1 = -mx[0] * my[1] + mx[1] * my[0] - mx[2] * my[3] + mx[3] * my[2];
            let m2 = -mx[0] * my[2] + mx[1] * my[3] + mx[2] * my[0] - mx[3] * my[1];
            let m3 = -mx[0] * my[3] - mx[1] * my[2] + mx[2] * my[1] + mx[3] * my[0];
            let cov = [p0 / n - m0, p1 / n - m1, p2 / n - m2, p3 / n - m3];
            let cov_abs = cov.iter().map(|v| v * v).sum::<f64>().sqrt();
            total += 4.0 * cov_abs * mxn2.sqrt() * myn2.sqrt() / ((vx + vy) * (mxn2 + myn2));
            count += 1;
        }
    }
    total / count as f64
}

/// Brute-force universal quality index of two planes from raw moments.
fn uiqi_oracle(a: &[f32], b: &[f32], w: usize, h: usize, win: usize) -> f64 {
    let (mut total, mut count) = (0.0, 0);
    for y0 in (0..=h - win).step_by(win) {
        for x0 in (0..=w - win).step_by(win) {
            let n = (win * win) as f64;
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for y in y0..y0 + win {
                for x in x0..x0 + win {
                    let (p, q) = (a[y * w + x] as f64, b[y * w + x] as f64);
                    sa += p;
                    sb += q;
                    saa += p * p;
                    sbb += q * q;
                    sab += p * q;
                }
            }
            let (ma, mb) = (sa / n, sb / n);
            let (va, vb, cab) = (saa / n - ma * ma, sbb / n - mb * mb, sab / n - ma * mb);
            total += 4.0 * cab * ma * mb / ((va + vb) * (ma * ma + mb * mb));
            count += 1;
        }
    }
    total / count as f64
}

fn d_lambda_oracle(fused: &Raster, lrms: &Raster, ratio: usize, win: usize) -> f64 {
    let up = resample_raster(lrms, Scale::Up(ratio), Interp::Bicubic).unwrap();
    let (w, h, c) = (fused.width(), fused.height(), fused.bands());
    let mut acc = 0.0;
    for i in 0..c {
        for j in 0..c {
            if i != j {
                acc += (uiqi_oracle(fused.band(i), fused.band(j), w, h, win) - uiqi_oracle(up.band(i), up.band(j), w, h, win)).abs();
            }
        }
    }
    acc / (c * (c - 1)) as f64
}

#[test]
fn criterion_5_metric_identities_and_oracles() {
    let mut worst_identity = 0f64;
    let mut worst_oracle = 0f64;
    let mut qnr_exact = true;
    for seed in 0..5 {
        let r = random_raster(4, 64, seed);
        let ident = [
            sam(&r, &r).unwrap(),
            1.0 - scc(&r, &r).unwrap(),
            ergas(&r, &r, 4).unwrap(),
            1.0 - q4(&r, &r, 32).unwrap(),
        ];
        worst_identity = ident.iter().fold(worst_identity, |m, v| m.max(v.abs()));

        let x = perturbed(&r, seed + 100, 0.2);
        for win in [16, 32] {
            worst_oracle = worst_oracle.max((q4(&x, &r, win).unwrap() - q4_oracle(&x, &r, win)).abs());
        }
        let lrms = random_raster(4, 16, seed + 200);
        let pan = random_raster(1, 64, seed + 300);
        for win in [16, 32] {
            let dl = d_lambda(&x, &lrms, 4, win).unwrap();
            worst_oracle = worst_oracle.max((dl - d_lambda_oracle(&x, &lrms, 4, win)).abs());
            let ds = d_s(&x, &lrms, &pan, 4, win).unwrap();
            let full = full_metrics(&x, &lrms, &pan, &MetricOptions { ratio: 4, window: win }).unwrap();
            qnr_exact &= full[2] == (1.0 - dl) * (1.0 - ds) && qnr(dl, ds) == (1.0 - dl) * (1.0 - ds);
        }
    }
    let pass = worst_identity <= 1e-9 && worst_oracle <= 1e-10 && qnr_exact;
    verdict(
        5,
        "metric identities and oracles",
        pass,
        &format!("identity_err={worst_identity:.3e} (<= 1e-9) oracle_err={worst_oracle:.3e} (<= 1e-10) qnr_exact={qnr_exact}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 6

fn max_diff(a: &Raster, b: &Raster) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs() as f64).fold(0.0, f64::max)
}

fn plane(v: Vec<f64>, size: usize) -> Raster {
    Raster::new(1, size, size, v.into_iter().map(|x| x as f32).collect(), RangeTag::Raw).unwrap()
}

#[test]
fn criterion_6_baseline_contracts() {
    let mut worst_identity = 0f64;
    let mut worst_round_trip = 0f64;
    for seed in 0..5 {
        let ms = random_raster(4, 16, seed);
        let up = resample_raster(&ms, Scale::Up(4), Interp::Bicubic).unwrap();
        let expected = up.clone().clamped(RangeTag::Unit);
        let n = up.plane_len();
        let intensity: Vec<f64> = (0..n).map(|i| (0..4).map(|b| up.band(b)[i] as f64).sum::<f64>() / 4.0).collect();
        let pan = plane(intensity, 64);
        worst_identity = worst_identity.max(max_diff(&ihs_fuse(&ms, &pan, 4).unwrap().fused, &expected));
        worst_identity = worst_identity.max(max_diff(&brovey_fuse(&ms, &pan, 4).unwrap().fused, &expected));

        let basis = PcaBasis::fit(&up);
        let scores = basis.forward(&up);
        let back = basis.inverse(&scores);
        for (b, p) in back.iter().enumerate() {
            for (v, u) in p.iter().zip(up.band(b)) {
                worst_round_trip = worst_round_trip.max((v - *u as f64).abs());
            }
        }
        let pca = pca_fuse(&ms, &plane(scores[0].clone(), 64), 4).unwrap();
        assert!(!pca.fallback);
        worst_identity = worst_identity.max(max_diff(&pca.fused, &expected));
    }
    let pass = worst_identity <= 1e-6 && worst_round_trip <= 1e-5;
    verdict(
        6,
        "baseline contracts",
        pass,
        &format!("identity_err={worst_identity:.3e} (<= 1e-6) pca_round_trip={worst_round_trip:.3e} (<= 1e-5)"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 7

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn criterion_7_determinism_and_persistence() {
    let dir = tempfile::tempdir().unwrap();
    let small = SynthConfig {
        n_scenes: 4,
        n_test: 1,
        ..SynthConfig::default()
    };
    let a = generate_synthetic(&small, &dir.path().join("a")).unwrap();
    generate_synthetic(&small, &dir.path().join("b")).unwrap();
    let (fa, fb) = (files_under(&dir.path().join("a")), files_under(&dir.path().join("b")));
    let data_identical = fa == fb
        && fa
            .iter()
            .all(|f| std::fs::read(dir.path().join("a").join(f)).unwrap() == std::fs::read(dir.path().join("b").join(f)).unwrap());

    let mut r = random_raster(3, 17, 9).with_range(RangeTag::Raw).unwrap();
    r.band_mut(1)[5] = -0.0;
    r.band_mut(2)[7] = f32::MIN_POSITIVE / 2.0;
    r.set_meta("sensor", "synthetic");
    let rp = dir.path().join("r.ldpr");
    save_raster(&r, &rp).unwrap();
    let back = load_raster(&rp).unwrap();
    let bytes_exact = encode_raster(&back) == encode_raster(&r) && decode_raster(&encode_raster(&r)).unwrap().data() == r.data();
    let raster_exact = bytes_exact
        && back.data().iter().zip(r.data()).all(|(x, y)| x.to_bits() == y.to_bits())
        && back.meta() == r.meta()
        && back.range() == r.range();

    let cfg = TrainConfig {
        batch: 2,
        ..TrainConfig::default()
    };
    let make = || Trainer::from_manifest(&a, LdpNet::new(ModelConfig::micro()).unwrap(), cfg.clone()).unwrap();
    let mut t1 = make();
    t1.step().unwrap();
    t1.step().unwrap();
    let ck = dir.path().join("ck.ldpc");
    t1.save(&ck).unwrap();
    let next1 = t1.step().unwrap();
    let mut t2 = make();
    t2.restore(&ck).unwrap();
    let next2 = t2.step().unwrap();
    let resume_exact = next1.loss.total.to_bits() == next2.loss.total.to_bits() && t1.net == t2.net && t1.adam == t2.adam;

    let pass = data_identical && raster_exact && resume_exact;
    verdict(
        7,
        "determinism and persistence",
        pass,
        &format!("dataset_bit_identical={data_identical} raster_round_trip={raster_exact} resume_next_step_bitwise={resume_exact}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 8

#[test]
fn criterion_8_hyperparameter_fidelity() {
    let t = TrainConfig::default();
    let w = LossWeights::default();
    let snapshot = [
        ("lr", t.lr, 1e-4),
        ("lr_decay", t.lr_decay, 0.1),
        ("decay_every", t.decay_every as f64, 10.0),
        ("epochs", t.epochs as f64, 50.0),
        ("batch", t.batch as f64, 16.0),
        ("alpha", w.alpha, 1.0),
        ("beta", w.beta, 1.0),
        ("mu", w.mu, 0.01),
        ("delta", w.delta, 10.0),
        ("gamma", w.gamma, 20.0),
        ("pan_patch", PAN_PATCH as f64, 128.0),
        ("ms_patch", MS_PATCH as f64, 32.0),
        ("train_fraction", TRAIN_FRACTION, 0.9),
    ];
    let wrong: Vec<String> = snapshot
        .iter()
        .filter(|(_, got, want)| got != want)
        .map(|(name, got, want)| format!("{name}={got} (want {want})"))
        .collect();
    let pass = wrong.is_empty() && t.loss.weights == w;
    verdict(8, "hyperparameter fidelity", pass, &format!("checked={} mismatches={wrong:?}", snapshot.len()));
    assert!(pass);
}
