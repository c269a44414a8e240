//! Unsupervised training loop: Adam, step-decay schedule, checkpoints,
//! validation and the loss ablation matrix.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::mpsc::sync_channel;
use std::sync::Arc;
use std::thread;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Interp, Tensor};
use crate::data::{DatasetManifest, PatchPair, Split};
use crate::error::{Error, Result};
use crate::loss::{build_loss, Ablation, LossBreakdown, LossConfig, LossInputs};
use crate::metrics::{reduced_metrics, MetricOptions, MetricsReport, Protocol};
use crate::model::checkpoint::{load_checkpoint, save_checkpoint, TrainState};
use crate::model::{stack_pan, upsample_raster, Blocks, LdpNet, ModelConfig, ParamStore};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Published full-configuration scores on WorldView-2, kept as context for
/// the ablation report. They are not expected to be reproduced here.
pub const WV2_REFERENCE: [(&str, f64); 4] = [("SAM", 12.9600), ("SCC", 0.8796), ("ERGAS", 3.3794), ("Q4", 0.9793)];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub lr_decay: f64,
    /// Epochs between learning-rate decays.
    pub decay_every: usize,
    pub epochs: usize,
    pub batch: usize,
    pub loss: LossConfig,
    pub seed: u64,
    /// Steps between resumable checkpoints; 0 writes one at the end only.
    pub checkpoint_every: u64,
    /// Steps between validation passes; 0 validates at every epoch end.
    pub eval_every: u64,
    /// Hard cap on optimizer steps, regardless of `epochs`.
    pub max_steps: Option<u64>,
    /// Global gradient-norm clip. Off by default.
    pub clip_norm: Option<f64>,
    /// Batch prefetch threads. Results are deterministic for any value,
    /// but only `1` is covered by the bitwise resume guarantee.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            lr_decay: 0.1,
            decay_every: 10,
            epochs: 50,
            batch: 16,
            loss: LossConfig::default(),
            seed: 0,
            checkpoint_every: 0,
            eval_every: 0,
            max_steps: None,
            clip_norm: None,
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch == 0 {
            return Err(Error::InvalidArgument("batch must be at least 1".into()));
        }
        if self.decay_every == 0 {
            return Err(Error::InvalidArgument("decay_every must be at least 1".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::InvalidArgument(format!("lr_decay must be in (0, 1], got {}", self.lr_decay)));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::InvalidArgument(format!("clip_norm must be positive, got {c}")));
            }
        }
        self.loss.weights.validate()
    }

    /// `lr0 * decay^floor(epoch / decay_every)`.
    pub fn lr_schedule(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi((epoch / self.decay_every) as i32)
    }
}

/// Bias-corrected Adam moments, one pair per named parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: BTreeMap<String, Tensor<f32>>,
    pub v: BTreeMap<String, Tensor<f32>>,
}

impl Default for AdamState {
    fn default() -> Self {
        AdamState {
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }
}

/// One Adam update. Parameters without an entry in `grads` are left alone.
pub fn adam_step(params: &mut ParamStore<f32>, grads: &BTreeMap<String, Vec<f32>>, state: &mut AdamState, lr: f64) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for (name, p) in params.iter_mut() {
        let Some(g) = grads.get(name) else { continue };
        if g.len() != p.numel() {
            return Err(Error::Shape(format!("gradient for {name} has {} values, parameter has {}", g.len(), p.numel())));
        }
        let m = state.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape()));
        let v = state.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape()));
        if m.shape() != p.shape() || v.shape() != p.shape() {
            return Err(Error::Shape(format!("optimizer moments for {name} do not match the parameter")));
        }
        for (((w, &g), m), v) in p.data_mut().iter_mut().zip(g).zip(m.data_mut()).zip(v.data_mut()) {
            let g = g as f64;
            let mn = state.beta1 * *m as f64 + (1.0 - state.beta1) * g;
            let vn = state.beta2 * *v as f64 + (1.0 - state.beta2) * g * g;
            *m = mn as f32;
            *v = vn as f32;
            let update = lr * (mn / c1) / ((vn / c2).sqrt() + state.eps);
            *w = (*w as f64 - update) as f32;
        }
    }
    Ok(())
}

/// Scales all gradients so their joint L2 norm is at most `max`. Returns
/// the norm before clipping.
pub fn clip_grad_norm(grads: &mut BTreeMap<String, Vec<f32>>, max: f64) -> f64 {
    let norm = grads.values().flatten().map(|&g| (g as f64) * (g as f64)).sum::<f64>().sqrt();
    if norm > max {
        let s = max / norm;
        grads.values_mut().flatten().for_each(|g| *g = (*g as f64 * s) as f32);
    }
    norm
}

/// A training pair prepared once: unit-range `↑m`, stacked PAN and `m`.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    up: Vec<f32>,
    pan: Vec<f32>,
    m: Vec<f32>,
}

/// Network-ready tensors for one batch.
#[derive(Clone, Debug)]
pub struct Batch {
    pub ids: Vec<String>,
    pub up: Tensor<f32>,
    pub pan: Tensor<f32>,
    pub m: Tensor<f32>,
}

/// Fixed sample geometry of a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Geometry {
    bands: usize,
    h: usize,
    w: usize,
    ratio: usize,
}

fn prepare(pairs: &[PatchPair], cfg: &ModelConfig) -> Result<(Vec<Sample>, Option<Geometry>)> {
    let mut geo: Option<Geometry> = None;
    let mut out = Vec::with_capacity(pairs.len());
    for p in pairs {
        if p.lrms.bands() != cfg.bands {
            return Err(Error::Shape(format!("{}: {} bands, model expects {}", p.id, p.lrms.bands(), cfg.bands)));
        }
        let g = Geometry {
            bands: cfg.bands,
            h: p.pan.height(),
            w: p.pan.width(),
            ratio: cfg.ratio,
        };
        if p.pan.width() != cfg.ratio * p.lrms.width() || p.pan.height() != cfg.ratio * p.lrms.height() {
            return Err(Error::Dimensions(format!("{}: PAN is not {}x the LRMS", p.id, cfg.ratio)));
        }
        match geo {
            None => geo = Some(g),
            Some(prev) if prev != g => return Err(Error::Shape(format!("{}: patch size differs from the rest of the set", p.id))),
            _ => {}
        }
        let up = upsample_raster(&p.lrms, cfg.ratio, Interp::Bicubic)?;
        let pan = stack_pan(&p.pan, cfg.bands)?;
        out.push(Sample {
            id: p.id.clone(),
            up: up.into_data(),
            pan: pan.into_data(),
            m: p.lrms.data().to_vec(),
        });
    }
    Ok((out, geo))
}

fn assemble(samples: &[Sample], idx: &[usize], geo: Geometry) -> Result<Batch> {
    let n = idx.len();
    let (c, h, w, r) = (geo.bands, geo.h, geo.w, geo.ratio);
    let mut up = Vec::with_capacity(n * c * h * w);
    let mut pan = Vec::with_capacity(n * c * h * w);
    let mut m = Vec::with_capacity(n * c * h * w / (r * r));
    for &i in idx {
        up.extend_from_slice(&samples[i].up);
        pan.extend_from_slice(&samples[i].pan);
        m.extend_from_slice(&samples[i].m);
    }
    Ok(Batch {
        ids: idx.iter().map(|&i| samples[i].id.clone()).collect(),
        up: Tensor::new(vec![n, c, h, w], up)?,
        pan: Tensor::new(vec![n, c, h, w], pan)?,
        m: Tensor::new(vec![n, c, h / r, w / r], m)?,
    })
}

fn signed(t: &Tensor<f32>) -> Tensor<f32> {
    let data = t.data().iter().map(|&v| 2.0 * v - 1.0).collect();
    Tensor::new(t.shape().to_vec(), data).expect("same shape")
}

/// Loss of `net` on one batch. With `grads` set, also returns the
/// gradient of every parameter.
pub fn batch_loss(net: &LdpNet<f32>, batch: &Batch, cfg: &LossConfig, grads: bool) -> Result<(LossBreakdown, BTreeMap<String, Vec<f32>>)> {
    let mut g = Graph::<f32>::new();
    let bound = net.params.bind_with(&mut g, grads)?;
    let blocks = Blocks::new(&net.config, &bound);
    let up_s = g.constant(signed(&batch.up))?;
    let pan_s = g.constant(signed(&batch.pan))?;
    let m_hat_signed = blocks.fuse(&mut g, up_s, pan_s)?;
    let inputs = LossInputs {
        m_hat_signed,
        up_m: g.constant(batch.up.clone())?,
        pan: g.constant(batch.pan.clone())?,
        m: g.constant(batch.m.clone())?,
    };
    let lg = build_loss(&mut g, &blocks, &inputs, cfg)?;
    let br = LossBreakdown::read(&g, &lg);
    let mut out = BTreeMap::new();
    if grads && br.is_finite() {
        let mut gr = g.backward(lg.total)?;
        for (name, &v) in bound.iter() {
            let numel = net.params.get(name).map_or(0, Tensor::numel);
            out.insert(name.clone(), gr.take(v).unwrap_or_else(|| vec![0.0; numel]));
        }
    }
    Ok((br, out))
}

/// Mean loss over a sample set, in batches of `batch`.
fn mean_loss(net: &LdpNet<f32>, samples: &[Sample], geo: Geometry, batch: usize, cfg: &LossConfig) -> Result<LossBreakdown> {
    let mut acc = LossBreakdown::default();
    let idx: Vec<usize> = (0..samples.len()).collect();
    for chunk in idx.chunks(batch.max(1)) {
        let b = assemble(samples, chunk, geo)?;
        let (br, _) = batch_loss(net, &b, cfg, false)?;
        acc.accumulate(&br, chunk.len() as f64, samples.len() as f64);
    }
    Ok(acc)
}

/// Per-step record written to the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
}

impl std::fmt::Display for StepRecord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} {} {:.6e} {}", self.step, self.epoch, self.lr, self.loss)
    }
}

/// Outcome of a finished run.
#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub steps: u64,
    pub last_checkpoint: PathBuf,
    pub best_checkpoint: Option<PathBuf>,
    pub best_val: Option<f64>,
    pub final_train: Option<LossBreakdown>,
    pub final_val: Option<LossBreakdown>,
}

pub const TRAIN_LOG: &str = "train.log";
pub const VAL_LOG: &str = "val.log";
pub const LAST_CHECKPOINT: &str = "last.ldpc";
pub const BEST_CHECKPOINT: &str = "best.ldpc";

/// Owns the model, the optimizer and the prepared data of one run.
pub struct Trainer {
    pub net: LdpNet<f32>,
    pub cfg: TrainConfig,
    pub adam: AdamState,
    /// Optimizer steps already taken.
    pub step: u64,
    train: Arc<Vec<Sample>>,
    val: Vec<Sample>,
    geo: Geometry,
    order_cache: Option<(usize, Vec<usize>)>,
}

impl Trainer {
    pub fn new(net: LdpNet<f32>, cfg: TrainConfig, train: &[PatchPair], val: &[PatchPair]) -> Result<Self> {
        cfg.validate()?;
        net.config.validate()?;
        let (train, geo) = prepare(train, &net.config)?;
        let geo = geo.ok_or_else(|| Error::InvalidArgument("training split is empty".into()))?;
        let (val, vgeo) = prepare(val, &net.config)?;
        if vgeo.is_some_and(|v| v != geo) {
            return Err(Error::Shape("validation patches differ in size from training patches".into()));
        }
        Ok(Trainer {
            net,
            cfg,
            adam: AdamState::default(),
            step: 0,
            train: Arc::new(train),
            val,
            geo,
            order_cache: None,
        })
    }

    pub fn from_manifest(manifest: &DatasetManifest, net: LdpNet<f32>, cfg: TrainConfig) -> Result<Self> {
        if manifest.ratio != net.config.ratio {
            return Err(Error::Manifest(format!("dataset ratio {} differs from model ratio {}", manifest.ratio, net.config.ratio)));
        }
        let train = manifest.load_split(Split::Train)?;
        let val = manifest.load_split(Split::Val)?;
        Self::new(net, cfg, &train, &val)
    }

    /// Restores parameters, moments and loop position from a checkpoint.
    pub fn restore(&mut self, path: &Path) -> Result<()> {
        let ck = load_checkpoint(path)?;
        if ck.net.config != self.net.config {
            return Err(Error::Checkpoint("checkpoint architecture differs from the configured model".into()));
        }
        let state = ck.state.ok_or_else(|| Error::Checkpoint("checkpoint has no optimizer state".into()))?;
        self.net = ck.net;
        self.step = state.train_step;
        self.adam = AdamState {
            step: state.optimizer_step,
            m: state.first_moments,
            v: state.second_moments,
            ..AdamState::default()
        };
        self.order_cache = None;
        Ok(())
    }

    pub fn train_state(&self) -> TrainState {
        TrainState {
            optimizer_step: self.adam.step,
            train_step: self.step,
            first_moments: self.adam.m.clone(),
            second_moments: self.adam.v.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, &self.net, Some(&self.train_state()))
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.train.len().div_ceil(self.cfg.batch)
    }

    pub fn total_steps(&self) -> u64 {
        let full = (self.cfg.epochs * self.steps_per_epoch()) as u64;
        self.cfg.max_steps.map_or(full, |m| m.min(full))
    }

    pub fn epoch_of(&self, step: u64) -> usize {
        step as usize / self.steps_per_epoch()
    }

    /// Sample indices of the batch taken at `step`. Each epoch is a fresh
    /// permutation seeded by `seed + epoch`.
    pub fn batch_indices(&mut self, step: u64) -> Vec<usize> {
        let spe = self.steps_per_epoch();
        let epoch = step as usize / spe;
        let pos = step as usize % spe;
        if self.order_cache.as_ref().map(|(e, _)| *e) != Some(epoch) {
            self.order_cache = Some((epoch, epoch_order(self.train.len(), self.cfg.seed, epoch)));
        }
        let order = &self.order_cache.as_ref().expect("set above").1;
        let end = ((pos + 1) * self.cfg.batch).min(order.len());
        order[pos * self.cfg.batch..end].to_vec()
    }

    pub fn batch_at(&mut self, step: u64) -> Result<Batch> {
        let idx = self.batch_indices(step);
        assemble(&self.train, &idx, self.geo)
    }

    /// One optimizer step on a prepared batch. Returns the loss before the
    /// update.
    pub fn step_on(&mut self, batch: &Batch) -> Result<StepRecord> {
        let epoch = self.epoch_of(self.step);
        let lr = self.cfg.lr_schedule(epoch);
        let (loss, mut grads) = batch_loss(&self.net, batch, &self.cfg.loss, true)?;
        if !loss.is_finite() {
            return Err(Error::NanLoss {
                step: self.step,
                batch: batch.ids.join(","),
            });
        }
        if let Some(c) = self.cfg.clip_norm {
            clip_grad_norm(&mut grads, c);
        }
        adam_step(&mut self.net.params, &grads, &mut self.adam, lr)?;
        if !self.net.params.all_finite() {
            return Err(Error::NanLoss {
                step: self.step,
                batch: batch.ids.join(","),
            });
        }
        let rec = StepRecord {
            step: self.step,
            epoch,
            lr,
            loss,
        };
        self.step += 1;
        Ok(rec)
    }

    pub fn step(&mut self) -> Result<StepRecord> {
        let b = self.batch_at(self.step)?;
        self.step_on(&b)
    }

    pub fn validate(&self) -> Result<Option<LossBreakdown>> {
        if self.val.is_empty() {
            return Ok(None);
        }
        mean_loss(&self.net, &self.val, self.geo, self.cfg.batch, &self.cfg.loss).map(Some)
    }

    /// Runs until `total_steps`, logging and checkpointing into `out`.
    /// A run restored from a checkpoint appends to the existing logs.
    pub fn run(&mut self, out: &Path) -> Result<TrainSummary> {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let append = self.step > 0;
        let mut log = open_log(&out.join(TRAIN_LOG), append)?;
        let mut vlog = open_log(&out.join(VAL_LOG), append)?;
        let total = self.total_steps();
        let spe = self.steps_per_epoch() as u64;
        let last = out.join(LAST_CHECKPOINT);
        let best_path = out.join(BEST_CHECKPOINT);
        let mut best: Option<f64> = None;
        let mut best_written = false;
        let mut final_train = None;
        let mut final_val = None;

        let prefetch = self.spawn_prefetch(total);
        while self.step < total {
            let batch = match &prefetch {
                Some(rx) => rx.recv().map_err(|_| Error::InvalidArgument("prefetch thread stopped".into()))??,
                None => self.batch_at(self.step)?,
            };
            let rec = match self.step_on(&batch) {
                Ok(r) => r,
                Err(e @ Error::NanLoss { .. }) => {
                    let dump = format!("{e}\nbatch ids: {}\n", batch.ids.join(" "));
                    let _ = std::fs::write(out.join("nan_dump.txt"), dump);
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            writeln!(log, "{rec}").map_err(|e| Error::io(out.join(TRAIN_LOG), e))?;
            log::debug!("{rec}");
            final_train = Some(rec.loss);
            let done = self.step;
            let eval_now = if self.cfg.eval_every == 0 { done % spe == 0 } else { done % self.cfg.eval_every == 0 };
            if eval_now || done == total {
                if let Some(v) = self.validate()? {
                    writeln!(vlog, "{} {} {}", done, self.epoch_of(done - 1), v).map_err(|e| Error::io(out.join(VAL_LOG), e))?;
                    log::info!("step {done}/{total} val total {:.6e}", v.total);
                    if best.map_or(true, |b| v.total < b) {
                        best = Some(v.total);
                        save_checkpoint(&best_path, &self.net, None)?;
                        best_written = true;
                    }
                    final_val = Some(v);
                }
            }
            if (self.cfg.checkpoint_every > 0 && done % self.cfg.checkpoint_every == 0) || done == total {
                self.save(&last)?;
            }
        }
        if !last.exists() {
            self.save(&last)?;
        }
        log.flush().map_err(|e| Error::io(out.join(TRAIN_LOG), e))?;
        Ok(TrainSummary {
            steps: self.step,
            last_checkpoint: last,
            best_checkpoint: best_written.then_some(best_path),
            best_val: best,
            final_train,
            final_val,
        })
    }

    fn spawn_prefetch(&self, total: u64) -> Option<std::sync::mpsc::Receiver<Result<Batch>>> {
        if self.cfg.workers <= 1 || self.step >= total {
            return None;
        }
        let (tx, rx) = sync_channel(self.cfg.workers);
        let samples = Arc::clone(&self.train);
        let (geo, seed, batch, start) = (self.geo, self.cfg.seed, self.cfg.batch, self.step);
        let spe = samples.len().div_ceil(batch);
        thread::spawn(move || {
            let mut cached: Option<(usize, Vec<usize>)> = None;
            for step in start..total {
                let epoch = step as usize / spe;
                let pos = step as usize % spe;
                if cached.as_ref().map(|(e, _)| *e) != Some(epoch) {
                    cached = Some((epoch, epoch_order(samples.len(), seed, epoch)));
                }
                let order = &cached.as_ref().expect("set above").1;
                let idx = &order[pos * batch..((pos + 1) * batch).min(order.len())];
                if tx.send(assemble(&samples, idx, geo)).is_err() {
                    return;
                }
            }
        });
        Some(rx)
    }
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(epoch as u64));
    order.shuffle(&mut rng);
    order
}

fn open_log(path: &Path, append: bool) -> Result<File> {
    OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(path)
        .map_err(|e| Error::io(path, e))
}

/// Trains a fresh model on the train/val splits of `manifest`.
pub fn train(manifest: &DatasetManifest, model: &ModelConfig, cfg: &TrainConfig, out: &Path) -> Result<(LdpNet<f32>, TrainSummary)> {
    let net = LdpNet::new(model.clone())?;
    let mut t = Trainer::from_manifest(manifest, net, cfg.clone())?;
    let summary = t.run(out)?;
    Ok((t.net, summary))
}

/// Continues a run from its last checkpoint.
pub fn resume(manifest: &DatasetManifest, checkpoint: &Path, cfg: &TrainConfig, out: &Path) -> Result<(LdpNet<f32>, TrainSummary)> {
    let ck = load_checkpoint(checkpoint)?;
    let mut t = Trainer::from_manifest(manifest, ck.net, cfg.clone())?;
    t.restore(checkpoint)?;
    let summary = t.run(out)?;
    Ok((t.net, summary))
}

/// Reduced-resolution scores of `net` on pairs that carry a reference.
pub fn evaluate_reduced(net: &LdpNet<f32>, pairs: &[PatchPair], opt: &MetricOptions) -> Result<MetricsReport> {
    let mut rep = MetricsReport::new(Protocol::Reduced);
    for p in pairs {
        let reference = p
            .reference
            .as_ref()
            .ok_or_else(|| Error::Protocol(format!("{}: reduced protocol needs a reference", p.id)))?;
        let fused = net.pansharpen(&p.lrms, &p.pan)?;
        rep.push(p.id.clone(), reduced_metrics(&fused, reference, opt)?)?;
    }
    Ok(rep)
}

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub label: String,
    pub ablation: Ablation,
    pub report: MetricsReport,
    pub summary: TrainSummary,
}

#[derive(Clone, Debug)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, label: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn to_table(&self) -> String {
        let cols = Protocol::Reduced.columns();
        let mut s = format!("{:<22}", "config");
        for c in cols {
            let _ = write!(s, " {c:>10}");
        }
        s.push('\n');
        for r in &self.rows {
            let _ = write!(s, "{:<22}", r.label);
            for v in r.report.aggregate() {
                let _ = write!(s, " {v:>10.4}");
            }
            s.push('\n');
        }
        s.push_str("# published WorldView-2 full configuration, for context only:");
        for (name, v) in WV2_REFERENCE {
            let _ = write!(s, " {name} {v:.4}");
        }
        s.push('\n');
        s
    }
}

/// Trains the four loss configurations from the same initialization and
/// scores each on the test split (or validation split when the test split
/// is empty).
pub fn ablation_matrix(manifest: &DatasetManifest, model: &ModelConfig, cfg: &TrainConfig, out: &Path) -> Result<AblationReport> {
    let mut eval = manifest.load_split(Split::Test)?;
    if eval.is_empty() {
        eval = manifest.load_split(Split::Val)?;
    }
    let opt = MetricOptions {
        ratio: manifest.ratio,
        ..MetricOptions::default()
    };
    let mut rows = Vec::new();
    for (label, ablation) in Ablation::table_rows() {
        let mut c = cfg.clone();
        c.loss.ablation = ablation;
        let dir = out.join(label.replace(' ', "_").replace('+', "plus"));
        let (net, summary) = train(manifest, model, &c, &dir)?;
        let report = evaluate_reduced(&net, &eval, &opt)?;
        log::info!("ablation {label}: {:?}", report.aggregate());
        rows.push(AblationRow {
            label: label.to_string(),
            ablation,
            report,
            summary,
        });
    }
    Ok(AblationReport { rows })
}

#[cfg(test)]
mod tests;
