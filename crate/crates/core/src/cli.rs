//! Command-line front end. Every command that writes into a directory also
//! writes the `RunConfig` that produced it.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::autodiff::gradcheck::GradcheckOptions;
use crate::baselines::{fuse, Method};
use crate::check::{check_composite, Composite};
use crate::data::{generate_synthetic, generate_wald, DatasetManifest, Split, SynthConfig, DEFAULT_WALD_SIGMA};
use crate::error::{Error, Result};
use crate::loss::Ablation;
use crate::metrics::{full_metrics, reduced_metrics, MetricOptions, MetricsReport, Protocol};
use crate::model::checkpoint::load_checkpoint;
use crate::model::ModelConfig;
use crate::raster::{load_raster, save_preview, save_raster, write_atomic, RangeTag, Raster};
use crate::train::{ablation_matrix, resume, train, TrainConfig};

pub const RUN_CONFIG: &str = "run_config.toml";

pub const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (raster format v1, checkpoint format v1, manifest v1)");

#[derive(Debug, Parser)]
#[command(name = "ldpnet", version = VERSION, about = "Unsupervised pansharpening toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(untagged)]
pub enum Command {
    /// Build a training dataset (synthetic scenes or Wald-reduced imagery).
    SimulateData(SimulateArgs),
    /// Train a model on a dataset manifest.
    Train(TrainArgs),
    /// Fuse one LRMS/PAN pair, or every pair of a dataset split.
    Pansharpen(PansharpenArgs),
    /// Score predictions against a dataset.
    Evaluate(EvaluateArgs),
    /// Train the four loss configurations and compare them.
    Ablate(TrainArgs),
    /// Finite-difference check of the network gradients.
    Gradcheck(GradcheckArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::SimulateData(_) => "simulate-data",
            Command::Train(_) => "train",
            Command::Pansharpen(_) => "pansharpen",
            Command::Evaluate(_) => "evaluate",
            Command::Ablate(_) => "ablate",
            Command::Gradcheck(_) => "gradcheck",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DataMode {
    Synthetic,
    Wald,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value = "synthetic")]
    pub mode: DataMode,
    /// Spectral response used to synthesize the PAN.
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4")]
    pub alpha: Vec<f64>,
    /// Blur width: the synthetic degradation kernel, or the Wald filter.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Train+validation scenes (synthetic mode).
    #[arg(long, default_value_t = 72)]
    pub scenes: usize,
    #[arg(long, default_value_t = 8)]
    pub test_scenes: usize,
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 4)]
    pub ratio: usize,
    /// Full-resolution MS raster (Wald mode).
    #[arg(long)]
    pub ms: Option<PathBuf>,
    /// Full-resolution PAN raster (Wald mode).
    #[arg(long)]
    pub pan: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelSize {
    Default,
    Compact,
    Micro,
}

impl ModelSize {
    pub fn config(self) -> ModelConfig {
        match self {
            ModelSize::Default => ModelConfig::default(),
            ModelSize::Compact => ModelConfig::compact(),
            ModelSize::Micro => ModelConfig::micro(),
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Dataset manifest.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.01)]
    pub mu: f64,
    #[arg(long, default_value_t = 10.0)]
    pub delta: f64,
    #[arg(long, default_value_t = 20.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long)]
    pub no_spatial_l: bool,
    #[arg(long)]
    pub no_kl: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long, value_enum, default_value = "default")]
    pub model: ModelSize,
    #[arg(long)]
    pub max_steps: Option<u64>,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: u64,
    #[arg(long, default_value_t = 0)]
    pub eval_every: u64,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

impl TrainArgs {
    pub fn train_config(&self) -> TrainConfig {
        let mut c = TrainConfig {
            lr: self.lr,
            epochs: self.epochs,
            batch: self.batch,
            seed: self.seed,
            checkpoint_every: self.checkpoint_every,
            eval_every: self.eval_every,
            max_steps: self.max_steps,
            clip_norm: self.clip_norm,
            workers: self.workers,
            ..TrainConfig::default()
        };
        let w = &mut c.loss.weights;
        (w.alpha, w.beta, w.mu, w.delta, w.gamma) = (self.alpha, self.beta, self.mu, self.delta, self.gamma);
        c.loss.ablation = Ablation {
            use_spatial_l: !self.no_spatial_l,
            use_kl: !self.no_kl,
        };
        c
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            init_seed: self.seed,
            ..self.model.config()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FuseMethod {
    Ldp,
    Ihs,
    Brovey,
    Pca,
}

#[derive(Debug, Args, Serialize)]
pub struct PansharpenArgs {
    #[arg(long, value_enum, default_value = "ldp")]
    pub method: FuseMethod,
    /// Trained model (required for `ldp`).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, requires = "pan", conflicts_with = "data")]
    pub ms: Option<PathBuf>,
    #[arg(long, requires = "ms")]
    pub pan: Option<PathBuf>,
    /// Fuse a whole split of this manifest instead of a single pair.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Output raster, or output directory with `--data`.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write an 8-bit PNG preview of these three bands.
    #[arg(long, value_delimiter = ',')]
    pub preview: Option<Vec<usize>>,
    #[arg(long, default_value_t = 4)]
    pub ratio: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long, value_parser = parse_protocol)]
    #[serde(serialize_with = "ser_protocol")]
    pub protocol: Protocol,
    /// Directory of `<id>.ldpr` predictions.
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub window: usize,
}

fn parse_protocol(s: &str) -> std::result::Result<Protocol, String> {
    s.parse()
}

fn ser_protocol<S: serde::Serializer>(p: &Protocol, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(p.as_str())
}

#[derive(Debug, Args, Serialize)]
pub struct GradcheckArgs {
    /// One composite, or every composite when omitted.
    #[arg(long)]
    pub composite: Option<String>,
    #[arg(long, default_value_t = 3)]
    pub seeds: u64,
    /// Sampled coordinates per tensor.
    #[arg(long, default_value_t = 8)]
    pub coords: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub tol: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub h: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// The exact command that produced an output directory.
#[derive(Debug, Serialize)]
pub struct RunConfig<'a> {
    pub command: &'static str,
    pub version: &'static str,
    pub seed: u64,
    pub out: &'a Path,
    pub args: &'a Command,
    /// Resolved training and model settings, for the training commands.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
}

impl Command {
    fn seed(&self) -> u64 {
        match self {
            Command::SimulateData(a) => a.seed,
            Command::Train(a) | Command::Ablate(a) => a.seed,
            Command::Gradcheck(a) => a.seed,
            Command::Pansharpen(_) | Command::Evaluate(_) => 0,
        }
    }
}

fn write_run_config(cmd: &Command, out_dir: &Path, out: &Path) -> Result<()> {
    let rc = RunConfig {
        command: cmd.name(),
        version: VERSION,
        seed: cmd.seed(),
        out,
        args: cmd,
        train: None,
        model: None,
    };
    let rc = match cmd {
        Command::Train(a) | Command::Ablate(a) => RunConfig {
            train: Some(a.train_config()),
            model: Some(a.model_config()),
            ..rc
        },
        _ => rc,
    };
    let text = toml::to_string(&rc).map_err(|e| Error::InvalidArgument(format!("cannot serialize run config: {e}")))?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_atomic(&out_dir.join(RUN_CONFIG), text.as_bytes())
}

/// Runs a parsed command and returns the text to print on success.
pub fn run(cli: &Cli) -> Result<String> {
    let cmd = &cli.command;
    match cmd {
        Command::SimulateData(a) => simulate(cmd, a),
        Command::Train(a) => cmd_train(cmd, a),
        Command::Ablate(a) => cmd_ablate(cmd, a),
        Command::Pansharpen(a) => pansharpen(cmd, a),
        Command::Evaluate(a) => evaluate(cmd, a),
        Command::Gradcheck(a) => gradcheck(a),
    }
}

fn simulate(cmd: &Command, a: &SimulateArgs) -> Result<String> {
    let m = match a.mode {
        DataMode::Synthetic => {
            let cfg = SynthConfig {
                n_scenes: a.scenes,
                n_test: a.test_scenes,
                size: a.size,
                ratio: a.ratio,
                alpha: a.alpha.clone(),
                sigma: a.sigma.unwrap_or(SynthConfig::default().sigma),
                noise: a.noise,
                seed: a.seed,
                ..SynthConfig::default()
            };
            generate_synthetic(&cfg, &a.out)?
        }
        DataMode::Wald => {
            let (Some(ms), Some(pan)) = (&a.ms, &a.pan) else {
                return Err(Error::InvalidArgument("wald mode needs --ms and --pan".into()));
            };
            let ms = load_raster(ms)?;
            let pan = load_raster(pan)?;
            generate_wald(&ms, &pan, a.ratio, a.sigma.unwrap_or(DEFAULT_WALD_SIGMA), a.seed, &a.out)?
        }
    };
    write_run_config(cmd, &a.out, &a.out)?;
    Ok(format!("wrote {} entries to {}", m.entries.len(), m.path().display()))
}

fn cmd_train(cmd: &Command, a: &TrainArgs) -> Result<String> {
    let manifest = DatasetManifest::read(&a.data)?;
    let cfg = a.train_config();
    write_run_config(cmd, &a.out, &a.out)?;
    let (_, s) = match &a.resume {
        Some(ck) => resume(&manifest, ck, &cfg, &a.out)?,
        None => train(&manifest, &a.model_config(), &cfg, &a.out)?,
    };
    let mut msg = format!("trained {} steps; checkpoint {}", s.steps, s.last_checkpoint.display());
    if let Some(v) = s.best_val {
        let _ = write!(msg, "; best validation loss {v:.6e}");
    }
    Ok(msg)
}

fn cmd_ablate(cmd: &Command, a: &TrainArgs) -> Result<String> {
    let manifest = DatasetManifest::read(&a.data)?;
    write_run_config(cmd, &a.out, &a.out)?;
    let rep = ablation_matrix(&manifest, &a.model_config(), &a.train_config(), &a.out)?;
    let table = rep.to_table();
    write_atomic(&a.out.join("ablation.txt"), table.as_bytes())?;
    Ok(table.trim_end().to_string())
}

fn fuse_pair(a: &PansharpenArgs, net: Option<&crate::model::LdpNet<f32>>, ms: &Raster, pan: &Raster) -> Result<Raster> {
    let (ms, pan) = (ms.clone().with_range(RangeTag::Unit)?, pan.clone().with_range(RangeTag::Unit)?);
    match a.method {
        FuseMethod::Ldp => net.expect("loaded for ldp").pansharpen(&ms, &pan),
        FuseMethod::Ihs => Ok(fuse(Method::Ihs, &ms, &pan, a.ratio)?.fused),
        FuseMethod::Brovey => Ok(fuse(Method::Brovey, &ms, &pan, a.ratio)?.fused),
        FuseMethod::Pca => Ok(fuse(Method::Pca, &ms, &pan, a.ratio)?.fused),
    }
}

fn preview_order(a: &PansharpenArgs) -> Result<Option<[usize; 3]>> {
    match a.preview.as_deref() {
        None => Ok(None),
        Some(&[r, g, b]) => Ok(Some([r, g, b])),
        Some(p) => Err(Error::InvalidArgument(format!("--preview needs three bands, got {}", p.len()))),
    }
}

fn pansharpen(cmd: &Command, a: &PansharpenArgs) -> Result<String> {
    let net = match (a.method, &a.checkpoint) {
        (FuseMethod::Ldp, Some(ck)) => Some(load_checkpoint(ck)?.net),
        (FuseMethod::Ldp, None) => return Err(Error::InvalidArgument("--method ldp needs --checkpoint".into())),
        _ => None,
    };
    if let Some(n) = &net {
        if n.config.ratio != a.ratio {
            return Err(Error::InvalidArgument(format!("model ratio {} differs from --ratio {}", n.config.ratio, a.ratio)));
        }
    }
    match (&a.ms, &a.pan, &a.data) {
        (Some(ms), Some(pan), None) => {
            let fused = fuse_pair(a, net.as_ref(), &load_raster(ms)?, &load_raster(pan)?)?;
            save_raster(&fused, &a.out)?;
            if let Some(order) = preview_order(a)? {
                save_preview(&fused, order, &a.out.with_extension("png"))?;
            }
            let dir = a.out.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
            write_run_config(cmd, dir, &a.out)?;
            Ok(format!("wrote {}", a.out.display()))
        }
        (None, None, Some(data)) => {
            let manifest = DatasetManifest::read(data)?;
            let split: Split = a.split.parse().map_err(Error::InvalidArgument)?;
            let pairs = manifest.load_split(split)?;
            for p in &pairs {
                let fused = fuse_pair(a, net.as_ref(), &p.lrms, &p.pan)?;
                let path = a.out.join(format!("{}.ldpr", p.id));
                save_raster(&fused, &path)?;
                if let Some(order) = preview_order(a)? {
                    save_preview(&fused, order, &path.with_extension("png"))?;
                }
            }
            write_run_config(cmd, &a.out, &a.out)?;
            Ok(format!("wrote {} rasters to {}", pairs.len(), a.out.display()))
        }
        _ => Err(Error::InvalidArgument("give either --ms and --pan, or --data".into())),
    }
}

fn evaluate(cmd: &Command, a: &EvaluateArgs) -> Result<String> {
    let manifest = DatasetManifest::read(&a.data)?;
    let split: Split = a.split.parse().map_err(Error::InvalidArgument)?;
    let opt = MetricOptions {
        ratio: manifest.ratio,
        window: a.window,
    };
    let mut rep = MetricsReport::new(a.protocol);
    for e in manifest.split(split) {
        let pair = manifest.load_entry(e)?;
        let pred = load_raster(&a.pred.join(format!("{}.ldpr", e.id)))?;
        let values = match a.protocol {
            Protocol::Reduced => {
                let reference = pair
                    .reference
                    .as_ref()
                    .ok_or_else(|| Error::Protocol(format!("entry {} has no reference; use --protocol full", e.id)))?;
                reduced_metrics(&pred, reference, &opt)?
            }
            Protocol::Full => full_metrics(&pred, &pair.lrms, &pair.pan, &opt)?,
        };
        rep.push(e.id.clone(), values)?;
    }
    if rep.images.is_empty() {
        return Err(Error::Manifest(format!("split {split} is empty")));
    }
    let table = rep.to_table();
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_atomic(&a.out, table.as_bytes())?;
    let dir = a.out.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    write_run_config(cmd, dir, &a.out)?;
    Ok(table.trim_end().to_string())
}

fn gradcheck(a: &GradcheckArgs) -> Result<String> {
    let which: Vec<Composite> = match &a.composite {
        Some(name) => vec![name.parse().map_err(Error::InvalidArgument)?],
        None => Composite::ALL.to_vec(),
    };
    let opts = GradcheckOptions {
        h: a.h,
        tol: a.tol,
        max_coords: a.coords,
        seed: 0,
    };
    let (mut worst, mut coords, mut skipped) = (0f64, 0usize, 0usize);
    let mut failed = Vec::new();
    for c in which {
        for s in 0..a.seeds {
            let r = check_composite(c, a.seed.wrapping_add(s), &opts)?;
            log::info!("{} seed {}: max_rel_err {:.3e}", c.name(), a.seed + s, r.max_rel_err);
            worst = worst.max(r.max_rel_err);
            coords += r.coords_checked;
            skipped += r.kinks_skipped;
            if !r.passed() {
                failed.push(format!("{}:{}", c.name(), a.seed + s));
            }
        }
    }
    let verdict = if failed.is_empty() { "PASS" } else { "FAIL" };
    let mut line = format!("{verdict} max_rel_err={worst:.3e} coords={coords} kinks_skipped={skipped}");
    if !failed.is_empty() {
        let _ = write!(line, " failed={}", failed.join(","));
        return Err(Error::InvalidArgument(line));
    }
    Ok(line)
}
