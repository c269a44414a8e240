//! Reduced-resolution simulation, synthetic scenes with known degradations,
//! patch cropping, splits and dataset manifests.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Interp, Resampler, Scale};
use crate::error::{Error, Result};
use crate::model::gaussian_kernel;
use crate::raster::{load_raster, save_raster, RangeTag, Raster};

pub const MANIFEST_HEADER: &str = "# ldpnet dataset manifest v1";
pub const DEFAULT_WALD_SIGMA: f64 = 1.0;
pub const PAN_PATCH: usize = 128;
pub const MS_PATCH: usize = 32;
pub const TRAIN_FRACTION: f64 = 0.9;

/// Normalized 1-D Gaussian taps over `[-radius, radius]`.
pub fn gaussian_taps(sigma: f64, radius: usize) -> Vec<f64> {
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let x = i as f64 - radius as f64;
            (-(x * x) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable convolution of one plane with replicated borders.
fn convolve_plane(plane: &[f32], w: usize, h: usize, taps: &[f64]) -> Vec<f32> {
    let r = (taps.len() / 2) as isize;
    let clampi = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0f64; w * h];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..w {
            tmp[y * w + x] = taps
                .iter()
                .enumerate()
                .map(|(t, &k)| k * row[clampi(x as isize + t as isize - r, w)] as f64)
                .sum();
        }
    }
    let mut out = vec![0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = taps
                .iter()
                .enumerate()
                .map(|(t, &k)| k * tmp[clampi(y as isize + t as isize - r, h) * w + x])
                .sum::<f64>() as f32;
        }
    }
    out
}

fn map_planes(r: &Raster, f: impl Fn(&[f32]) -> Vec<f32>) -> Result<Raster> {
    let planes = (0..r.bands()).map(|b| f(r.band(b))).collect();
    Raster::from_planes(planes, r.width(), r.height(), RangeTag::Raw)
}

/// Gaussian blur with radius `ceil(3 sigma)` and replicated borders.
pub fn gaussian_blur(r: &Raster, sigma: f64) -> Result<Raster> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("blur sigma must be positive, got {sigma}")));
    }
    let taps = gaussian_taps(sigma, (3.0 * sigma).ceil() as usize);
    let out = map_planes(r, |p| convolve_plane(p, r.width(), r.height(), &taps))?;
    Ok(retag(out, r.range()))
}

fn retag(r: Raster, tag: RangeTag) -> Raster {
    match tag {
        RangeTag::Raw => r,
        t => r.clamped(t),
    }
}

/// Resamples every band by an integer factor.
pub fn resample_raster(r: &Raster, scale: Scale, interp: Interp) -> Result<Raster> {
    let op = Resampler::for_scale(r.height(), r.width(), scale, interp)
        .ok_or_else(|| Error::Dimensions(format!("{}x{} cannot be resampled by {scale:?}", r.width(), r.height())))?;
    let data = crate::autodiff::resample::resample_planes(r.data(), r.bands(), &op);
    let (h, w) = op.out_dims();
    let mut out = retag(Raster::new(r.bands(), w, h, data, RangeTag::Raw)?, r.range());
    for (k, v) in r.meta() {
        out.set_meta(k.clone(), v.clone());
    }
    Ok(out)
}

pub struct WaldReduced {
    pub lrms: Raster,
    pub pan: Raster,
    /// The original MS, which becomes the reference at reduced resolution.
    pub reference: Raster,
}

/// Blurs and decimates both MS and PAN by `ratio`; the input MS is the
/// reference for the reduced pair.
pub fn wald_reduce(ms: &Raster, pan: &Raster, ratio: usize, sigma: f64) -> Result<WaldReduced> {
    if pan.width() != ratio * ms.width() || pan.height() != ratio * ms.height() {
        return Err(Error::Dimensions(format!(
            "PAN {}x{} is not {ratio}x the MS {}x{}",
            pan.width(),
            pan.height(),
            ms.width(),
            ms.height()
        )));
    }
    if ms.width() % ratio != 0 || ms.height() % ratio != 0 {
        return Err(Error::Dimensions(format!(
            "MS {}x{} is not divisible by {ratio}",
            ms.width(),
            ms.height()
        )));
    }
    let down = |r: &Raster| resample_raster(&gaussian_blur(r, sigma)?, Scale::Down(ratio), Interp::Bicubic);
    Ok(WaldReduced {
        lrms: down(ms)?,
        pan: down(pan)?,
        reference: ms.clone(),
    })
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SynthConfig {
    /// Scenes shared between the train and validation splits.
    pub n_scenes: usize,
    /// Held-out test scenes, generated after the train/val scenes.
    pub n_test: usize,
    pub size: usize,
    pub ratio: usize,
    pub alpha: Vec<f64>,
    pub sigma: f64,
    pub kernel_size: usize,
    pub noise: f64,
    /// Blur widths of the smooth background fields.
    pub field_sigmas: Vec<f64>,
    /// Fraction of each band's background shared with the other bands.
    pub band_correlation: f64,
    pub parcels: usize,
    pub lines: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_scenes: 72,
            n_test: 8,
            size: 128,
            ratio: 4,
            alpha: vec![0.10, 0.20, 0.30, 0.40],
            sigma: 1.5,
            kernel_size: 9,
            noise: 0.0,
            field_sigmas: vec![2.0, 6.0],
            band_correlation: 0.7,
            parcels: 10,
            lines: 4,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.alpha.iter().sum();
        if self.alpha.is_empty() || self.alpha.iter().any(|&a| !(a > 0.0)) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!(
                "alpha must be positive and sum to 1, got {:?} (sum {sum})",
                self.alpha
            )));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::InvalidArgument(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::InvalidArgument("kernel_size must be odd".into()));
        }
        if self.ratio == 0 || self.size == 0 || self.size % self.ratio != 0 {
            return Err(Error::InvalidArgument(format!(
                "scene size {} must be a positive multiple of {}",
                self.size, self.ratio
            )));
        }
        if self.noise < 0.0 || !(0.0..=1.0).contains(&self.band_correlation) {
            return Err(Error::InvalidArgument("noise must be >= 0 and band_correlation in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn bands(&self) -> usize {
        self.alpha.len()
    }

    /// The blur kernel applied before decimation, `kernel_size^2` values.
    pub fn true_kernel(&self) -> Vec<f64> {
        gaussian_kernel(self.kernel_size, self.sigma)
    }
}

/// One generated scene with its hidden truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub ms: Raster,
    pub pan: Raster,
    pub lrms: Raster,
}

fn smooth_field(rng: &mut ChaCha8Rng, n: usize, sigma: f64) -> Vec<f32> {
    let noise: Vec<f32> = (0..n * n)
        .map(|_| {
            let v: f64 = StandardNormal.sample(rng);
            v as f32
        })
        .collect();
    let taps = gaussian_taps(sigma, (3.0 * sigma).ceil() as usize);
    let mut f = convolve_plane(&noise, n, n, &taps);
    // Unit variance regardless of the blur width.
    let var = f.iter().map(|v| (*v as f64).powi(2)).sum::<f64>() / f.len() as f64;
    let s = var.sqrt().max(1e-12) as f32;
    f.iter_mut().for_each(|v| *v /= s);
    f
}

/// Generates scene `index` of the configured sequence. Each scene has its
/// own random stream, so scenes can be generated in any order.
pub fn synth_scene(cfg: &SynthConfig, index: u64) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index);
    let n = cfg.size;
    let c = cfg.bands();
    let shared: Vec<Vec<f32>> = cfg.field_sigmas.iter().map(|&s| smooth_field(&mut rng, n, s)).collect();
    let mut planes = Vec::with_capacity(c);
    let rho = cfg.band_correlation as f32;
    for _ in 0..c {
        let base = rng.gen_range(0.25..0.65f32);
        let gain = rng.gen_range(0.05..0.12f32);
        let mut p = vec![base; n * n];
        for sh in &shared {
            let own = smooth_field(&mut rng, n, cfg.field_sigmas[0]);
            for (i, v) in p.iter_mut().enumerate() {
                *v += gain * (rho * sh[i] + (1.0 - rho) * own[i]);
            }
        }
        planes.push(p);
    }
    // Parcels: rectangles and disks with band-distinct albedos.
    for _ in 0..cfg.parcels {
        let albedo: Vec<f32> = (0..c).map(|_| rng.gen_range(0.05..0.95)).collect();
        let mix = rng.gen_range(0.5..0.9f32);
        let cx = rng.gen_range(0..n) as f32;
        let cy = rng.gen_range(0..n) as f32;
        let disk = rng.gen_bool(0.4);
        let (hw, hh) = (rng.gen_range(4.0..n as f32 / 4.0), rng.gen_range(4.0..n as f32 / 4.0));
        for y in 0..n {
            for x in 0..n {
                let (dx, dy) = (x as f32 - cx, y as f32 - cy);
                let inside = if disk {
                    dx * dx + dy * dy <= hw * hw
                } else {
                    dx.abs() <= hw && dy.abs() <= hh
                };
                if inside {
                    for (b, p) in planes.iter_mut().enumerate() {
                        let i = y * n + x;
                        p[i] = mix * albedo[b] + (1.0 - mix) * p[i];
                    }
                }
            }
        }
    }
    // High-contrast line segments, one to two pixels wide.
    for _ in 0..cfg.lines {
        let value: Vec<f32> = if rng.gen_bool(0.5) {
            (0..c).map(|_| rng.gen_range(0.85..1.0)).collect()
        } else {
            (0..c).map(|_| rng.gen_range(0.0..0.1)).collect()
        };
        let (x0, y0) = (rng.gen_range(0.0..n as f32), rng.gen_range(0.0..n as f32));
        let (x1, y1) = (rng.gen_range(0.0..n as f32), rng.gen_range(0.0..n as f32));
        let width = rng.gen_range(0.5..1.0f32);
        let (dx, dy) = (x1 - x0, y1 - y0);
        let len2 = (dx * dx + dy * dy).max(1e-6);
        for y in 0..n {
            for x in 0..n {
                let t = (((x as f32 - x0) * dx + (y as f32 - y0) * dy) / len2).clamp(0.0, 1.0);
                let (px, py) = (x0 + t * dx - x as f32, y0 + t * dy - y as f32);
                if px * px + py * py <= width * width {
                    for (b, p) in planes.iter_mut().enumerate() {
                        p[y * n + x] = value[b];
                    }
                }
            }
        }
    }
    for p in &mut planes {
        p.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }
    let ms = Raster::from_planes(planes, n, n, RangeTag::Unit)?;

    let mut pan = vec![0f32; n * n];
    for (b, &a) in cfg.alpha.iter().enumerate() {
        let a = a as f32;
        pan.iter_mut().zip(ms.band(b)).for_each(|(p, &v)| *p += a * v);
    }
    // Rounding can push a weighted mean of unit values a hair past 1.
    pan.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));

    let taps = gaussian_taps(cfg.sigma, cfg.kernel_size / 2);
    let blurred = map_planes(&ms, |p| convolve_plane(p, n, n, &taps))?;
    let lrms = resample_raster(&blurred, Scale::Down(cfg.ratio), Interp::Bicubic)?;
    let mut lrms = lrms.into_data();
    let mut pan = pan;
    if cfg.noise > 0.0 {
        for v in lrms.iter_mut().chain(pan.iter_mut()) {
            let e: f64 = StandardNormal.sample(&mut rng);
            *v += (cfg.noise * e) as f32;
        }
    }
    let m = n / cfg.ratio;
    let lrms = Raster::new(c, m, m, lrms, RangeTag::Raw)?.clamped(RangeTag::Unit);
    let pan = Raster::new(1, n, n, pan, RangeTag::Raw)?.clamped(RangeTag::Unit);
    Ok(Scene { ms, pan, lrms })
}

/// One training sample. `reference` is the full-resolution MS when known.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchPair {
    pub id: String,
    pub lrms: Raster,
    pub pan: Raster,
    pub reference: Option<Raster>,
}

/// Aligned non-overlapping crops; partial tiles are dropped.
pub fn crop_patches(
    id_prefix: &str,
    lrms: &Raster,
    pan: &Raster,
    reference: Option<&Raster>,
    ratio: usize,
    pan_patch: usize,
) -> Result<Vec<PatchPair>> {
    if ratio == 0 || pan_patch == 0 || pan_patch % ratio != 0 {
        return Err(Error::InvalidArgument(format!("patch {pan_patch} is not a multiple of ratio {ratio}")));
    }
    if pan.width() / ratio != lrms.width() || pan.height() / ratio != lrms.height() {
        return Err(Error::Dimensions(format!(
            "PAN {}x{} does not match LRMS {}x{} at ratio {ratio}",
            pan.width(),
            pan.height(),
            lrms.width(),
            lrms.height()
        )));
    }
    if let Some(r) = reference {
        if r.width() != pan.width() || r.height() != pan.height() {
            return Err(Error::Dimensions("reference and PAN sizes differ".into()));
        }
    }
    let ms_patch = pan_patch / ratio;
    let mut out = Vec::new();
    for ty in 0..pan.height() / pan_patch {
        for tx in 0..pan.width() / pan_patch {
            let (px, py) = (tx * pan_patch, ty * pan_patch);
            out.push(PatchPair {
                id: format!("{id_prefix}_{ty:02}_{tx:02}"),
                lrms: lrms.crop(tx * ms_patch, ty * ms_patch, ms_patch, ms_patch)?,
                pan: pan.crop(px, py, pan_patch, pan_patch)?,
                reference: reference.map(|r| r.crop(px, py, pan_patch, pan_patch)).transpose()?,
            });
        }
    }
    Ok(out)
}

/// Seeded shuffle of `0..n`, the first `floor(n * train_frac)` indices go
/// to training and the rest to validation.
pub fn split_indices(n: usize, train_frac: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..=1.0).contains(&train_frac) {
        return Err(Error::InvalidArgument(format!("train fraction {train_frac} outside [0, 1]")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((n as f64 * train_frac) + 1e-9).floor() as usize;
    let val = idx.split_off(n_train.min(n));
    Ok((idx, val))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            o => Err(format!("unknown split {o:?}")),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
    /// Paths relative to the manifest directory.
    pub lrms: PathBuf,
    pub pan: PathBuf,
    pub reference: Option<PathBuf>,
}

/// Text index of a dataset directory.
///
/// ```text
/// # ldpnet dataset manifest v1
/// seed 0
/// ratio 4
/// mode synthetic
/// alpha 0.1,0.2,0.3,0.4
/// kernel true_kernel.ldpr
/// entry <id> <split> <lrms> <pan> <reference or ->
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub seed: u64,
    pub ratio: usize,
    pub mode: String,
    pub alpha: Option<Vec<f64>>,
    pub kernel: Option<PathBuf>,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(root: impl Into<PathBuf>, seed: u64, ratio: usize, mode: &str) -> Self {
        DatasetManifest {
            root: root.into(),
            seed,
            ratio,
            mode: mode.to_string(),
            alpha: None,
            kernel: None,
            entries: Vec::new(),
        }
    }

    pub fn path(&self) -> PathBuf {
        self.root.join("manifest.txt")
    }

    pub fn split(&self, s: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == s)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{MANIFEST_HEADER}\nseed {}\nratio {}\nmode {}\n", self.seed, self.ratio, self.mode);
        if let Some(a) = &self.alpha {
            let parts: Vec<String> = a.iter().map(|v| v.to_string()).collect();
            s += &format!("alpha {}\n", parts.join(","));
        }
        if let Some(k) = &self.kernel {
            s += &format!("kernel {}\n", k.display());
        }
        for e in &self.entries {
            let r = e.reference.as_ref().map_or("-".to_string(), |p| p.display().to_string());
            s += &format!("entry {} {} {} {} {}\n", e.id, e.split, e.lrms.display(), e.pan.display(), r);
        }
        s
    }

    pub fn parse(text: &str, root: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l.trim() == MANIFEST_HEADER => {}
            _ => return Err(Error::Manifest(format!("missing header line {MANIFEST_HEADER:?}"))),
        }
        let mut m = DatasetManifest::new(root, 0, 4, "unknown");
        let bad = |n: usize, what: &str| Error::Manifest(format!("line {}: {what}", n + 1));
        for (n, line) in lines {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let key = parts.next().unwrap_or_default();
            let rest: Vec<&str> = parts.collect();
            match (key, rest.as_slice()) {
                ("seed", [v]) => m.seed = v.parse().map_err(|_| bad(n, "bad seed"))?,
                ("ratio", [v]) => m.ratio = v.parse().map_err(|_| bad(n, "bad ratio"))?,
                ("mode", [v]) => m.mode = v.to_string(),
                ("alpha", [v]) => {
                    let a = v.split(',').map(str::parse).collect::<std::result::Result<Vec<f64>, _>>();
                    m.alpha = Some(a.map_err(|_| bad(n, "bad alpha"))?);
                }
                ("kernel", [v]) => m.kernel = Some(PathBuf::from(v)),
                ("entry", [id, split, lrms, pan, r]) => m.entries.push(ManifestEntry {
                    id: id.to_string(),
                    split: split.parse().map_err(|e: String| bad(n, &e))?,
                    lrms: PathBuf::from(lrms),
                    pan: PathBuf::from(pan),
                    reference: (*r != "-").then(|| PathBuf::from(r)),
                }),
                _ => return Err(bad(n, &format!("unrecognized record {line:?}"))),
            }
        }
        if m.ratio == 0 {
            return Err(Error::Manifest("ratio must be positive".into()));
        }
        Ok(m)
    }

    pub fn write(&self) -> Result<()> {
        std::fs::create_dir_all(&self.root).map_err(|e| Error::io(&self.root, e))?;
        crate::raster::write_atomic(&self.path(), self.to_text().as_bytes())
    }

    /// Reads a manifest file and checks that every referenced raster exists.
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let m = Self::parse(&text, &root)?;
        for e in &m.entries {
            for p in [Some(&e.lrms), Some(&e.pan), e.reference.as_ref()].into_iter().flatten() {
                let full = m.root.join(p);
                if !full.is_file() {
                    return Err(Error::Manifest(format!("entry {}: missing file {}", e.id, full.display())));
                }
            }
        }
        Ok(m)
    }

    /// Loads the rasters of one entry and checks their dimensions.
    pub fn load_entry(&self, e: &ManifestEntry) -> Result<PatchPair> {
        let lrms = load_raster(&self.root.join(&e.lrms))?;
        let pan = load_raster(&self.root.join(&e.pan))?;
        if pan.width() != self.ratio * lrms.width() || pan.height() != self.ratio * lrms.height() {
            return Err(Error::Manifest(format!("entry {}: PAN is not {}x the LRMS", e.id, self.ratio)));
        }
        let reference = e.reference.as_ref().map(|p| load_raster(&self.root.join(p))).transpose()?;
        Ok(PatchPair {
            id: e.id.clone(),
            lrms,
            pan,
            reference,
        })
    }

    pub fn load_split(&self, s: Split) -> Result<Vec<PatchPair>> {
        self.split(s).map(|e| self.load_entry(e)).collect()
    }

    pub fn true_kernel(&self) -> Result<Option<Raster>> {
        self.kernel.as_ref().map(|k| load_raster(&self.root.join(k))).transpose()
    }
}

fn write_pair(root: &Path, pair: &PatchPair, split: Split) -> Result<ManifestEntry> {
    let dir = Path::new("patches");
    let lrms = dir.join(format!("{}_lrms.ldpr", pair.id));
    let pan = dir.join(format!("{}_pan.ldpr", pair.id));
    save_raster(&pair.lrms, &root.join(&lrms))?;
    save_raster(&pair.pan, &root.join(&pan))?;
    let reference = match &pair.reference {
        Some(r) => {
            let p = dir.join(format!("{}_ref.ldpr", pair.id));
            save_raster(r, &root.join(&p))?;
            Some(p)
        }
        None => None,
    };
    Ok(ManifestEntry {
        id: pair.id.clone(),
        split,
        lrms,
        pan,
        reference,
    })
}

fn tag(mut r: Raster, source: &str) -> Raster {
    r.set_meta("source", source);
    r
}

/// Generates the synthetic dataset into `out` and writes its manifest.
pub fn generate_synthetic(cfg: &SynthConfig, out: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    let mut pairs = Vec::new();
    let mut test = Vec::new();
    for i in 0..cfg.n_scenes + cfg.n_test {
        let s = synth_scene(cfg, i as u64)?;
        let ms = tag(s.ms, "synthetic");
        let p = crop_patches(&format!("s{i:04}"), &tag(s.lrms, "synthetic"), &tag(s.pan, "synthetic"), Some(&ms), cfg.ratio, PAN_PATCH.min(cfg.size))?;
        if i < cfg.n_scenes {
            pairs.extend(p);
        } else {
            test.extend(p);
        }
    }
    let mut m = DatasetManifest::new(out, cfg.seed, cfg.ratio, "synthetic");
    m.alpha = Some(cfg.alpha.clone());
    let k = Raster::new(1, cfg.kernel_size, cfg.kernel_size, cfg.true_kernel().iter().map(|&v| v as f32).collect(), RangeTag::Raw)?;
    let kpath = PathBuf::from("true_kernel.ldpr");
    save_raster(&k, &out.join(&kpath))?;
    m.kernel = Some(kpath);
    let (train, val) = split_indices(pairs.len(), TRAIN_FRACTION, cfg.seed)?;
    let mut entries = Vec::new();
    for (idx, split) in [(&train, Split::Train), (&val, Split::Val)] {
        let mut sorted = idx.clone();
        sorted.sort_unstable();
        for i in sorted {
            entries.push(write_pair(out, &pairs[i], split)?);
        }
    }
    for p in &test {
        entries.push(write_pair(out, p, Split::Test)?);
    }
    m.entries = entries;
    m.write()?;
    Ok(m)
}

/// Reduces a co-registered MS/PAN scene and writes its patches.
pub fn generate_wald(ms: &Raster, pan: &Raster, ratio: usize, sigma: f64, seed: u64, out: &Path) -> Result<DatasetManifest> {
    let unit = |r: &Raster| -> Result<Raster> {
        Ok(match r.range() {
            RangeTag::Unit => r.clone(),
            _ => crate::raster::linear_stretch(r, 2.0, 98.0)?.raster,
        })
    };
    let (ms, pan) = (unit(ms)?, unit(pan)?);
    let red = wald_reduce(&ms, &pan, ratio, sigma)?;
    let pairs = crop_patches("w", &red.lrms, &red.pan, Some(&red.reference), ratio, PAN_PATCH)?;
    if pairs.is_empty() {
        return Err(Error::Dimensions("scene is smaller than one reduced patch".into()));
    }
    let (train, val) = split_indices(pairs.len(), TRAIN_FRACTION, seed)?;
    let mut m = DatasetManifest::new(out, seed, ratio, "wald");
    for (idx, split) in [(&train, Split::Train), (&val, Split::Val)] {
        let mut sorted = idx.clone();
        sorted.sort_unstable();
        for i in sorted {
            m.entries.push(write_pair(out, &pairs[i], split)?);
        }
    }
    m.write()?;
    Ok(m)
}
