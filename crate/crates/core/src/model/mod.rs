//! The two-stream fusion network and its learnable degradation blocks.
//!
//! ```text
//!   up_m ──FEB_ms──┬─ F_m ─┐
//!                  └─ R_m ─┼──────────────┐
//!                          ├─ DEDB ─ U ───┼─ REC ─ tanh ─ fused
//!                  ┌─ R_p ─┼──────────────┘
//!   pan  ──FEB_pan─┴─ F_p ─┘
//! ```
//!
//! GB (graying) and RB (reblurring) are separate from the fusion path and
//! are only used by the losses.

pub mod checkpoint;
mod config;
mod params;

use std::sync::Arc;

pub use config::{GbNormalize, ModelConfig};
pub use params::{gaussian_kernel, Bound, ParamStore};

use crate::autodiff::{Graph, Interp, Resampler, Scalar, Scale, Tensor, Var};
use crate::error::{Error, Result};
use crate::raster::{RangeTag, Raster};

/// Which feature-extraction stream to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Ms,
    Pan,
}

impl Stream {
    fn prefix(self) -> &'static str {
        match self {
            Stream::Ms => "feb_ms",
            Stream::Pan => "feb_pan",
        }
    }
}

/// Output of a feature-extraction block.
#[derive(Clone, Copy, Debug)]
pub struct FebOutput {
    /// Deep features at half resolution.
    pub features: Var,
    /// Full-resolution residual features, before downsampling.
    pub residual: Var,
}

/// Output of the graying block.
#[derive(Clone, Copy, Debug)]
pub struct GrayOutput {
    /// The gray plane copied into every band, `(N, C, H, W)`.
    pub gray: Var,
    /// Per-sample band weights, `(N, C)`.
    pub weights: Var,
}

/// Forward functions over a bound parameter set.
pub struct Blocks<'a> {
    pub cfg: &'a ModelConfig,
    pub params: &'a Bound,
}

impl<'a> Blocks<'a> {
    pub fn new(cfg: &'a ModelConfig, params: &'a Bound) -> Self {
        Blocks { cfg, params }
    }

    fn p(&self, name: &str) -> Result<Var> {
        self.params.var(name)
    }

    fn conv<T: Scalar>(&self, g: &mut Graph<T>, x: Var, name: &str, stride: usize) -> Result<Var> {
        let w = self.p(&format!("{name}.w"))?;
        let b = self.params.opt(&format!("{name}.b"));
        let k = g.shape(w)[2];
        g.conv2d(x, w, b, stride, k / 2)
    }

    fn act<T: Scalar>(&self, g: &mut Graph<T>, x: Var, name: &str) -> Result<Var> {
        let a = self.p(&format!("{name}.a"))?;
        g.prelu(x, a)
    }

    fn check_bands<T: Scalar>(&self, g: &Graph<T>, x: Var) -> Result<()> {
        let shape = g.shape(x);
        if shape.len() != 4 || shape[1] != self.cfg.bands {
            return Err(Error::Shape(format!("expected N x {} x H x W input, got {shape:?}", self.cfg.bands)));
        }
        Ok(())
    }

    /// Three same-size conv+PReLU layers with additive skips (the first skip
    /// goes through a 1x1 projection), then a stride-2 conv+PReLU.
    pub fn feb_forward<T: Scalar>(&self, g: &mut Graph<T>, x: Var, stream: Stream) -> Result<FebOutput> {
        self.check_bands(g, x)?;
        let s = stream.prefix();
        let skip = self.conv(g, x, &format!("{s}.proj"), 1)?;
        let mut h = x;
        let mut skip = Some(skip);
        for i in 1..=3 {
            let c = self.conv(g, h, &format!("{s}.conv{i}"), 1)?;
            let a = self.act(g, c, &format!("{s}.act{i}"))?;
            let sk = skip.take().unwrap_or(h);
            h = g.add(a, sk)?;
        }
        let residual = h;
        let d = self.conv(g, residual, &format!("{s}.down"), 2)?;
        let features = self.act(g, d, &format!("{s}.act_down"))?;
        Ok(FebOutput { features, residual })
    }

    /// Densely connected conv layers over `concat(F_m, F_p)` followed by a
    /// stride-2 transposed convolution back to full resolution.
    pub fn dedb_forward<T: Scalar>(&self, g: &mut Graph<T>, f_ms: Var, f_pan: Var) -> Result<Var> {
        if g.shape(f_ms) != g.shape(f_pan) {
            return Err(Error::Shape(format!(
                "DEDB inputs differ: {:?} vs {:?}",
                g.shape(f_ms),
                g.shape(f_pan)
            )));
        }
        let mut feats = vec![f_ms, f_pan];
        let mut last = None;
        for i in 1..=self.cfg.dedb_layers {
            let inp = g.concat_channels(&feats)?;
            let c = self.conv(g, inp, &format!("dedb.conv{i}"), 1)?;
            let o = self.act(g, c, &format!("dedb.act{i}"))?;
            feats.push(o);
            last = Some(o);
        }
        let last = last.expect("at least one dense layer");
        let w = self.p("dedb.deconv.w")?;
        let b = self.p("dedb.deconv.b")?;
        let up = g.deconv2d(last, w, Some(b), 2, 1)?;
        self.act(g, up, "dedb.act_up")
    }

    /// Two convs over `concat(U, R_m, R_p)` and a tanh; output in (-1, 1).
    pub fn rec_forward<T: Scalar>(&self, g: &mut Graph<T>, u: Var, r_ms: Var, r_pan: Var) -> Result<Var> {
        let inp = g.concat_channels(&[u, r_ms, r_pan])?;
        let c = self.conv(g, inp, "rec.conv1", 1)?;
        let a = self.act(g, c, "rec.act1")?;
        let o = self.conv(g, a, "rec.conv2", 1)?;
        Ok(g.tanh(o))
    }

    /// The fusion network on signed-range inputs.
    pub fn fuse<T: Scalar>(&self, g: &mut Graph<T>, up_ms: Var, pan_stack: Var) -> Result<Var> {
        if g.shape(up_ms) != g.shape(pan_stack) {
            return Err(Error::Shape(format!(
                "stream shapes differ: {:?} vs {:?}",
                g.shape(up_ms),
                g.shape(pan_stack)
            )));
        }
        let m = self.feb_forward(g, up_ms, Stream::Ms)?;
        let p = self.feb_forward(g, pan_stack, Stream::Pan)?;
        let u = self.dedb_forward(g, m.features, p.features)?;
        self.rec_forward(g, u, m.residual, p.residual)
    }

    /// Channel-attention graying: conv features -> GAP -> FC -> FC -> band
    /// weights, which mix the *input* bands into one gray plane.
    pub fn gb_forward<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Result<GrayOutput> {
        self.check_bands(g, x)?;
        let n = g.shape(x)[0];
        let c = self.cfg.bands;
        let f = self.conv(g, x, "gb.conv1", 1)?;
        let f = self.act(g, f, "gb.act1")?;
        let f = self.conv(g, f, "gb.conv2", 1)?;
        let pooled = g.global_avg_pool(f)?;
        let flat = g.reshape(pooled, &[n, c])?;
        let h = g.fully_connected(flat, self.p("gb.fc1.w")?, Some(self.p("gb.fc1.b")?))?;
        let h = self.act(g, h, "gb.act_fc")?;
        let logits = g.fully_connected(h, self.p("gb.fc2.w")?, Some(self.p("gb.fc2.b")?))?;
        let weights = match self.cfg.gb_normalize {
            GbNormalize::Softmax => g.softmax_rows(logits)?,
            GbNormalize::None => logits,
        };
        let plane = g.weighted_band_sum(x, weights)?;
        let gray = g.repeat_channels(plane, c)?;
        Ok(GrayOutput { gray, weights })
    }

    /// One shared blur kernel applied to every band, zero padding, no bias.
    pub fn rb_forward<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 4 {
            return Err(Error::Shape(format!("RB expects N x C x H x W, got {shape:?}")));
        }
        let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let k = self.p("rb.kernel")?;
        let ks = g.shape(k)[2];
        let planes = g.reshape(x, &[n * c, 1, h, w])?;
        let blurred = g.conv2d(planes, k, None, 1, ks / 2)?;
        g.reshape(blurred, &shape)
    }
}

/// A network instance: configuration plus parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct LdpNet<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
}

impl<T: Scalar> LdpNet<T> {
    pub fn new(config: ModelConfig) -> Result<Self> {
        let params = ParamStore::init(&config)?;
        Ok(LdpNet { config, params })
    }

    /// The learned blur kernel as a `k x k` row-major array.
    pub fn blur_kernel(&self) -> Vec<f64> {
        self.params
            .get("rb.kernel")
            .map(|t| t.data().iter().map(|v| v.as_f64()).collect())
            .unwrap_or_default()
    }

    /// Graying-block weights for a batch of unit-range images `(N, C, H, W)`.
    pub fn gray_weights(&self, x: &Tensor<T>) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::new();
        let bound = self.params.bind_with(&mut g, false)?;
        let xv = g.constant(x.clone())?;
        let out = Blocks::new(&self.config, &bound).gb_forward(&mut g, xv)?;
        let c = self.config.bands;
        Ok(g.value(out.weights).data().chunks(c).map(|r| r.iter().map(|v| v.as_f64()).collect()).collect())
    }

    /// Mean graying weights over a set of unit-range images.
    pub fn effective_spectral_weights<'x>(&self, inputs: impl IntoIterator<Item = &'x Tensor<T>>) -> Result<Vec<f64>> {
        let c = self.config.bands;
        let mut sum = vec![0.0; c];
        let mut count = 0usize;
        for x in inputs {
            for w in self.gray_weights(x)? {
                sum.iter_mut().zip(&w).for_each(|(s, v)| *s += v);
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::InvalidArgument("no samples to average graying weights over".into()));
        }
        Ok(sum.into_iter().map(|s| s / count as f64).collect())
    }

    /// Runs the fusion network on signed-range `(N, C, H, W)` inputs.
    pub fn fuse_tensors(&self, up_ms: &Tensor<T>, pan_stack: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let bound = self.params.bind_with(&mut g, false)?;
        let m = g.constant(up_ms.clone())?;
        let p = g.constant(pan_stack.clone())?;
        let out = Blocks::new(&self.config, &bound).fuse(&mut g, m, p)?;
        Ok(g.value(out).clone())
    }
}

/// Bicubic `xr` upsampling of a raster.
pub fn upsample_raster(m: &Raster, ratio: usize, interp: Interp) -> Result<Raster> {
    let op = Resampler::for_scale(m.height(), m.width(), Scale::Up(ratio), interp)
        .ok_or_else(|| Error::Dimensions(format!("cannot upsample by {ratio}")))?;
    let data = crate::autodiff::resample::resample_planes(m.data(), m.bands(), &op);
    let (h, w) = op.out_dims();
    let r = Raster::new(m.bands(), w, h, data, RangeTag::Raw)?;
    Ok(match m.range() {
        RangeTag::Raw => r,
        tag => r.clamped(tag),
    })
}

/// Copies a single-band raster into `bands` identical bands.
pub fn stack_pan(pan: &Raster, bands: usize) -> Result<Raster> {
    if pan.bands() != 1 {
        return Err(Error::Shape(format!("PAN must have one band, got {}", pan.bands())));
    }
    let mut data = Vec::with_capacity(bands * pan.plane_len());
    for _ in 0..bands {
        data.extend_from_slice(pan.band(0));
    }
    Raster::new(bands, pan.width(), pan.height(), data, pan.range())
}

/// Packs same-sized rasters into an `(N, C, H, W)` tensor, applying `map`.
pub fn batch_tensor<T: Scalar>(rasters: &[&Raster], map: impl Fn(f32) -> f64) -> Result<Tensor<T>> {
    let first = rasters.first().ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    let mut data = Vec::with_capacity(rasters.len() * first.data().len());
    for r in rasters {
        if !r.same_dims(first) {
            return Err(Error::Shape("batch rasters differ in size".into()));
        }
        data.extend(r.data().iter().map(|&v| T::lit(map(v))));
    }
    Tensor::new(vec![rasters.len(), first.bands(), first.height(), first.width()], data)
}

/// Splits an `(N, C, H, W)` tensor back into rasters.
pub fn tensor_rasters<T: Scalar>(t: &Tensor<T>, range: RangeTag, map: impl Fn(f64) -> f32) -> Result<Vec<Raster>> {
    let (n, c, h, w) = t.dims4()?;
    t.data()
        .chunks(c * h * w)
        .take(n)
        .map(|chunk| {
            let data = chunk.iter().map(|v| map(v.as_f64())).collect();
            Ok(Raster::new(c, w, h, data, RangeTag::Raw)?.clamped(range))
        })
        .collect()
}

impl LdpNet<f32> {
    /// Pansharpens one unit-range LRMS/PAN pair into a unit-range raster.
    pub fn pansharpen(&self, ms: &Raster, pan: &Raster) -> Result<Raster> {
        let r = self.config.ratio;
        if ms.bands() != self.config.bands {
            return Err(Error::Shape(format!("model expects {} bands, LRMS has {}", self.config.bands, ms.bands())));
        }
        if pan.width() != r * ms.width() || pan.height() != r * ms.height() {
            return Err(Error::Dimensions(format!(
                "PAN {}x{} is not {r}x the LRMS {}x{}",
                pan.width(),
                pan.height(),
                ms.width(),
                ms.height()
            )));
        }
        let up = upsample_raster(ms, r, Interp::Bicubic)?;
        let stacked = stack_pan(pan, self.config.bands)?;
        let signed = |v: f32| 2.0 * v as f64 - 1.0;
        let up_t = batch_tensor::<f32>(&[&up], signed)?;
        let pan_t = batch_tensor::<f32>(&[&stacked], signed)?;
        let fused = self.fuse_tensors(&up_t, &pan_t)?;
        let mut out = tensor_rasters(&fused, RangeTag::Unit, |v| ((v + 1.0) * 0.5) as f32)?;
        Ok(out.remove(0))
    }
}

/// Convenience for building resampling operators shared across a batch.
pub fn down_operator(h: usize, w: usize, ratio: usize, interp: Interp) -> Result<Arc<Resampler>> {
    Resampler::for_scale(h, w, Scale::Down(ratio), interp)
        .map(Arc::new)
        .ok_or_else(|| Error::Dimensions(format!("{h}x{w} is not divisible by {ratio}")))
}

#[cfg(test)]
mod tests;
