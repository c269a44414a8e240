//! Degraded images and the hybrid unsupervised objective.
//!
//! All four residual terms and the KL term are evaluated on unit-range
//! tensors: the network output is mapped from (-1, 1) to (0, 1) before the
//! degradation blocks see it, so every loss lives in the same domain as the
//! metrics.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Interp, Resampler, Scalar, Scale, Var};
use crate::error::{Error, Result};
use crate::model::Blocks;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Weight of the spatial loss.
    pub alpha: f64,
    /// Weight of the spectral loss.
    pub beta: f64,
    /// Weight of the spectral KL loss.
    pub mu: f64,
    /// Weight of the high-resolution spatial term inside the spatial loss.
    pub delta: f64,
    /// Weight of the downsampled spectral term inside the spectral loss.
    pub gamma: f64,
    pub eps_kl: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 1.0,
            beta: 1.0,
            mu: 0.01,
            delta: 10.0,
            gamma: 20.0,
            eps_kl: 1e-8,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha, self.beta, self.mu, self.delta, self.gamma, self.eps_kl];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(format!("loss weights must be finite and nonnegative: {self:?}")));
        }
        Ok(())
    }
}

/// Switches for the optional loss terms. The high-resolution spatial term
/// and both spectral terms are always on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub use_spatial_l: bool,
    pub use_kl: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation {
            use_spatial_l: true,
            use_kl: true,
        }
    }
}

impl Ablation {
    /// The four loss configurations compared in the ablation table.
    pub fn table_rows() -> [(&'static str, Ablation); 4] {
        [
            ("basic", Ablation { use_spatial_l: false, use_kl: false }),
            ("+L_spatial_l", Ablation { use_spatial_l: true, use_kl: false }),
            ("+L_KL", Ablation { use_spatial_l: false, use_kl: true }),
            ("+L_spatial_l +L_KL", Ablation { use_spatial_l: true, use_kl: true }),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub weights: LossWeights,
    pub ablation: Ablation,
    /// Compare the low-resolution spatial pair after a further `/r` decimation.
    pub spatial_l_decimate: bool,
    /// Treat the input-side KL distribution as a constant target.
    pub kl_stop_grad_p: bool,
    pub interp: Interp,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            weights: LossWeights::default(),
            ablation: Ablation::default(),
            spatial_l_decimate: false,
            kl_stop_grad_p: false,
            interp: Interp::Bicubic,
        }
    }
}

/// Outputs of the shared graying and reblurring blocks.
#[derive(Clone, Copy, Debug)]
pub struct DegradedSet {
    pub m_hat_gray: Var,
    pub m_hat_blur: Var,
    pub up_m_gray: Var,
    pub pan_blur: Var,
}

/// Applies the single GB/RB instance to the prediction and the two inputs.
pub fn degraded_set<T: Scalar>(g: &mut Graph<T>, blocks: &Blocks, m_hat: Var, up_m: Var, pan: Var) -> Result<DegradedSet> {
    same_shape(g, &[m_hat, up_m, pan])?;
    let m_hat_gray = blocks.gb_forward(g, m_hat)?.gray;
    let m_hat_blur = blocks.rb_forward(g, m_hat)?;
    let up_m_gray = blocks.gb_forward(g, up_m)?.gray;
    let pan_blur = blocks.rb_forward(g, pan)?;
    Ok(DegradedSet {
        m_hat_gray,
        m_hat_blur,
        up_m_gray,
        pan_blur,
    })
}

fn same_shape<T: Scalar>(g: &Graph<T>, vs: &[Var]) -> Result<()> {
    let s = g.shape(vs[0]);
    for &v in &vs[1..] {
        if g.shape(v) != s {
            return Err(Error::Shape(format!("loss inputs differ in shape: {:?} vs {:?}", s, g.shape(v))));
        }
    }
    Ok(())
}

fn mse<T: Scalar>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    let d = g.sub(a, b)?;
    Ok(g.mean_sq(d))
}

/// `mean_sq(a - b)`, optionally after decimating both by `op`.
pub fn spatial_l_term<T: Scalar>(g: &mut Graph<T>, pan_blur: Var, up_m_gray: Var, decimate: Option<&Arc<Resampler>>) -> Result<Var> {
    match decimate {
        None => mse(g, pan_blur, up_m_gray),
        Some(op) => {
            let a = g.resample(pan_blur, op.clone())?;
            let b = g.resample(up_m_gray, op.clone())?;
            mse(g, a, b)
        }
    }
}

pub fn spatial_h_term<T: Scalar>(g: &mut Graph<T>, pan: Var, m_hat_gray: Var) -> Result<Var> {
    mse(g, pan, m_hat_gray)
}

pub fn spectral_h_term<T: Scalar>(g: &mut Graph<T>, up_m: Var, m_hat_blur: Var) -> Result<Var> {
    mse(g, up_m, m_hat_blur)
}

pub fn spectral_l_term<T: Scalar>(g: &mut Graph<T>, m: Var, m_hat: Var, down: &Arc<Resampler>) -> Result<Var> {
    let d = g.resample(m_hat, down.clone())?;
    mse(g, m, d)
}

/// Spatial loss: `mean_sq(P_blur - up_m_gray) + delta * mean_sq(P - M_gray)`.
pub fn spatial_loss<T: Scalar>(g: &mut Graph<T>, pan_blur: Var, up_m_gray: Var, pan: Var, m_hat_gray: Var, delta: f64) -> Result<Var> {
    let l = spatial_l_term(g, pan_blur, up_m_gray, None)?;
    let h = spatial_h_term(g, pan, m_hat_gray)?;
    let h = g.scalar_mul(h, delta);
    g.add(l, h)
}

/// Spectral loss: `mean_sq(up_m - M_blur) + gamma * mean_sq(m - down(M))`.
pub fn spectral_loss<T: Scalar>(g: &mut Graph<T>, up_m: Var, m_hat_blur: Var, m: Var, m_hat: Var, gamma: f64, interp: Interp) -> Result<Var> {
    let (_, _, h, w) = crate::autodiff::dims4(g.shape(m_hat))?;
    let ratio = h / g.shape(m)[2].max(1);
    let down = Resampler::for_scale(h, w, Scale::Down(ratio), interp)
        .ok_or_else(|| Error::Dimensions(format!("{h}x{w} is not divisible by {ratio}")))?;
    let a = spectral_h_term(g, up_m, m_hat_blur)?;
    let b = spectral_l_term(g, m, m_hat, &Arc::new(down))?;
    let b = g.scalar_mul(b, gamma);
    g.add(a, b)
}

/// Batch mean of `KL(softmax(up_m - up_m_gray) || softmax(M - P))`, each
/// residual flattened per sample.
pub fn spectral_kl_loss<T: Scalar>(
    g: &mut Graph<T>,
    up_m: Var,
    up_m_gray: Var,
    m_hat: Var,
    pan: Var,
    eps: f64,
    stop_grad_p: bool,
) -> Result<Var> {
    same_shape(g, &[up_m, up_m_gray, m_hat, pan])?;
    let shape = g.shape(up_m).to_vec();
    let n = shape[0];
    let len: usize = shape[1..].iter().product();
    let x_low = g.sub(up_m, up_m_gray)?;
    let x = g.sub(m_hat, pan)?;
    let x_low = g.reshape(x_low, &[n, len])?;
    let x = g.reshape(x, &[n, len])?;
    let mut p = g.softmax_rows(x_low)?;
    if stop_grad_p {
        p = g.detach(p);
    }
    let q = g.softmax_rows(x)?;
    g.kl_div_rows(p, q, eps)
}

/// Graph handles of the individual terms; masked terms are `None`.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub spatial_l: Option<Var>,
    pub spatial_h: Var,
    pub spectral_h: Var,
    pub spectral_l: Var,
    pub kl: Option<Var>,
}

/// Weighted sum of the active terms. Masked terms are not added at all, so
/// they contribute exactly zero and receive no gradient.
pub fn total_loss<T: Scalar>(g: &mut Graph<T>, terms: &LossTerms, w: &LossWeights) -> Result<Var> {
    let mut spatial = g.scalar_mul(terms.spatial_h, w.delta);
    if let Some(l) = terms.spatial_l {
        spatial = g.add(l, spatial)?;
    }
    let sl = g.scalar_mul(terms.spectral_l, w.gamma);
    let spectral = g.add(terms.spectral_h, sl)?;
    let a = g.scalar_mul(spatial, w.alpha);
    let b = g.scalar_mul(spectral, w.beta);
    let mut total = g.add(a, b)?;
    if let Some(kl) = terms.kl {
        let k = g.scalar_mul(kl, w.mu);
        total = g.add(total, k)?;
    }
    Ok(total)
}

/// Unit-range inputs of the objective.
#[derive(Clone, Copy, Debug)]
pub struct LossInputs {
    /// Network output in the signed range.
    pub m_hat_signed: Var,
    /// Upsampled LRMS, `(N, C, H, W)`.
    pub up_m: Var,
    /// PAN copied into every band, `(N, C, H, W)`.
    pub pan: Var,
    /// LRMS, `(N, C, H/r, W/r)`.
    pub m: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct LossGraph {
    pub m_hat: Var,
    pub degraded: DegradedSet,
    pub terms: LossTerms,
    pub total: Var,
}

/// Builds the whole objective on `g`.
pub fn build_loss<T: Scalar>(g: &mut Graph<T>, blocks: &Blocks, inp: &LossInputs, cfg: &LossConfig) -> Result<LossGraph> {
    cfg.weights.validate()?;
    let half = g.scalar_mul(inp.m_hat_signed, 0.5);
    let m_hat = g.add_scalar(half, 0.5);
    let d = degraded_set(g, blocks, m_hat, inp.up_m, inp.pan)?;
    let (_, _, h, w) = crate::autodiff::dims4(g.shape(m_hat))?;
    let ratio = blocks.cfg.ratio;
    let down = crate::model::down_operator(h, w, ratio, cfg.interp)?;
    if g.shape(inp.m)[2..] != [h / ratio, w / ratio] {
        return Err(Error::Dimensions(format!(
            "LRMS {:?} is not 1/{ratio} of {h}x{w}",
            g.shape(inp.m)
        )));
    }
    let spatial_l = if cfg.ablation.use_spatial_l {
        let dec = cfg.spatial_l_decimate.then_some(&down);
        Some(spatial_l_term(g, d.pan_blur, d.up_m_gray, dec)?)
    } else {
        None
    };
    let spatial_h = spatial_h_term(g, inp.pan, d.m_hat_gray)?;
    let spectral_h = spectral_h_term(g, inp.up_m, d.m_hat_blur)?;
    let spectral_l = spectral_l_term(g, inp.m, m_hat, &down)?;
    let kl = if cfg.ablation.use_kl {
        Some(spectral_kl_loss(g, inp.up_m, d.up_m_gray, m_hat, inp.pan, cfg.weights.eps_kl, cfg.kl_stop_grad_p)?)
    } else {
        None
    };
    let terms = LossTerms {
        spatial_l,
        spatial_h,
        spectral_h,
        spectral_l,
        kl,
    };
    let total = total_loss(g, &terms, &cfg.weights)?;
    Ok(LossGraph {
        m_hat,
        degraded: d,
        terms,
        total,
    })
}

/// Scalar values of every term.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub spatial_l: f64,
    pub spatial_h: f64,
    pub spectral_h: f64,
    pub spectral_l: f64,
    pub kl: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn read<T: Scalar>(g: &Graph<T>, lg: &LossGraph) -> Self {
        let v = |x: Option<Var>| x.map_or(0.0, |x| g.value(x).item().as_f64());
        LossBreakdown {
            spatial_l: v(lg.terms.spatial_l),
            spatial_h: v(Some(lg.terms.spatial_h)),
            spectral_h: v(Some(lg.terms.spectral_h)),
            spectral_l: v(Some(lg.terms.spectral_l)),
            kl: v(lg.terms.kl),
            total: v(Some(lg.total)),
        }
    }

    /// Recomputes the total from the terms under a mask.
    pub fn weighted_total(&self, w: &LossWeights, a: &Ablation) -> f64 {
        let sl = if a.use_spatial_l { self.spatial_l } else { 0.0 };
        let kl = if a.use_kl { self.kl } else { 0.0 };
        w.alpha * (sl + w.delta * self.spatial_h) + w.beta * (self.spectral_h + w.gamma * self.spectral_l) + w.mu * kl
    }

    /// Sample-count weighted running mean.
    pub fn accumulate(&mut self, other: &LossBreakdown, weight: f64, total_weight: f64) {
        let f = weight / total_weight;
        self.spatial_l += other.spatial_l * f;
        self.spatial_h += other.spatial_h * f;
        self.spectral_h += other.spectral_h * f;
        self.spectral_l += other.spectral_l * f;
        self.kl += other.kl * f;
        self.total += other.total * f;
    }

    pub fn is_finite(&self) -> bool {
        [self.spatial_l, self.spatial_h, self.spectral_h, self.spectral_l, self.kl, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

impl fmt::Display for LossBreakdown {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:.9e} {:.9e} {:.9e} {:.9e} {:.9e} {:.9e}",
            self.spatial_l, self.spatial_h, self.spectral_h, self.spectral_l, self.kl, self.total
        )
    }
}
