//! Component-substitution fusers: IHS, Brovey and PCA.
//!
//! All three upsample the LRMS bicubically, match the PAN to the component
//! it replaces by mean and standard deviation, and clip the result to [0, 1].

use std::time::{Duration, Instant};

use crate::autodiff::{Interp, Scale};
use crate::data::resample_raster;
use crate::error::{Error, Result};
use crate::raster::{RangeTag, Raster};

pub const BROVEY_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Ihs,
    Brovey,
    Pca,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Ihs => "ihs",
            Method::Brovey => "brovey",
            Method::Pca => "pca",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "ihs" => Ok(Method::Ihs),
            "brovey" => Ok(Method::Brovey),
            "pca" => Ok(Method::Pca),
            o => Err(format!("unknown baseline {o:?}")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct FusionResult {
    pub method: String,
    pub fused: Raster,
    pub wall_time: Duration,
    /// Set when PCA fell back to IHS on a rank-deficient covariance.
    pub fallback: bool,
}

pub fn fuse(method: Method, ms: &Raster, pan: &Raster, ratio: usize) -> Result<FusionResult> {
    match method {
        Method::Ihs => ihs_fuse(ms, pan, ratio),
        Method::Brovey => brovey_fuse(ms, pan, ratio),
        Method::Pca => pca_fuse(ms, pan, ratio),
    }
}

fn upsample_checked(ms: &Raster, pan: &Raster, ratio: usize) -> Result<Raster> {
    if pan.bands() != 1 {
        return Err(Error::Shape(format!("PAN must have one band, got {}", pan.bands())));
    }
    if pan.width() != ratio * ms.width() || pan.height() != ratio * ms.height() {
        return Err(Error::Dimensions(format!(
            "PAN {}x{} is not {ratio}x the LRMS {}x{}",
            pan.width(),
            pan.height(),
            ms.width(),
            ms.height()
        )));
    }
    resample_raster(ms, Scale::Up(ratio), Interp::Bicubic)
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

/// Rescales `src` to the mean and standard deviation of `target`.
pub fn match_stats(src: &[f64], target: &[f64]) -> Vec<f64> {
    let (ms, ss) = mean_std(src);
    let (mt, st) = mean_std(target);
    if ss == 0.0 {
        return vec![mt; src.len()];
    }
    src.iter().map(|v| (v - ms) / ss * st + mt).collect()
}

fn intensity(up: &Raster) -> Vec<f64> {
    let c = up.bands() as f64;
    (0..up.plane_len())
        .map(|i| (0..up.bands()).map(|b| up.band(b)[i] as f64).sum::<f64>() / c)
        .collect()
}

fn pan_f64(pan: &Raster) -> Vec<f64> {
    pan.band(0).iter().map(|&v| v as f64).collect()
}

fn finish(method: &str, up: &Raster, planes: Vec<Vec<f64>>, start: Instant, fallback: bool) -> Result<FusionResult> {
    let planes = planes.into_iter().map(|p| p.into_iter().map(|v| v as f32).collect()).collect();
    let fused = Raster::from_planes(planes, up.width(), up.height(), RangeTag::Raw)?.clamped(RangeTag::Unit);
    Ok(FusionResult {
        method: method.to_string(),
        fused,
        wall_time: start.elapsed(),
        fallback,
    })
}

/// Generalized IHS: adds `P_hist - I` to every band.
pub fn ihs_fuse(ms: &Raster, pan: &Raster, ratio: usize) -> Result<FusionResult> {
    let start = Instant::now();
    let up = upsample_checked(ms, pan, ratio)?;
    ihs_from_upsampled(&up, pan, start, false, "ihs")
}

fn ihs_from_upsampled(up: &Raster, pan: &Raster, start: Instant, fallback: bool, name: &str) -> Result<FusionResult> {
    let i = intensity(up);
    let p = match_stats(&pan_f64(pan), &i);
    let planes = (0..up.bands())
        .map(|b| up.band(b).iter().zip(&p).zip(&i).map(|((&u, &p), &i)| u as f64 + (p - i)).collect())
        .collect();
    finish(name, up, planes, start, fallback)
}

/// Brovey ratio transform: scales every band by `P_hist / max(I, eps)`.
/// The floor only acts on near-black pixels, so with `P_hist == I` the
/// output is exactly the upsampled LRMS.
pub fn brovey_fuse(ms: &Raster, pan: &Raster, ratio: usize) -> Result<FusionResult> {
    let start = Instant::now();
    let up = upsample_checked(ms, pan, ratio)?;
    let i = intensity(&up);
    let p = match_stats(&pan_f64(pan), &i);
    let planes = (0..up.bands())
        .map(|b| {
            up.band(b)
                .iter()
                .zip(&p)
                .zip(&i)
                .map(|((&u, &p), &i)| u as f64 * p / i.max(BROVEY_EPS))
                .collect()
        })
        .collect();
    finish("brovey", &up, planes, start, false)
}

/// Cyclic Jacobi eigendecomposition of a symmetric row-major `n x n` matrix.
/// Returns eigenvalues in descending order and the matching unit
/// eigenvectors.
pub fn jacobi_eigen(a: &[f64], n: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut a = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i * n + j].powi(2)).sum();
        let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().max(f64::MIN_POSITIVE);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k * n + p], a[k * n + q]);
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]));
    let vals = order.iter().map(|&i| a[i * n + i]).collect();
    let vecs = order.iter().map(|&i| (0..n).map(|k| v[k * n + i]).collect()).collect();
    (vals, vecs)
}

/// Principal components of the pixel vectors of an image.
#[derive(Clone, Debug)]
pub struct PcaBasis {
    pub means: Vec<f64>,
    pub eigenvalues: Vec<f64>,
    /// Unit eigenvectors, strongest first.
    pub components: Vec<Vec<f64>>,
}

impl PcaBasis {
    pub fn fit(up: &Raster) -> Self {
        let c = up.bands();
        let n = up.plane_len() as f64;
        let means: Vec<f64> = (0..c).map(|b| up.band(b).iter().map(|&v| v as f64).sum::<f64>() / n).collect();
        let mut cov = vec![0.0; c * c];
        for i in 0..c {
            for j in i..c {
                let s: f64 = up
                    .band(i)
                    .iter()
                    .zip(up.band(j))
                    .map(|(&a, &b)| (a as f64 - means[i]) * (b as f64 - means[j]))
                    .sum::<f64>()
                    / n;
                cov[i * c + j] = s;
                cov[j * c + i] = s;
            }
        }
        let (eigenvalues, components) = jacobi_eigen(&cov, c);
        PcaBasis {
            means,
            eigenvalues,
            components,
        }
    }

    /// Score planes, one per component.
    pub fn forward(&self, up: &Raster) -> Vec<Vec<f64>> {
        self.components
            .iter()
            .map(|v| {
                (0..up.plane_len())
                    .map(|i| (0..up.bands()).map(|b| (up.band(b)[i] as f64 - self.means[b]) * v[b]).sum())
                    .collect()
            })
            .collect()
    }

    /// Band planes from score planes.
    pub fn inverse(&self, scores: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = scores.first().map_or(0, Vec::len);
        (0..self.means.len())
            .map(|b| (0..n).map(|i| self.means[b] + scores.iter().zip(&self.components).map(|(s, v)| s[i] * v[b]).sum::<f64>()).collect())
            .collect()
    }

    pub fn is_degenerate(&self) -> bool {
        let max = self.eigenvalues.first().copied().unwrap_or(0.0);
        max <= 0.0 || self.eigenvalues.iter().any(|&l| l <= 1e-10 * max)
    }
}

/// Replaces the first principal component by the matched PAN. Falls back
/// to IHS when the band covariance is rank-deficient.
pub fn pca_fuse(ms: &Raster, pan: &Raster, ratio: usize) -> Result<FusionResult> {
    let start = Instant::now();
    let up = upsample_checked(ms, pan, ratio)?;
    let basis = PcaBasis::fit(&up);
    if basis.is_degenerate() {
        log::warn!("PCA: rank-deficient band covariance {:?}, using IHS", basis.eigenvalues);
        return ihs_from_upsampled(&up, pan, start, true, "pca");
    }
    let mut scores = basis.forward(&up);
    let p = pan_f64(pan);
    let (mp, _) = mean_std(&p);
    let (m1, _) = mean_std(&scores[0]);
    let cov: f64 = p.iter().zip(&scores[0]).map(|(a, b)| (a - mp) * (b - m1)).sum();
    // Align the component sign with the PAN before substituting.
    if cov < 0.0 {
        scores[0].iter_mut().for_each(|v| *v = -*v);
    }
    let mut matched = match_stats(&p, &scores[0]);
    if cov < 0.0 {
        matched.iter_mut().for_each(|v| *v = -*v);
    }
    scores[0] = matched;
    let planes = basis.inverse(&scores);
    finish("pca", &up, planes, start, false)
}
