//! Quality indices with a reference (SAM, SCC, ERGAS, Q4) and without one
//! (D_lambda, D_S, QNR). Inputs are unit-range rasters.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::autodiff::{Interp, Scale};
use crate::data::resample_raster;
use crate::error::{Error, Result};
use crate::raster::Raster;

pub const DEFAULT_WINDOW: usize = 32;

fn check_same(x: &Raster, r: &Raster) -> Result<()> {
    if !x.same_dims(r) {
        return Err(Error::Shape(format!(
            "rasters differ: {}x{}x{} vs {}x{}x{}",
            x.bands(),
            x.width(),
            x.height(),
            r.bands(),
            r.width(),
            r.height()
        )));
    }
    Ok(())
}

/// Mean spectral angle in degrees. Pixels where either vector is zero are
/// left out of the mean.
pub fn sam(x: &Raster, reference: &Raster) -> Result<f64> {
    check_same(x, reference)?;
    if x.bands() < 2 {
        return Err(Error::Shape("SAM needs at least two bands".into()));
    }
    let n = x.plane_len();
    let (mut sum, mut count) = (0.0, 0usize);
    for i in 0..n {
        let (mut nx, mut nr) = (0.0f64, 0.0f64);
        for b in 0..x.bands() {
            nx += (x.band(b)[i] as f64).powi(2);
            nr += (reference.band(b)[i] as f64).powi(2);
        }
        if nx == 0.0 || nr == 0.0 {
            continue;
        }
        // 2 atan2(|u - v|, |u + v|) on the unit vectors stays accurate near 0
        // where acos of the cosine loses half the digits.
        let (nx, nr) = (nx.sqrt(), nr.sqrt());
        let (mut d, mut s) = (0.0f64, 0.0f64);
        for b in 0..x.bands() {
            let (u, v) = (x.band(b)[i] as f64 / nx, reference.band(b)[i] as f64 / nr);
            d += (u - v).powi(2);
            s += (u + v).powi(2);
        }
        sum += 2.0 * d.sqrt().atan2(s.sqrt());
        count += 1;
    }
    Ok(if count == 0 { 0.0 } else { (sum / count as f64).to_degrees() })
}

/// 3x3 Laplacian over interior pixels.
fn laplacian(p: &[f32], w: usize, h: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(w.saturating_sub(2) * h.saturating_sub(2));
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let v = |yy: usize, xx: usize| p[yy * w + xx] as f64;
            out.push(4.0 * v(y, x) - v(y - 1, x) - v(y + 1, x) - v(y, x - 1) - v(y, x + 1));
        }
    }
    out
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    (saa > 0.0 && sbb > 0.0).then(|| (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Mean over bands of the correlation between Laplacian-filtered bands.
/// Bands whose filtered image is constant are skipped; 0 if all are.
pub fn scc(x: &Raster, reference: &Raster) -> Result<f64> {
    check_same(x, reference)?;
    if x.width() < 3 || x.height() < 3 {
        return Err(Error::Shape("SCC needs at least 3x3 pixels".into()));
    }
    let (w, h) = (x.width(), x.height());
    let vals: Vec<f64> = (0..x.bands())
        .filter_map(|b| pearson(&laplacian(x.band(b), w, h), &laplacian(reference.band(b), w, h)))
        .collect();
    Ok(if vals.is_empty() { 0.0 } else { vals.iter().sum::<f64>() / vals.len() as f64 })
}

pub fn ergas(x: &Raster, reference: &Raster, ratio: usize) -> Result<f64> {
    check_same(x, reference)?;
    if ratio == 0 {
        return Err(Error::InvalidArgument("ratio must be positive".into()));
    }
    let n = x.plane_len() as f64;
    let mut acc = 0.0;
    for b in 0..x.bands() {
        let mean = reference.band(b).iter().map(|&v| v as f64).sum::<f64>() / n;
        if mean <= 1e-12 {
            return Err(Error::InvalidArgument(format!("ERGAS: reference band {b} has mean {mean}")));
        }
        let mse = x.band(b).iter().zip(reference.band(b)).map(|(&a, &r)| (a as f64 - r as f64).powi(2)).sum::<f64>() / n;
        acc += mse / (mean * mean);
    }
    Ok(100.0 / ratio as f64 * (acc / x.bands() as f64).sqrt())
}

/// Top-left corners of the `win x win` tiles at stride `stride`. An image
/// smaller than the window is treated as one window.
fn windows(w: usize, h: usize, win: usize, stride: usize) -> (usize, Vec<(usize, usize)>) {
    let win = win.min(w).min(h).max(1);
    let stride = stride.max(1);
    let mut out = Vec::new();
    let mut y = 0;
    while y + win <= h {
        let mut x = 0;
        while x + win <= w {
            out.push((x, y));
            x += stride;
        }
        y += stride;
    }
    (win, out)
}

/// Universal image quality index of two planes, averaged over windows.
/// Windows where both planes are flat, or both means are zero, are skipped;
/// with every window skipped the index is 1.
pub fn uiqi(a: &[f32], b: &[f32], w: usize, h: usize, window: usize) -> f64 {
    let (win, corners) = windows(w, h, window, window);
    let n = (win * win) as f64;
    let (mut sum, mut count) = (0.0, 0usize);
    for (x0, y0) in corners {
        let (mut ma, mut mb) = (0.0, 0.0);
        for y in y0..y0 + win {
            for x in x0..x0 + win {
                ma += a[y * w + x] as f64;
                mb += b[y * w + x] as f64;
            }
        }
        ma /= n;
        mb /= n;
        let (mut va, mut vb, mut cab) = (0.0, 0.0, 0.0);
        for y in y0..y0 + win {
            for x in x0..x0 + win {
                let (da, db) = (a[y * w + x] as f64 - ma, b[y * w + x] as f64 - mb);
                va += da * da;
                vb += db * db;
                cab += da * db;
            }
        }
        let (va, vb, cab) = (va / n, vb / n, cab / n);
        let den = (va + vb) * (ma * ma + mb * mb);
        if den <= 0.0 {
            continue;
        }
        sum += 4.0 * cab * ma * mb / den;
        count += 1;
    }
    if count == 0 {
        1.0
    } else {
        sum / count as f64
    }
}

type Quat = [f64; 4];

fn qmul(a: Quat, b: Quat) -> Quat {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

fn qconj(a: Quat) -> Quat {
    [a[0], -a[1], -a[2], -a[3]]
}

fn qnorm2(a: Quat) -> f64 {
    a.iter().map(|v| v * v).sum()
}

/// Quaternion quality index for 4-band images, averaged over windows.
///
/// Each pixel is `b0 + b1 i + b2 j + b3 k`. The covariance is the mean of
/// `(x - mean_x) * conj(y - mean_y)`. Windows where either image has zero
/// variance or zero mean are skipped; if every window is skipped the result
/// is 1 when the images are equal and 0 otherwise.
pub fn q4(x: &Raster, reference: &Raster, window: usize) -> Result<f64> {
    check_same(x, reference)?;
    if x.bands() != 4 {
        return Err(Error::Shape(format!("Q4 needs exactly 4 bands, got {}", x.bands())));
    }
    let w = x.width();
    let (win, corners) = windows(w, x.height(), window, window);
    let n = (win * win) as f64;
    let px = |r: &Raster, i: usize| -> Quat { [r.band(0)[i] as f64, r.band(1)[i] as f64, r.band(2)[i] as f64, r.band(3)[i] as f64] };
    let (mut sum, mut count) = (0.0, 0usize);
    for (x0, y0) in corners {
        let idx: Vec<usize> = (y0..y0 + win).flat_map(|y| (x0..x0 + win).map(move |xx| y * w + xx)).collect();
        let (mut mx, mut my) = ([0.0; 4], [0.0; 4]);
        for &i in &idx {
            let (a, b) = (px(x, i), px(reference, i));
            for k in 0..4 {
                mx[k] += a[k] / n;
                my[k] += b[k] / n;
            }
        }
        let (mut vx, mut vy, mut cxy) = (0.0, 0.0, [0.0; 4]);
        for &i in &idx {
            let (a, b) = (px(x, i), px(reference, i));
            let da: Quat = std::array::from_fn(|k| a[k] - mx[k]);
            let db: Quat = std::array::from_fn(|k| b[k] - my[k]);
            vx += qnorm2(da) / n;
            vy += qnorm2(db) / n;
            let p = qmul(da, qconj(db));
            for k in 0..4 {
                cxy[k] += p[k] / n;
            }
        }
        let (nmx, nmy) = (qnorm2(mx), qnorm2(my));
        if vx <= 0.0 || vy <= 0.0 || nmx <= 0.0 || nmy <= 0.0 {
            continue;
        }
        sum += 4.0 * qnorm2(cxy).sqrt() * nmx.sqrt() * nmy.sqrt() / ((vx + vy) * (nmx + nmy));
        count += 1;
    }
    Ok(if count > 0 {
        sum / count as f64
    } else if x.data() == reference.data() {
        1.0
    } else {
        0.0
    })
}

fn upsample(lrms: &Raster, ratio: usize) -> Result<Raster> {
    resample_raster(lrms, Scale::Up(ratio), Interp::Bicubic)
}

fn check_pair(fused: &Raster, lrms: &Raster, ratio: usize) -> Result<()> {
    if fused.bands() != lrms.bands() || fused.width() != ratio * lrms.width() || fused.height() != ratio * lrms.height() {
        return Err(Error::Dimensions(format!(
            "fused {}x{}x{} does not match LRMS {}x{}x{} at ratio {ratio}",
            fused.bands(),
            fused.width(),
            fused.height(),
            lrms.bands(),
            lrms.width(),
            lrms.height()
        )));
    }
    Ok(())
}

/// Spectral distortion: mean over ordered band pairs of the change in
/// inter-band Q between the upsampled LRMS and the fused image (p = 1).
pub fn d_lambda(fused: &Raster, lrms: &Raster, ratio: usize, window: usize) -> Result<f64> {
    check_pair(fused, lrms, ratio)?;
    let up = upsample(lrms, ratio)?;
    d_lambda_upsampled(fused, &up, window)
}

pub(crate) fn d_lambda_upsampled(fused: &Raster, up: &Raster, window: usize) -> Result<f64> {
    check_same(fused, up)?;
    let c = fused.bands();
    if c < 2 {
        return Err(Error::Shape("D_lambda needs at least two bands".into()));
    }
    let (w, h) = (fused.width(), fused.height());
    let mut acc = 0.0;
    for i in 0..c {
        for j in 0..c {
            if i != j {
                let qf = uiqi(fused.band(i), fused.band(j), w, h, window);
                let qm = uiqi(up.band(i), up.band(j), w, h, window);
                acc += (qf - qm).abs();
            }
        }
    }
    Ok(acc / (c * (c - 1)) as f64)
}

/// Spatial distortion: mean over bands of `|Q(f_i, P) - Q(up(m)_i, up(down(P)))|` (q = 1).
pub fn d_s(fused: &Raster, lrms: &Raster, pan: &Raster, ratio: usize, window: usize) -> Result<f64> {
    check_pair(fused, lrms, ratio)?;
    if pan.bands() != 1 || pan.width() != fused.width() || pan.height() != fused.height() {
        return Err(Error::Dimensions("PAN must be one band at the fused resolution".into()));
    }
    let up = upsample(lrms, ratio)?;
    let pan_low = resample_raster(pan, Scale::Down(ratio), Interp::Bicubic)?;
    let pan_lu = upsample(&pan_low, ratio)?;
    let (w, h) = (fused.width(), fused.height());
    let c = fused.bands();
    let acc: f64 = (0..c)
        .map(|i| (uiqi(fused.band(i), pan.band(0), w, h, window) - uiqi(up.band(i), pan_lu.band(0), w, h, window)).abs())
        .sum();
    Ok(acc / c as f64)
}

pub fn qnr(d_lambda: f64, d_s: f64) -> f64 {
    (1.0 - d_lambda) * (1.0 - d_s)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Protocol {
    /// With a reference: SAM, SCC, ERGAS, Q4.
    Reduced,
    /// Without a reference: D_lambda, D_S, QNR.
    Full,
}

impl std::str::FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "reduced" => Ok(Protocol::Reduced),
            "full" => Ok(Protocol::Full),
            o => Err(format!("unknown protocol {o:?} (expected reduced or full)")),
        }
    }
}

impl Protocol {
    pub fn columns(self) -> &'static [&'static str] {
        match self {
            Protocol::Reduced => &["SAM", "SCC", "ERGAS", "Q4"],
            Protocol::Full => &["D_lambda", "D_S", "QNR"],
        }
    }

    pub fn ideal(self) -> &'static [f64] {
        match self {
            Protocol::Reduced => &[0.0, 1.0, 0.0, 1.0],
            Protocol::Full => &[0.0, 0.0, 1.0],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Reduced => "reduced",
            Protocol::Full => "full",
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MetricOptions {
    pub ratio: usize,
    pub window: usize,
}

impl Default for MetricOptions {
    fn default() -> Self {
        MetricOptions {
            ratio: 4,
            window: DEFAULT_WINDOW,
        }
    }
}

/// Metrics of one image against its reference.
pub fn reduced_metrics(fused: &Raster, reference: &Raster, opt: &MetricOptions) -> Result<Vec<f64>> {
    Ok(vec![
        sam(fused, reference)?,
        scc(fused, reference)?,
        ergas(fused, reference, opt.ratio)?,
        q4(fused, reference, opt.window)?,
    ])
}

/// No-reference metrics of one fused image.
pub fn full_metrics(fused: &Raster, lrms: &Raster, pan: &Raster, opt: &MetricOptions) -> Result<Vec<f64>> {
    let dl = d_lambda(fused, lrms, opt.ratio, opt.window)?;
    let ds = d_s(fused, lrms, pan, opt.ratio, opt.window)?;
    Ok(vec![dl, ds, qnr(dl, ds)])
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub protocol: Protocol,
    pub images: Vec<(String, Vec<f64>)>,
}

impl MetricsReport {
    pub fn new(protocol: Protocol) -> Self {
        MetricsReport {
            protocol,
            images: Vec::new(),
        }
    }

    pub fn push(&mut self, id: impl Into<String>, values: Vec<f64>) -> Result<()> {
        if values.len() != self.protocol.columns().len() {
            return Err(Error::InvalidArgument("metric row has the wrong width".into()));
        }
        self.images.push((id.into(), values));
        Ok(())
    }

    /// Arithmetic mean over images.
    pub fn aggregate(&self) -> Vec<f64> {
        let k = self.protocol.columns().len();
        let n = self.images.len().max(1) as f64;
        (0..k).map(|j| self.images.iter().map(|(_, v)| v[j]).sum::<f64>() / n).collect()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        let j = self.protocol.columns().iter().position(|c| *c == name)?;
        Some(self.aggregate()[j])
    }

    pub fn as_map(&self) -> BTreeMap<&'static str, f64> {
        self.protocol.columns().iter().copied().zip(self.aggregate()).collect()
    }

    /// Fixed-width table: one row per image, then the mean and ideal rows.
    pub fn to_table(&self) -> String {
        let mut s = format!("# protocol {}\n", self.protocol.as_str());
        let _ = write!(s, "{:<24}", "image");
        for c in self.protocol.columns() {
            let _ = write!(s, "{c:>12}");
        }
        s.push('\n');
        let row = |s: &mut String, id: &str, v: &[f64]| {
            let _ = write!(s, "{id:<24}");
            for x in v {
                let _ = write!(s, "{x:>12.4}");
            }
            s.push('\n');
        };
        for (id, v) in &self.images {
            row(&mut s, id, v);
        }
        row(&mut s, "mean", &self.aggregate());
        row(&mut s, "ideal", self.protocol.ideal());
        s
    }
}
