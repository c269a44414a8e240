//! Separable resampling as a fixed linear operator.
//!
//! Output sample `j` reads the input at `src = (j + 0.5) * in/out - 0.5`
//! (pixel-center alignment). Out-of-range taps are clamped to the border,
//! so every row of the operator sums to one and constants are preserved.

use super::Scalar;

/// Interpolation kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interp {
    /// Keys cubic convolution with `a = -0.5`.
    #[default]
    Bicubic,
    Bilinear,
    Nearest,
}

impl std::str::FromStr for Interp {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bicubic" => Ok(Interp::Bicubic),
            "bilinear" => Ok(Interp::Bilinear),
            "nearest" => Ok(Interp::Nearest),
            other => Err(format!("unknown interpolator {other:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scale {
    Up(usize),
    Down(usize),
}

const CUBIC_A: f64 = -0.5;

pub fn cubic_weight(x: f64) -> f64 {
    let x = x.abs();
    let a = CUBIC_A;
    if x <= 1.0 {
        (a + 2.0) * x * x * x - (a + 3.0) * x * x + 1.0
    } else if x < 2.0 {
        a * x * x * x - 5.0 * a * x * x + 8.0 * a * x - 4.0 * a
    } else {
        0.0
    }
}

/// One axis of the separable operator: per output index, `(input index, weight)` taps.
#[derive(Clone, Debug, PartialEq)]
pub struct Axis {
    pub n_in: usize,
    pub n_out: usize,
    pub taps: Vec<Vec<(usize, f64)>>,
}

impl Axis {
    pub fn new(n_in: usize, n_out: usize, interp: Interp) -> Self {
        let ratio = n_in as f64 / n_out as f64;
        let clamp = |i: isize| i.clamp(0, n_in as isize - 1) as usize;
        let mut taps = Vec::with_capacity(n_out);
        for j in 0..n_out {
            let src = (j as f64 + 0.5) * ratio - 0.5;
            let mut row: Vec<(usize, f64)> = Vec::with_capacity(4);
            match interp {
                Interp::Nearest => {
                    row.push((clamp((src + 0.5).floor() as isize), 1.0));
                }
                Interp::Bilinear => {
                    let i0 = src.floor();
                    let t = src - i0;
                    row.push((clamp(i0 as isize), 1.0 - t));
                    row.push((clamp(i0 as isize + 1), t));
                }
                Interp::Bicubic => {
                    let i0 = src.floor();
                    let t = src - i0;
                    for (d, x) in [(-1isize, 1.0 + t), (0, t), (1, 1.0 - t), (2, 2.0 - t)] {
                        row.push((clamp(i0 as isize + d), cubic_weight(x)));
                    }
                }
            }
            // Merge duplicate (clamped) indices and drop zero weights.
            row.sort_by_key(|&(i, _)| i);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
            for (i, w) in row {
                match merged.last_mut() {
                    Some((li, lw)) if *li == i => *lw += w,
                    _ => merged.push((i, w)),
                }
            }
            merged.retain(|&(_, w)| w != 0.0);
            taps.push(merged);
        }
        Axis { n_in, n_out, taps }
    }
}

/// A 2-D resampling operator applied independently to every `(n, c)` plane.
#[derive(Clone, Debug, PartialEq)]
pub struct Resampler {
    pub rows: Axis,
    pub cols: Axis,
}

impl Resampler {
    pub fn new(in_h: usize, in_w: usize, out_h: usize, out_w: usize, interp: Interp) -> Self {
        Resampler {
            rows: Axis::new(in_h, out_h, interp),
            cols: Axis::new(in_w, out_w, interp),
        }
    }

    pub fn for_scale(in_h: usize, in_w: usize, scale: Scale, interp: Interp) -> Option<Self> {
        match scale {
            Scale::Up(f) if f > 0 => Some(Self::new(in_h, in_w, in_h * f, in_w * f, interp)),
            Scale::Down(f) if f > 0 && in_h % f == 0 && in_w % f == 0 => {
                Some(Self::new(in_h, in_w, in_h / f, in_w / f, interp))
            }
            _ => None,
        }
    }

    pub fn out_dims(&self) -> (usize, usize) {
        (self.rows.n_out, self.cols.n_out)
    }

    /// Resamples one `in_h x in_w` plane into `out`.
    pub fn apply_plane<T: Scalar>(&self, input: &[T], out: &mut [T]) {
        let (ih, iw) = (self.rows.n_in, self.cols.n_in);
        let (oh, ow) = (self.rows.n_out, self.cols.n_out);
        let mut tmp = vec![T::zero(); ih * ow];
        for y in 0..ih {
            let src = &input[y * iw..(y + 1) * iw];
            let dst = &mut tmp[y * ow..(y + 1) * ow];
            for (x, taps) in self.cols.taps.iter().enumerate() {
                let mut acc = T::zero();
                for &(i, w) in taps {
                    acc += src[i] * T::lit(w);
                }
                dst[x] = acc;
            }
        }
        for (y, taps) in self.rows.taps.iter().enumerate() {
            let dst = &mut out[y * ow..(y + 1) * ow];
            dst.iter_mut().for_each(|v| *v = T::zero());
            for &(i, w) in taps {
                let w = T::lit(w);
                let src = &tmp[i * ow..(i + 1) * ow];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += s * w;
                }
            }
        }
        debug_assert_eq!(out.len(), oh * ow);
    }

    /// Accumulates the transpose of the operator: `grad_in += A^T grad_out`.
    pub fn apply_plane_transpose<T: Scalar>(&self, grad_out: &[T], grad_in: &mut [T]) {
        let iw = self.cols.n_in;
        let ih = self.rows.n_in;
        let ow = self.cols.n_out;
        let mut tmp = vec![T::zero(); ih * ow];
        for (y, taps) in self.rows.taps.iter().enumerate() {
            let src = &grad_out[y * ow..(y + 1) * ow];
            for &(i, w) in taps {
                let w = T::lit(w);
                let dst = &mut tmp[i * ow..(i + 1) * ow];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += s * w;
                }
            }
        }
        for y in 0..ih {
            let src = &tmp[y * ow..(y + 1) * ow];
            let dst = &mut grad_in[y * iw..(y + 1) * iw];
            for (x, taps) in self.cols.taps.iter().enumerate() {
                for &(i, w) in taps {
                    dst[i] += src[x] * T::lit(w);
                }
            }
        }
    }
}

/// Resamples planar `f32` data of `planes` planes.
pub fn resample_planes(data: &[f32], planes: usize, r: &Resampler) -> Vec<f32> {
    let (ih, iw) = (r.rows.n_in, r.cols.n_in);
    let (oh, ow) = r.out_dims();
    let mut out = vec![0.0f32; planes * oh * ow];
    for p in 0..planes {
        r.apply_plane(&data[p * ih * iw..(p + 1) * ih * iw], &mut out[p * oh * ow..(p + 1) * oh * ow]);
    }
    out
}
