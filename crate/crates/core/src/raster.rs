//! Multi-band rasters and the on-disk raster container.
//!
//! Container layout (all integers little-endian):
//!
//! | bytes   | field                                   |
//! |---------|-----------------------------------------|
//! | 0..4    | magic `LDPR`                            |
//! | 4       | version (1)                             |
//! | 5..9    | band count `C` (u32)                    |
//! | 9..13   | width `W` (u32)                         |
//! | 13..17  | height `H` (u32)                        |
//! | 17      | dtype code (0 = f32)                    |
//! | 18..    | `C*W*H` f32 values, band-major, row-major |
//!
//! A UTF-8 sidecar `<file>.meta` holds `key=value` lines (`range_tag`,
//! `source`, stretch parameters).

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const RASTER_MAGIC: &[u8; 4] = b"LDPR";
pub const RASTER_VERSION: u8 = 1;
pub const DTYPE_F32: u8 = 0;
const HEADER_LEN: usize = 18;

/// Declared value range of a raster.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RangeTag {
    Raw,
    /// Values in `[0, 1]`.
    Unit,
    /// Values in `[-1, 1]`.
    Signed,
}

impl RangeTag {
    pub fn as_str(self) -> &'static str {
        match self {
            RangeTag::Raw => "raw",
            RangeTag::Unit => "unit",
            RangeTag::Signed => "signed",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "raw" => Ok(RangeTag::Raw),
            "unit" => Ok(RangeTag::Unit),
            "signed" => Ok(RangeTag::Signed),
            other => Err(Error::MalformedHeader(format!("unknown range_tag {other:?}"))),
        }
    }

    fn bounds(self) -> Option<(f32, f32)> {
        match self {
            RangeTag::Raw => None,
            RangeTag::Unit => Some((0.0, 1.0)),
            RangeTag::Signed => Some((-1.0, 1.0)),
        }
    }
}

impl std::fmt::Display for RangeTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BandStats {
    pub min: f32,
    pub max: f32,
    pub mean: f64,
    pub std: f64,
}

/// A `C`-band image stored as planar, band-major `f32` data.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    bands: usize,
    width: usize,
    height: usize,
    data: Vec<f32>,
    range: RangeTag,
    meta: BTreeMap<String, String>,
}

impl Raster {
    pub fn new(bands: usize, width: usize, height: usize, data: Vec<f32>, range: RangeTag) -> Result<Self> {
        if bands == 0 || width == 0 || height == 0 {
            return Err(Error::Dimensions(format!(
                "raster dimensions must be positive, got {bands}x{width}x{height}"
            )));
        }
        if data.len() != bands * width * height {
            return Err(Error::Shape(format!(
                "raster {bands}x{width}x{height} needs {} values, got {}",
                bands * width * height,
                data.len()
            )));
        }
        let r = Raster {
            bands,
            width,
            height,
            data,
            range,
            meta: BTreeMap::new(),
        };
        r.check_range()?;
        Ok(r)
    }

    pub fn zeros(bands: usize, width: usize, height: usize, range: RangeTag) -> Self {
        Raster::new(bands, width, height, vec![0.0; bands * width * height], range)
            .expect("zero raster is always valid")
    }

    pub fn from_planes(planes: Vec<Vec<f32>>, width: usize, height: usize, range: RangeTag) -> Result<Self> {
        let bands = planes.len();
        let mut data = Vec::with_capacity(bands * width * height);
        for (b, p) in planes.into_iter().enumerate() {
            if p.len() != width * height {
                return Err(Error::Shape(format!("plane {b} has {} values, expected {}", p.len(), width * height)));
            }
            data.extend(p);
        }
        Raster::new(bands, width, height, data, range)
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn plane_len(&self) -> usize {
        self.width * self.height
    }

    pub fn range(&self) -> RangeTag {
        self.range
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn band(&self, b: usize) -> &[f32] {
        let n = self.plane_len();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn band_mut(&mut self, b: usize) -> &mut [f32] {
        let n = self.plane_len();
        &mut self.data[b * n..(b + 1) * n]
    }

    pub fn get(&self, b: usize, y: usize, x: usize) -> f32 {
        self.data[(b * self.height + y) * self.width + x]
    }

    pub fn meta(&self) -> &BTreeMap<String, String> {
        &self.meta
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.meta.insert(key.into(), value.into());
    }

    /// Re-tags the raster after validating that every value fits the range.
    pub fn with_range(mut self, range: RangeTag) -> Result<Self> {
        self.range = range;
        self.check_range()?;
        Ok(self)
    }

    /// Clamps into the range bounds and re-tags.
    pub fn clamped(mut self, range: RangeTag) -> Self {
        if let Some((lo, hi)) = range.bounds() {
            for v in &mut self.data {
                *v = v.clamp(lo, hi);
            }
        }
        self.range = range;
        self
    }

    pub fn same_dims(&self, other: &Raster) -> bool {
        self.bands == other.bands && self.width == other.width && self.height == other.height
    }

    pub fn band_stats(&self, b: usize) -> BandStats {
        let band = self.band(b);
        let n = band.len() as f64;
        let mut min = f32::INFINITY;
        let mut max = f32::NEG_INFINITY;
        let mut sum = 0.0f64;
        for &v in band {
            min = min.min(v);
            max = max.max(v);
            sum += v as f64;
        }
        let mean = sum / n;
        let var = band.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        BandStats {
            min,
            max,
            mean,
            std: var.sqrt(),
        }
    }

    /// Crops a window `[x0, x0+w) x [y0, y0+h)` from every band.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Raster> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::Dimensions(format!(
                "crop {w}x{h}@({x0},{y0}) exceeds {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(self.bands * w * h);
        for b in 0..self.bands {
            for y in y0..y0 + h {
                let row = (b * self.height + y) * self.width;
                data.extend_from_slice(&self.data[row + x0..row + x0 + w]);
            }
        }
        Raster::new(self.bands, w, h, data, self.range)
    }

    /// Builds a raster holding the listed bands (indices may repeat).
    pub fn select_bands(&self, order: &[usize]) -> Result<Raster> {
        let mut data = Vec::with_capacity(order.len() * self.plane_len());
        for &b in order {
            if b >= self.bands {
                return Err(Error::InvalidArgument(format!("band index {b} out of range for C={}", self.bands)));
            }
            data.extend_from_slice(self.band(b));
        }
        Raster::new(order.len(), self.width, self.height, data, self.range)
    }

    fn check_range(&self) -> Result<()> {
        if let Some((lo, hi)) = self.range.bounds() {
            if let Some(v) = self.data.iter().find(|v| !(lo..=hi).contains(*v)) {
                return Err(Error::InvalidArgument(format!(
                    "value {v} outside declared {} range [{lo}, {hi}]",
                    self.range
                )));
            }
        }
        Ok(())
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

pub fn encode_raster(r: &Raster) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * r.data.len());
    out.extend_from_slice(RASTER_MAGIC);
    out.push(RASTER_VERSION);
    out.extend_from_slice(&(r.bands as u32).to_le_bytes());
    out.extend_from_slice(&(r.width as u32).to_le_bytes());
    out.extend_from_slice(&(r.height as u32).to_le_bytes());
    out.push(DTYPE_F32);
    for v in &r.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes a container payload. The result is tagged `raw`.
pub fn decode_raster(bytes: &[u8]) -> Result<Raster> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::MalformedHeader(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[0..4] != RASTER_MAGIC {
        return Err(Error::MalformedHeader("bad magic".into()));
    }
    if bytes[4] != RASTER_VERSION {
        return Err(Error::MalformedHeader(format!("unsupported version {}", bytes[4])));
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (bands, width, height) = (u32_at(5), u32_at(9), u32_at(13));
    if bytes[17] != DTYPE_F32 {
        return Err(Error::MalformedHeader(format!("unsupported dtype code {}", bytes[17])));
    }
    if bands == 0 || width == 0 || height == 0 {
        return Err(Error::MalformedHeader(format!("zero dimension {bands}x{width}x{height}")));
    }
    let expected = bands
        .checked_mul(width)
        .and_then(|v| v.checked_mul(height))
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| Error::MalformedHeader("dimensions overflow".into()))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(Error::TruncatedPlanes {
            expected,
            found: payload.len(),
        });
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        let plane = width * height;
        return Err(Error::NonFinite(format!(
            "band {} pixel {}",
            i / plane,
            i % plane
        )));
    }
    Raster::new(bands, width, height, data, RangeTag::Raw)
}

/// Writes the container and its sidecar.
pub fn save_raster(r: &Raster, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, encode_raster(r)).map_err(|e| Error::io(path, e))?;
    let mut side = String::new();
    side.push_str(&format!("range_tag={}\n", r.range));
    for (k, v) in &r.meta {
        side.push_str(&format!("{k}={v}\n"));
    }
    let sp = sidecar_path(path);
    fs::write(&sp, side).map_err(|e| Error::io(&sp, e))
}

/// Reads a container. The range tag and metadata come from the sidecar when
/// one is present; without it the raster is tagged `raw`.
pub fn load_raster(path: &Path) -> Result<Raster> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = decode_raster(&bytes)?;
    let sp = sidecar_path(path);
    if sp.exists() {
        let text = fs::read_to_string(&sp).map_err(|e| Error::io(&sp, e))?;
        let mut range = RangeTag::Raw;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::MalformedHeader(format!("sidecar line without '=': {line:?}")))?;
            if k == "range_tag" {
                range = RangeTag::parse(v)?;
            } else {
                r.meta.insert(k.to_string(), v.to_string());
            }
        }
        r = r.with_range(range)?;
    }
    Ok(r)
}

/// Value at percentile `pct` (0..=100) with linear interpolation between
/// order statistics.
pub fn percentile(sorted: &[f32], pct: f64) -> f32 {
    debug_assert!(!sorted.is_empty());
    let pos = pct / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let t = pos - lo as f64;
    (sorted[lo] as f64 * (1.0 - t) + sorted[hi] as f64 * t) as f32
}

/// Outcome of [`linear_stretch`].
#[derive(Clone, Debug)]
pub struct Stretch {
    pub raster: Raster,
    /// Per-band `(value at lo_pct, value at hi_pct)`.
    pub params: Vec<(f32, f32)>,
    /// Bands whose percentiles coincided; these were mapped to zero.
    pub constant_bands: Vec<usize>,
}

/// Per-band percentile stretch into `[0, 1]`.
pub fn linear_stretch(r: &Raster, lo_pct: f64, hi_pct: f64) -> Result<Stretch> {
    if !(0.0..=100.0).contains(&lo_pct) || !(0.0..=100.0).contains(&hi_pct) || lo_pct >= hi_pct {
        return Err(Error::InvalidArgument(format!(
            "stretch percentiles must satisfy 0 <= lo < hi <= 100, got ({lo_pct}, {hi_pct})"
        )));
    }
    let mut out = r.clone();
    let mut params = Vec::with_capacity(r.bands);
    let mut constant_bands = Vec::new();
    for b in 0..r.bands {
        let mut sorted = r.band(b).to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let lo = percentile(&sorted, lo_pct);
        let hi = percentile(&sorted, hi_pct);
        params.push((lo, hi));
        let band = out.band_mut(b);
        if hi <= lo {
            log::warn!("band {b} is constant between the stretch percentiles; mapped to zero");
            constant_bands.push(b);
            band.iter_mut().for_each(|v| *v = 0.0);
            continue;
        }
        let scale = 1.0 / (hi as f64 - lo as f64);
        for v in band.iter_mut() {
            *v = ((*v as f64 - lo as f64) * scale).clamp(0.0, 1.0) as f32;
        }
    }
    out.range = RangeTag::Unit;
    out.meta.insert("stretch_pct".into(), format!("{lo_pct},{hi_pct}"));
    out.meta.insert(
        "stretch_params".into(),
        params.iter().map(|(l, h)| format!("{l}:{h}")).collect::<Vec<_>>().join(","),
    );
    Ok(Stretch {
        raster: out,
        params,
        constant_bands,
    })
}

/// `x -> 2x - 1`; requires a unit raster.
pub fn to_signed(r: &Raster) -> Result<Raster> {
    expect_range(r, RangeTag::Unit)?;
    let mut out = r.clone();
    out.data.iter_mut().for_each(|v| *v = (2.0 * *v - 1.0).clamp(-1.0, 1.0));
    out.range = RangeTag::Signed;
    Ok(out)
}

/// `x -> (x + 1) / 2`; requires a signed raster.
pub fn from_signed(r: &Raster) -> Result<Raster> {
    expect_range(r, RangeTag::Signed)?;
    let mut out = r.clone();
    out.data.iter_mut().for_each(|v| *v = ((*v + 1.0) * 0.5).clamp(0.0, 1.0));
    out.range = RangeTag::Unit;
    Ok(out)
}

fn expect_range(r: &Raster, want: RangeTag) -> Result<()> {
    if r.range != want {
        return Err(Error::RangeTag {
            expected: want.to_string(),
            found: r.range.to_string(),
        });
    }
    Ok(())
}

/// Writes an 8-bit RGB PNG preview using a 2-98% stretch per output channel.
pub fn save_preview(r: &Raster, band_order: [usize; 3], path: &Path) -> Result<()> {
    let rgb = r.select_bands(&band_order)?;
    let stretched = linear_stretch(&rgb, 2.0, 98.0)?.raster;
    let (w, h) = (r.width, r.height);
    let mut buf = Vec::with_capacity(w * h * 3);
    for i in 0..w * h {
        for c in 0..3 {
            buf.push((stretched.band(c)[i] * 255.0).round().clamp(0.0, 255.0) as u8);
        }
    }
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let img = image::RgbImage::from_raw(w as u32, h as u32, buf)
        .ok_or_else(|| Error::Image("preview buffer size mismatch".into()))?;
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Image(e.to_string()))
}

/// Writes `bytes` to `path` via a temporary file and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = {
        let mut s = path.as_os_str().to_owned();
        s.push(".tmp");
        PathBuf::from(s)
    };
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
