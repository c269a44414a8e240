//! C ABI over the ldpnet toolkit.
//!
//! Every object crosses the boundary as an opaque pointer owned by the
//! caller and released with the matching `*_free`. Fallible calls return an
//! [`LdpStatus`]; on failure the message is kept per thread and can be read
//! with [`ldp_last_error_message`] until the next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use ldpnet::baselines::{fuse, Method};
use ldpnet::metrics::{full_metrics, reduced_metrics, MetricOptions};
use ldpnet::model::checkpoint::load_checkpoint;
use ldpnet::model::LdpNet;
use ldpnet::raster::{load_raster, save_raster, RangeTag, Raster};
use ldpnet::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LdpStatus {
    Ok = 0,
    NullPointer = 1,
    Io = 2,
    Format = 3,
    Shape = 4,
    InvalidArgument = 5,
    Range = 6,
    NonFinite = 7,
    Checkpoint = 8,
    Manifest = 9,
    Protocol = 10,
    Internal = 11,
}

impl From<&Error> for LdpStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Io { .. } | Error::Image(_) => LdpStatus::Io,
            Error::MalformedHeader(_) | Error::TruncatedPlanes { .. } => LdpStatus::Format,
            Error::Shape(_) | Error::Dimensions(_) => LdpStatus::Shape,
            Error::InvalidArgument(_) => LdpStatus::InvalidArgument,
            Error::RangeTag { .. } => LdpStatus::Range,
            Error::NonFinite(_) | Error::NanLoss { .. } => LdpStatus::NonFinite,
            Error::Checkpoint(_) => LdpStatus::Checkpoint,
            Error::Manifest(_) => LdpStatus::Manifest,
            Error::Protocol(_) => LdpStatus::Protocol,
            Error::GraphConsumed => LdpStatus::Internal,
        }
    }
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LdpRange {
    Raw = 0,
    Unit = 1,
    Signed = 2,
}

impl From<LdpRange> for RangeTag {
    fn from(r: LdpRange) -> Self {
        match r {
            LdpRange::Raw => RangeTag::Raw,
            LdpRange::Unit => RangeTag::Unit,
            LdpRange::Signed => RangeTag::Signed,
        }
    }
}

impl From<RangeTag> for LdpRange {
    fn from(r: RangeTag) -> Self {
        match r {
            RangeTag::Raw => LdpRange::Raw,
            RangeTag::Unit => LdpRange::Unit,
            RangeTag::Signed => LdpRange::Signed,
        }
    }
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LdpMethod {
    Ihs = 0,
    Brovey = 1,
    Pca = 2,
}

impl From<LdpMethod> for Method {
    fn from(m: LdpMethod) -> Self {
        match m {
            LdpMethod::Ihs => Method::Ihs,
            LdpMethod::Brovey => Method::Brovey,
            LdpMethod::Pca => Method::Pca,
        }
    }
}

/// Band-sequential float raster.
pub struct LdpRaster {
    inner: Raster,
}

/// Trained fusion network loaded from a checkpoint.
pub struct LdpModel {
    inner: LdpNet<f32>,
}

/// Number of values written by [`ldp_metrics_reduced`]: SAM, SCC, ERGAS, Q4.
pub const LDP_REDUCED_METRICS: usize = 4;
/// Number of values written by [`ldp_metrics_full`]: D_lambda, D_S, QNR.
pub const LDP_FULL_METRICS: usize = 3;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: LdpStatus, msg: impl Into<String>) -> LdpStatus {
    set_error(msg.into());
    status
}

fn guard(f: impl FnOnce() -> Result<(), LdpStatus>) -> LdpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LdpStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(LdpStatus::Internal, format!("internal error: {msg}"))
        }
    }
}

fn check<T>(r: ldpnet::Result<T>) -> Result<T, LdpStatus> {
    r.map_err(|e| fail(LdpStatus::from(&e), e.to_string()))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, LdpStatus> {
    if p.is_null() {
        return Err(fail(LdpStatus::NullPointer, "path is null"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(LdpStatus::InvalidArgument, "path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, LdpStatus> {
    p.as_ref().ok_or_else(|| fail(LdpStatus::NullPointer, format!("{what} is null")))
}

unsafe fn out_ptr<'a, T>(p: *mut *mut T) -> Result<&'a mut *mut T, LdpStatus> {
    let slot = p.as_mut().ok_or_else(|| fail(LdpStatus::NullPointer, "output pointer is null"))?;
    *slot = ptr::null_mut();
    Ok(slot)
}

fn boxed(r: Raster) -> *mut LdpRaster {
    Box::into_raw(Box::new(LdpRaster { inner: r }))
}

/// Toolkit version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ldp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ldp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn ldp_clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Copies `bands * width * height` floats from `data` into a new raster.
///
/// # Safety
/// `data` must point to that many readable floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ldp_raster_new(
    bands: usize,
    width: usize,
    height: usize,
    data: *const f32,
    range: LdpRange,
    out: *mut *mut LdpRaster,
) -> LdpStatus {
    guard(|| {
        let slot = out_ptr(out)?;
        if data.is_null() {
            return Err(fail(LdpStatus::NullPointer, "data is null"));
        }
        let n = bands
            .checked_mul(width)
            .and_then(|v| v.checked_mul(height))
            .ok_or_else(|| fail(LdpStatus::Shape, "raster size overflows"))?;
        let values = std::slice::from_raw_parts(data, n).to_vec();
        *slot = boxed(check(Raster::new(bands, width, height, values, range.into()))?);
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ldp_raster_load(path: *const c_char, out: *mut *mut LdpRaster) -> LdpStatus {
    guard(|| {
        let slot = out_ptr(out)?;
        let path = path_arg(path)?;
        *slot = boxed(check(load_raster(&path))?);
        Ok(())
    })
}

/// # Safety
/// `raster` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ldp_raster_save(raster: *const LdpRaster, path: *const c_char) -> LdpStatus {
    guard(|| {
        let r = deref(raster, "raster")?;
        let path = path_arg(path)?;
        check(save_raster(&r.inner, &path))
    })
}

/// # Safety
/// `raster` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ldp_raster_free(raster: *mut LdpRaster) {
    if !raster.is_null() {
        drop(Box::from_raw(raster));
    }
}

/// # Safety
/// `raster` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn ldp_raster_bands(raster: *const LdpRaster) -> usize {
    raster.as_ref().map_or(0, |r| r.inner.bands())
}

/// # Safety
/// `raster` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn ldp_raster_width(raster: *const LdpRaster) -> usize {
    raster.as_ref().map_or(0, |r| r.inner.width())
}

/// # Safety
/// `raster` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn ldp_raster_height(raster: *const LdpRaster) -> usize {
    raster.as_ref().map_or(0, |r| r.inner.height())
}

/// # Safety
/// `raster` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn ldp_raster_range(raster: *const LdpRaster) -> LdpRange {
    raster.as_ref().map_or(LdpRange::Raw, |r| r.inner.range().into())
}

/// Borrowed view of the band-sequential samples, valid while the raster
/// lives. Null for a null raster.
///
/// # Safety
/// `raster` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn ldp_raster_data(raster: *const LdpRaster) -> *const f32 {
    raster.as_ref().map_or(ptr::null(), |r| r.inner.data().as_ptr())
}

/// Classic component-substitution fusion of a unit-range LRMS and PAN.
///
/// # Safety
/// `ms` and `pan` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ldp_baseline_fuse(
    method: LdpMethod,
    ms: *const LdpRaster,
    pan: *const LdpRaster,
    ratio: usize,
    out: *mut *mut LdpRaster,
) -> LdpStatus {
    guard(|| {
        let slot = out_ptr(out)?;
        let (ms, pan) = (deref(ms, "ms")?, deref(pan, "pan")?);
        *slot = boxed(check(fuse(method.into(), &ms.inner, &pan.inner, ratio))?.fused);
        Ok(())
    })
}

/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ldp_model_load(path: *const c_char, out: *mut *mut LdpModel) -> LdpStatus {
    guard(|| {
        let slot = out_ptr(out)?;
        let path = path_arg(path)?;
        let ck = check(load_checkpoint(&path))?;
        *slot = Box::into_raw(Box::new(LdpModel { inner: ck.net }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ldp_model_free(model: *mut LdpModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn ldp_model_bands(model: *const LdpModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.config.bands)
}

/// # Safety
/// `model` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn ldp_model_ratio(model: *const LdpModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.config.ratio)
}

/// Fuses a unit-range LRMS/PAN pair with a trained model. A model may be
/// shared across threads for concurrent calls.
///
/// # Safety
/// All pointers must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ldp_model_pansharpen(
    model: *const LdpModel,
    ms: *const LdpRaster,
    pan: *const LdpRaster,
    out: *mut *mut LdpRaster,
) -> LdpStatus {
    guard(|| {
        let slot = out_ptr(out)?;
        let m = deref(model, "model")?;
        let (ms, pan) = (deref(ms, "ms")?, deref(pan, "pan")?);
        *slot = boxed(check(m.inner.pansharpen(&ms.inner, &pan.inner))?);
        Ok(())
    })
}

/// Writes SAM, SCC, ERGAS and Q4 of `fused` against `reference` into `out`.
///
/// # Safety
/// Rasters must come from this library; `out` must hold
/// [`LDP_REDUCED_METRICS`] doubles.
#[no_mangle]
pub unsafe extern "C" fn ldp_metrics_reduced(
    fused: *const LdpRaster,
    reference: *const LdpRaster,
    ratio: usize,
    window: usize,
    out: *mut f64,
) -> LdpStatus {
    guard(|| {
        let (f, r) = (deref(fused, "fused")?, deref(reference, "reference")?);
        if out.is_null() {
            return Err(fail(LdpStatus::NullPointer, "output pointer is null"));
        }
        let v = check(reduced_metrics(&f.inner, &r.inner, &MetricOptions { ratio, window }))?;
        ptr::copy_nonoverlapping(v.as_ptr(), out, LDP_REDUCED_METRICS);
        Ok(())
    })
}

/// Writes D_lambda, D_S and QNR of `fused` into `out`.
///
/// # Safety
/// Rasters must come from this library; `out` must hold
/// [`LDP_FULL_METRICS`] doubles.
#[no_mangle]
pub unsafe extern "C" fn ldp_metrics_full(
    fused: *const LdpRaster,
    lrms: *const LdpRaster,
    pan: *const LdpRaster,
    ratio: usize,
    window: usize,
    out: *mut f64,
) -> LdpStatus {
    guard(|| {
        let f = deref(fused, "fused")?;
        let (m, p) = (deref(lrms, "lrms")?, deref(pan, "pan")?);
        if out.is_null() {
            return Err(fail(LdpStatus::NullPointer, "output pointer is null"));
        }
        let v = check(full_metrics(&f.inner, &m.inner, &p.inner, &MetricOptions { ratio, window }))?;
        ptr::copy_nonoverlapping(v.as_ptr(), out, LDP_FULL_METRICS);
        Ok(())
    })
}
