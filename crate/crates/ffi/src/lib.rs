//! C interface to the nnblend engine.
//!
//! Networks live behind opaque handles created by the `*_read` /
//! `*_from_bytes` constructors and released with the matching `*_free`.
//! Every fallible call returns an [`NnbStatus`]; on failure a message for the
//! calling thread is available from [`nnb_last_error`] until its next call.
//!
//! An int16 network handle owns scratch buffers, so one handle must not be
//! used from two threads at once. Distinct handles are independent, and the
//! float handle is read-only after construction.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use nnblend::dataset::PatchFile;
use nnblend::engine::{self, BlendRequest, Scratch};
use nnblend::gating::{self, CuMeta, GatingMode};
use nnblend::metrics;
use nnblend::model::{NetworkConfig, Weights};
use nnblend::quantizer::{self, CalibrationSet, QuantizedWeights};
use nnblend::{Error, Tensor};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NnbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Precondition = 4,
    Infeasible = 5,
    Format = 6,
    Io = 7,
    /// Internal inconsistency or a caught panic.
    Internal = 8,
}

/// Gating modes accepted by [`nnb_should_apply`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NnbGatingMode {
    Default = 0,
    Fast = 1,
    Slow = 2,
}

/// Float network (NNBB weights).
pub struct NnbFloatNet {
    weights: Weights,
}

/// Int16 network (NNBQ) with its private scratch buffers.
pub struct NnbIntNet {
    weights: QuantizedWeights,
    scratch: Scratch,
}

/// Size figures of a network depth.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct NnbNetInfo {
    pub n_layers: u32,
    pub border: u32,
    pub param_count: u64,
    pub param_bytes: u64,
    /// At the requested MAC block size, border overhead included.
    pub mac_per_pixel: f64,
    /// At the requested memory block size.
    pub peak_memory_bytes: u64,
}

/// Coding-unit metadata for gating.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct NnbCuMeta {
    pub is_affine: bool,
    pub uses_ciip: bool,
    /// Non-default BCW weight.
    pub uses_bcw: bool,
    pub uses_smvd: bool,
    pub poc_current: i32,
    pub poc_ref0: i32,
    pub poc_ref1: i32,
    pub width: u32,
    pub height: u32,
    pub is_biprediction: bool,
}

struct Failure {
    status: NnbStatus,
    message: String,
}

impl Failure {
    fn new(status: NnbStatus, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Shape(_) => NnbStatus::Shape,
            Error::Argument(_) => NnbStatus::InvalidArgument,
            Error::Precondition(_) => NnbStatus::Precondition,
            Error::Infeasible { .. } => NnbStatus::Infeasible,
            Error::Bookkeeping(_) => NnbStatus::Internal,
            Error::Format(_) => NnbStatus::Format,
            Error::Io(_) => NnbStatus::Io,
        };
        Self::new(status, e.to_string())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: Option<String>) {
    let c = message.map(|m| CString::new(m.replace('\0', " ")).unwrap_or_default());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = c);
}

/// Runs `f`, records its error message and converts panics into
/// [`NnbStatus::Internal`].
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> NnbStatus {
    match panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error(None);
            NnbStatus::Ok
        }
        Ok(Err(e)) => {
            set_last_error(Some(e.message));
            e.status
        }
        Err(payload) => {
            let what = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown".into());
            set_last_error(Some(format!("internal panic: {what}")));
            NnbStatus::Internal
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure::new(NnbStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

/// # Safety
/// `p` is null or a NUL-terminated string.
unsafe fn path_arg(p: *const c_char, name: &str) -> Result<PathBuf, Failure> {
    non_null(p, name)?;
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(NnbStatus::InvalidArgument, format!("{name} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

/// # Safety
/// `data` is null or points to `len` readable bytes.
unsafe fn bytes_arg<'a>(data: *const u8, len: usize, name: &str) -> Result<&'a [u8], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(data, name)?;
    Ok(std::slice::from_raw_parts(data, len))
}

/// # Safety
/// The sample pointers are null or point to `width * height` readable values.
unsafe fn request(
    pred0: *const i16,
    pred1: *const i16,
    width: usize,
    height: usize,
    bit_depth: u8,
) -> Result<BlendRequest, Failure> {
    non_null(pred0, "pred0")?;
    non_null(pred1, "pred1")?;
    let n = width
        .checked_mul(height)
        .ok_or_else(|| Failure::new(NnbStatus::InvalidArgument, "plane size overflows"))?;
    let plane = |p: *const i16| Tensor::new(1, height, width, std::slice::from_raw_parts(p, n).to_vec());
    Ok(BlendRequest::new(plane(pred0)?, plane(pred1)?, bit_depth)?)
}

/// # Safety
/// `out` is null or points to `out_len` writable values.
unsafe fn write_output(result: &[i16], out: *mut i16, out_len: usize) -> Result<(), Failure> {
    non_null(out, "out")?;
    if out_len < result.len() {
        return Err(Failure::new(
            NnbStatus::InvalidArgument,
            format!("output buffer holds {out_len} samples, {} needed", result.len()),
        ));
    }
    ptr::copy_nonoverlapping(result.as_ptr(), out, result.len());
    Ok(())
}

/// Stores a new handle in `*out`.
///
/// # Safety
/// `out` is null or writable.
unsafe fn emit<T>(value: T, out: *mut *mut T) -> Result<(), Failure> {
    non_null(out, "out")?;
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn nnb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null after a
/// successful call. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn nnb_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Load float weights from an NNBB file.
///
/// # Safety
/// `path` is a NUL-terminated string and `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn nnb_float_net_read(path: *const c_char, out: *mut *mut NnbFloatNet) -> NnbStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        let bytes = std::fs::read(path).map_err(Error::from)?;
        emit(NnbFloatNet { weights: Weights::from_bytes(&bytes)? }, out)
    })
}

/// Decode float weights from an in-memory NNBB image.
///
/// # Safety
/// `data` points to `len` readable bytes and `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn nnb_float_net_from_bytes(
    data: *const u8,
    len: usize,
    out: *mut *mut NnbFloatNet,
) -> NnbStatus {
    guard(|| {
        let bytes = bytes_arg(data, len, "data")?;
        emit(NnbFloatNet { weights: Weights::from_bytes(bytes)? }, out)
    })
}

/// Release a float network. Null is ignored.
///
/// # Safety
/// `net` is null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nnb_float_net_free(net: *mut NnbFloatNet) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

fn int_net(weights: QuantizedWeights) -> NnbIntNet {
    NnbIntNet { weights, scratch: Scratch::default() }
}

/// Load an int16 network from an NNBQ file.
///
/// # Safety
/// `path` is a NUL-terminated string and `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn nnb_int_net_read(path: *const c_char, out: *mut *mut NnbIntNet) -> NnbStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        let bytes = std::fs::read(path).map_err(Error::from)?;
        emit(int_net(QuantizedWeights::from_bytes(&bytes)?), out)
    })
}

/// Decode an int16 network from an in-memory NNBQ image.
///
/// # Safety
/// `data` points to `len` readable bytes and `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn nnb_int_net_from_bytes(data: *const u8, len: usize, out: *mut *mut NnbIntNet) -> NnbStatus {
    guard(|| {
        let bytes = bytes_arg(data, len, "data")?;
        emit(int_net(QuantizedWeights::from_bytes(bytes)?), out)
    })
}

/// Write an int16 network as an NNBQ file.
///
/// # Safety
/// `net` is a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn nnb_int_net_write(net: *const NnbIntNet, path: *const c_char) -> NnbStatus {
    guard(|| {
        non_null(net, "net")?;
        let path = path_arg(path, "path")?;
        std::fs::write(path, (*net).weights.to_bytes()).map_err(Error::from)?;
        Ok(())
    })
}

/// Release an int16 network. Null is ignored.
///
/// # Safety
/// `net` is null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nnb_int_net_free(net: *mut NnbIntNet) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Calibrate `net` on the patches of an in-memory NNBP image and return the
/// int16 network. With `ranges_only` the error search is skipped.
///
/// # Safety
/// `net` is a live handle, `patches` points to `len` readable bytes and `out`
/// is writable.
#[no_mangle]
pub unsafe extern "C" fn nnb_quantize(
    net: *const NnbFloatNet,
    patches: *const u8,
    len: usize,
    ranges_only: bool,
    out: *mut *mut NnbIntNet,
) -> NnbStatus {
    guard(|| {
        non_null(net, "net")?;
        let file = PatchFile::from_bytes(bytes_arg(patches, len, "patches")?)?;
        let w = &(*net).weights;
        if file.n_border != w.config().border() {
            return Err(Failure::new(
                NnbStatus::Shape,
                format!("patches carry a border of {}, the network needs {}", file.n_border, w.config().border()),
            ));
        }
        let calib = CalibrationSet::from_records(&file.records)?;
        let qw = if ranges_only {
            quantizer::quantize_from_ranges(w, &calib)?
        } else {
            quantizer::quantize_direct(w, &calib)?
        };
        emit(int_net(qw), out)
    })
}

/// Border N of a network handle (0 for null): planes passed to the blend
/// calls are `2N` samples wider and taller than the output.
///
/// # Safety
/// `net` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nnb_int_net_border(net: *const NnbIntNet) -> u32 {
    net.as_ref().map_or(0, |n| n.weights.config().border() as u32)
}

/// # Safety
/// `net` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nnb_float_net_border(net: *const NnbFloatNet) -> u32 {
    net.as_ref().map_or(0, |n| n.weights.config().border() as u32)
}

/// Blend two `width x height` prediction planes (row-major) with the int16
/// engine. `out` receives `(width - 2N) x (height - 2N)` samples.
///
/// # Safety
/// `net` is a live handle not in use on another thread; `pred0` and `pred1`
/// point to `width * height` samples; `out` points to `out_len` writable
/// samples.
#[no_mangle]
pub unsafe extern "C" fn nnb_int_net_blend(
    net: *mut NnbIntNet,
    pred0: *const i16,
    pred1: *const i16,
    width: usize,
    height: usize,
    bit_depth: u8,
    out: *mut i16,
    out_len: usize,
) -> NnbStatus {
    guard(|| {
        non_null(net, "net")?;
        let net = &mut *net;
        let req = request(pred0, pred1, width, height, bit_depth)?;
        let mut result = Vec::new();
        engine::forward_int16_into(&net.weights, &req, &mut net.scratch, &mut result)?;
        write_output(&result, out, out_len)
    })
}

/// Blend with the float reference path, rounded to samples.
///
/// # Safety
/// As for [`nnb_int_net_blend`].
#[no_mangle]
pub unsafe extern "C" fn nnb_float_net_blend(
    net: *const NnbFloatNet,
    pred0: *const i16,
    pred1: *const i16,
    width: usize,
    height: usize,
    bit_depth: u8,
    out: *mut i16,
    out_len: usize,
) -> NnbStatus {
    guard(|| {
        non_null(net, "net")?;
        let req = request(pred0, pred1, width, height, bit_depth)?;
        let result = engine::forward_float(&(*net).weights, &req)?;
        write_output(result.as_slice(), out, out_len)
    })
}

/// Parameter count, MAC/pixel at `mac_block` and peak activation memory at
/// `memory_block` for an `n_layers` network.
///
/// # Safety
/// `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn nnb_net_info(
    n_layers: u32,
    mac_block: u32,
    memory_block: u32,
    out: *mut NnbNetInfo,
) -> NnbStatus {
    guard(|| {
        non_null(out, "out")?;
        let cfg = NetworkConfig::new(n_layers as usize)?;
        let r = cfg.complexity(mac_block as usize, memory_block as usize)?;
        *out = NnbNetInfo {
            n_layers,
            border: cfg.border() as u32,
            param_count: r.param_count as u64,
            param_bytes: r.parameter_memory as u64,
            mac_per_pixel: r.mac_per_pixel,
            peak_memory_bytes: r.peak_memory as u64,
        };
        Ok(())
    })
}

/// Gating decision. `mode` is an [`NnbGatingMode`] value.
///
/// # Safety
/// `cu` is readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nnb_should_apply(cu: *const NnbCuMeta, mode: u32, out: *mut bool) -> NnbStatus {
    guard(|| {
        non_null(cu, "cu")?;
        non_null(out, "out")?;
        let mode = match mode {
            0 => GatingMode::Default,
            1 => GatingMode::Fast,
            2 => GatingMode::Slow,
            m => return Err(Failure::new(NnbStatus::InvalidArgument, format!("unknown gating mode {m}"))),
        };
        let c = &*cu;
        let meta = CuMeta {
            is_affine: c.is_affine,
            uses_ciip: c.uses_ciip,
            uses_bcw: c.uses_bcw,
            uses_smvd: c.uses_smvd,
            poc_current: c.poc_current,
            poc_ref0: c.poc_ref0,
            poc_ref1: c.poc_ref1,
            width: c.width,
            height: c.height,
            is_biprediction: c.is_biprediction,
        };
        *out = gating::should_apply(&meta, mode)?;
        Ok(())
    })
}

/// SATD between two `width x height` planes; both sides must be multiples
/// of 8.
///
/// # Safety
/// `a` and `b` point to `width * height` samples and `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn nnb_satd(a: *const i16, b: *const i16, width: usize, height: usize, out: *mut u64) -> NnbStatus {
    guard(|| {
        non_null(a, "a")?;
        non_null(b, "b")?;
        non_null(out, "out")?;
        let n = width
            .checked_mul(height)
            .ok_or_else(|| Failure::new(NnbStatus::InvalidArgument, "plane size overflows"))?;
        let plane = |p: *const i16| Tensor::new(1, height, width, std::slice::from_raw_parts(p, n).to_vec());
        *out = metrics::satd(&plane(a)?, &plane(b)?)?;
        Ok(())
    })
}
