//! C ABI over the sgfm engine.
//!
//! Every object crosses the boundary as an opaque pointer that the caller
//! releases with the matching `_free` function. Fallible calls return an
//! [`SgfmStatus`] and write results through out-pointers; the message of the
//! last failure on the calling thread is available from
//! [`sgfm_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use sgfm_core::flow::{simulate, SpdeParams};
use sgfm_core::spectral::SpectralWorkspace;
use sgfm_core::training::taylor_green;
use sgfm_core::wavelet::{forward_dwt, inverse_dwt, WaveletCoefficients, WaveletFamily};
use sgfm_core::{gaussian_field, l2_norm, Field, Grid, SgfmError, Trajectory};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SgfmStatus {
    Ok = 0,
    InvalidArgument = 1,
    Config = 2,
    Instability = 3,
    Io = 4,
    Format = 5,
    NullPointer = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SgfmWavelet {
    Haar = 0,
    Daubechies4 = 1,
}

impl From<SgfmWavelet> for WaveletFamily {
    fn from(w: SgfmWavelet) -> Self {
        match w {
            SgfmWavelet::Haar => WaveletFamily::Haar,
            SgfmWavelet::Daubechies4 => WaveletFamily::Daubechies4,
        }
    }
}

/// A field on a periodic grid.
pub struct SgfmField(Field);

/// Wavelet coefficients of a field.
pub struct SgfmCoeffs(WaveletCoefficients);

/// Snapshots of a simulated flow.
pub struct SgfmTrajectory(Trajectory);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(SgfmStatus, String);

impl From<SgfmError> for Failure {
    fn from(e: SgfmError) -> Self {
        let status = match &e {
            SgfmError::InvalidGrid(_) | SgfmError::Shape(_) | SgfmError::InvalidArgument(_) => {
                SgfmStatus::InvalidArgument
            }
            SgfmError::Instability { .. } | SgfmError::DivergentLoss { .. } => SgfmStatus::Instability,
            SgfmError::Config(_) => SgfmStatus::Config,
            SgfmError::Io(_) => SgfmStatus::Io,
            SgfmError::MagicMismatch { .. }
            | SgfmError::VersionMismatch { .. }
            | SgfmError::TruncatedPayload { .. }
            | SgfmError::Header(_)
            | SgfmError::Json(_) => SgfmStatus::Format,
        };
        Failure(status, e.to_string())
    }
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SgfmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SgfmStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("panic inside sgfm".into());
            SgfmStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(SgfmStatus::NullPointer, format!("{what} is null"))
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn emit<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn path_arg(p: *const c_char) -> Result<String, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| Failure(SgfmStatus::InvalidArgument, "path is not valid UTF-8".into()))
}

fn grid(ndim: usize, n: usize) -> Result<Grid, Failure> {
    Ok(Grid::new(ndim, n)?)
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length including the NUL,
/// or 0 when there is no error.
///
/// # Safety
/// `buf` must be valid for `len` bytes or null.
#[no_mangle]
pub unsafe extern "C" fn sgfm_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| match &*e.borrow() {
        None => 0,
        Some(msg) => {
            let bytes = msg.as_bytes_with_nul();
            if !buf.is_null() && len > 0 {
                let n = bytes.len().min(len);
                ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
                *buf.add(n - 1) = 0;
            }
            bytes.len()
        }
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sgfm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// # Safety
/// `out` must be a valid pointer to a field pointer.
#[no_mangle]
pub unsafe extern "C" fn sgfm_field_zeros(ndim: usize, n: usize, channels: usize, out: *mut *mut SgfmField) -> SgfmStatus {
    guard(|| {
        if channels == 0 {
            return Err(Failure(SgfmStatus::InvalidArgument, "channels must be positive".into()));
        }
        emit(out, SgfmField(Field::zeros(grid(ndim, n)?, channels)))
    })
}

/// Builds a field from `len` channel-major values.
///
/// # Safety
/// `data` must be valid for `len` reads; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sgfm_field_from_data(
    ndim: usize,
    n: usize,
    channels: usize,
    data: *const f64,
    len: usize,
    out: *mut *mut SgfmField,
) -> SgfmStatus {
    guard(|| {
        if data.is_null() {
            return Err(null("data"));
        }
        let values = std::slice::from_raw_parts(data, len).to_vec();
        emit(out, SgfmField(Field::from_vec(grid(ndim, n)?, channels, values)?))
    })
}

/// Unit white noise.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sgfm_field_gaussian(
    ndim: usize,
    n: usize,
    channels: usize,
    seed: u64,
    out: *mut *mut SgfmField,
) -> SgfmStatus {
    guard(|| {
        if channels == 0 {
            return Err(Failure(SgfmStatus::InvalidArgument, "channels must be positive".into()));
        }
        emit(out, SgfmField(gaussian_field(grid(ndim, n)?, channels, seed)))
    })
}

/// 2D Taylor–Green vortex at time `t`.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sgfm_field_taylor_green(n: usize, viscosity: f64, t: f64, out: *mut *mut SgfmField) -> SgfmStatus {
    guard(|| emit(out, SgfmField(taylor_green(&grid(2, n)?, viscosity, t)?)))
}

/// Number of stored values (`channels · n^ndim`); 0 for null.
///
/// # Safety
/// `f` must be a live field or null.
#[no_mangle]
pub unsafe extern "C" fn sgfm_field_len(f: *const SgfmField) -> usize {
    f.as_ref().map_or(0, |f| f.0.data().len())
}

/// # Safety
/// `f` must be a live field or null.
#[no_mangle]
pub unsafe extern "C" fn sgfm_field_channels(f: *const SgfmField) -> usize {
    f.as_ref().map_or(0, |f| f.0.channels())
}

/// Copies the values into `buf`, which must hold exactly `sgfm_field_len`.
///
/// # Safety
/// `buf` must be valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn sgfm_field_copy(f: *const SgfmField, buf: *mut f64, len: usize) -> SgfmStatus {
    guard(|| {
        let f = as_ref(f, "field")?;
        if buf.is_null() {
            return Err(null("buffer"));
        }
        let data = f.0.data();
        if len != data.len() {
            return Err(Failure(
                SgfmStatus::InvalidArgument,
                format!("buffer holds {len} values, field has {}", data.len()),
            ));
        }
        ptr::copy_nonoverlapping(data.as_ptr(), buf, len);
        Ok(())
    })
}

/// Cell-volume weighted L² norm.
///
/// # Safety
/// `f` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sgfm_field_l2_norm(f: *const SgfmField, out: *mut f64) -> SgfmStatus {
    guard(|| {
        let f = as_ref(f, "field")?;
        if out.is_null() {
            return Err(null("output pointer"));
        }
        *out = l2_norm(&f.0);
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sgfm_field_read(path: *const c_char, out: *mut *mut SgfmField) -> SgfmStatus {
    guard(|| {
        let path = path_arg(path)?;
        emit(out, SgfmField(sgfm_core::io::read_field(path)?))
    })
}

/// # Safety
/// `f` must be live; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sgfm_field_write(f: *const SgfmField, path: *const c_char) -> SgfmStatus {
    guard(|| {
        let f = as_ref(f, "field")?;
        Ok(sgfm_core::io::write_field(path_arg(path)?, &f.0)?)
    })
}

/// # Safety
/// `f` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sgfm_field_free(f: *mut SgfmField) {
    if !f.is_null() {
        drop(Box::from_raw(f));
    }
}

/// # Safety
/// `f` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sgfm_dwt_forward(
    f: *const SgfmField,
    family: SgfmWavelet,
    levels: usize,
    out: *mut *mut SgfmCoeffs,
) -> SgfmStatus {
    guard(|| {
        let f = as_ref(f, "field")?;
        emit(out, SgfmCoeffs(forward_dwt(&f.0, family.into(), levels)?))
    })
}

/// # Safety
/// `c` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sgfm_dwt_inverse(c: *const SgfmCoeffs, out: *mut *mut SgfmField) -> SgfmStatus {
    guard(|| {
        let c = as_ref(c, "coefficients")?;
        emit(out, SgfmField(inverse_dwt(&c.0)?))
    })
}

/// Euclidean norm of all coefficients; -1 for null.
///
/// # Safety
/// `c` must be live or null.
#[no_mangle]
pub unsafe extern "C" fn sgfm_coeffs_norm(c: *const SgfmCoeffs) -> f64 {
    c.as_ref().map_or(-1.0, |c| c.0.norm())
}

/// # Safety
/// `c` must be live or null.
#[no_mangle]
pub unsafe extern "C" fn sgfm_coeffs_len(c: *const SgfmCoeffs) -> usize {
    c.as_ref().map_or(0, |c| c.0.len())
}

/// Copies the coefficients in canonical order into `buf`.
///
/// # Safety
/// `buf` must be valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn sgfm_coeffs_copy(c: *const SgfmCoeffs, buf: *mut f64, len: usize) -> SgfmStatus {
    guard(|| {
        let c = as_ref(c, "coefficients")?;
        if buf.is_null() {
            return Err(null("buffer"));
        }
        let v = c.0.to_vec();
        if len != v.len() {
            return Err(Failure(
                SgfmStatus::InvalidArgument,
                format!("buffer holds {len} values, transform has {}", v.len()),
            ));
        }
        ptr::copy_nonoverlapping(v.as_ptr(), buf, len);
        Ok(())
    })
}

/// # Safety
/// `c` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sgfm_coeffs_free(c: *mut SgfmCoeffs) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// Divergence-free projection of a vector field.
///
/// # Safety
/// `f` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sgfm_project(f: *const SgfmField, out: *mut *mut SgfmField) -> SgfmStatus {
    guard(|| {
        let f = as_ref(f, "field")?;
        let ws = SpectralWorkspace::new(*f.0.grid());
        emit(out, SgfmField(ws.helmholtz_project(&f.0)?))
    })
}

/// Largest absolute divergence of a vector field.
///
/// # Safety
/// `f` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sgfm_divergence_max(f: *const SgfmField, out: *mut f64) -> SgfmStatus {
    guard(|| {
        let f = as_ref(f, "field")?;
        if out.is_null() {
            return Err(null("output pointer"));
        }
        let ws = SpectralWorkspace::new(*f.0.grid());
        *out = ws.divergence(&f.0)?.max_abs();
        Ok(())
    })
}

/// Unforced projected flow from `u0`; `steps + 1` snapshots.
///
/// # Safety
/// `u0` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sgfm_simulate(
    u0: *const SgfmField,
    viscosity: f64,
    noise_amplitude: f64,
    dt: f64,
    steps: usize,
    seed: u64,
    out: *mut *mut SgfmTrajectory,
) -> SgfmStatus {
    guard(|| {
        let u0 = as_ref(u0, "initial field")?;
        let p = SpdeParams::new(viscosity, noise_amplitude, dt)?;
        emit(out, SgfmTrajectory(simulate(&u0.0, &p, steps, seed)?))
    })
}

/// # Safety
/// `t` must be live or null.
#[no_mangle]
pub unsafe extern "C" fn sgfm_trajectory_len(t: *const SgfmTrajectory) -> usize {
    t.as_ref().map_or(0, |t| t.0.len())
}

/// Copies snapshot `index` into a new field.
///
/// # Safety
/// `t` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sgfm_trajectory_snapshot(
    t: *const SgfmTrajectory,
    index: usize,
    out: *mut *mut SgfmField,
) -> SgfmStatus {
    guard(|| {
        let t = as_ref(t, "trajectory")?;
        let s = t.0.snapshots().get(index).ok_or_else(|| {
            Failure(
                SgfmStatus::InvalidArgument,
                format!("snapshot {index} out of range ({} stored)", t.0.len()),
            )
        })?;
        emit(out, SgfmField(s.clone()))
    })
}

/// Time of snapshot `index`; NaN when out of range.
///
/// # Safety
/// `t` must be live or null.
#[no_mangle]
pub unsafe extern "C" fn sgfm_trajectory_time(t: *const SgfmTrajectory, index: usize) -> f64 {
    t.as_ref()
        .and_then(|t| t.0.times().get(index).copied())
        .unwrap_or(f64::NAN)
}

/// # Safety
/// `t` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sgfm_trajectory_free(t: *mut SgfmTrajectory) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}
