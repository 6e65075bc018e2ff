//! C ABI over the solvers.
//!
//! Solutions live behind opaque handles created by `smfg_*_solve` and
//! released with the matching `smfg_*_free`. Every fallible call returns a
//! [`SmfgStatus`]; the message of the last failure on the calling thread is
//! available from [`smfg_last_error`]. Configurations are passed as JSON
//! strings in the same schema the `smfg` binary reads.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use singular_mfg::config::RunConfig;
use singular_mfg::estimates::{stationary_report, time_report};
use singular_mfg::hamiltonian::alpha_threshold_a5;
use singular_mfg::stationary::{epsilon_continuation_stationary, StationarySolution};
use singular_mfg::time_solver::{epsilon_continuation_time, TimeDependentSolution};
use singular_mfg::MfgError;

/// Status codes; the nonzero values match the `smfg` exit codes where they overlap.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmfgStatus {
    Ok = 0,
    Io = 1,
    Validation = 2,
    NonConvergence = 3,
    Singularity = 4,
    NullPointer = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

impl From<&MfgError> for SmfgStatus {
    fn from(e: &MfgError) -> Self {
        match e.exit_code() {
            1 => SmfgStatus::Io,
            2 => SmfgStatus::Validation,
            3 => SmfgStatus::NonConvergence,
            _ => SmfgStatus::Singularity,
        }
    }
}

/// Opaque stationary solution.
pub struct SmfgStationary {
    config: RunConfig,
    sol: StationarySolution,
}

/// Opaque time-dependent solution.
pub struct SmfgTime {
    config: RunConfig,
    sol: TimeDependentSolution,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: SmfgStatus, msg: impl Into<String>) -> SmfgStatus {
    set_error(msg.into());
    status
}

fn guard(f: impl FnOnce() -> SmfgStatus) -> SmfgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(SmfgStatus::Panic, "internal panic"),
    }
}

fn from_err(e: MfgError) -> SmfgStatus {
    fail(SmfgStatus::from(&e), format!("{} {}", e.kind(), e))
}

unsafe fn config_from(json: *const c_char) -> Result<RunConfig, SmfgStatus> {
    if json.is_null() {
        return Err(fail(SmfgStatus::NullPointer, "config string is null"));
    }
    let text = CStr::from_ptr(json)
        .to_str()
        .map_err(|_| fail(SmfgStatus::Validation, "config is not UTF-8"))?;
    RunConfig::from_json(text).map_err(from_err)
}

fn copy_out(src: &[f64], buf: *mut f64, len: usize) -> SmfgStatus {
    if buf.is_null() {
        return fail(SmfgStatus::NullPointer, "output buffer is null");
    }
    if len < src.len() {
        return fail(
            SmfgStatus::BufferTooSmall,
            format!("buffer holds {len} values, need {}", src.len()),
        );
    }
    // SAFETY: caller guarantees `buf` points to at least `len` writable doubles.
    unsafe { ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len()) };
    SmfgStatus::Ok
}

fn string_out(s: String, out: *mut *mut c_char) -> SmfgStatus {
    if out.is_null() {
        return fail(SmfgStatus::NullPointer, "output pointer is null");
    }
    let c = CString::new(s).expect("json has no nul bytes");
    // SAFETY: `out` checked non-null above.
    unsafe { *out = c.into_raw() };
    SmfgStatus::Ok
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn smfg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn smfg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Threshold on the singularity exponent for dimension `d` and growth
/// `gamma`; writes `INFINITY` when no finite threshold exists.
///
/// # Safety
/// `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn smfg_alpha_threshold(d: u32, gamma: f64, out: *mut f64) -> SmfgStatus {
    if out.is_null() {
        return fail(SmfgStatus::NullPointer, "output pointer is null");
    }
    if gamma.is_nan() || gamma <= 1.0 || d == 0 {
        return fail(SmfgStatus::Validation, "need d >= 1 and gamma > 1");
    }
    // SAFETY: checked non-null.
    unsafe { *out = alpha_threshold_a5(d as usize, gamma) };
    SmfgStatus::Ok
}

/// Solves the stationary problem along the config's eps schedule and keeps
/// the last stage.
///
/// # Safety
/// `config_json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn smfg_stationary_solve(config_json: *const c_char, out: *mut *mut SmfgStationary) -> SmfgStatus {
    guard(|| {
        if out.is_null() {
            return fail(SmfgStatus::NullPointer, "output handle pointer is null");
        }
        let config = match config_from(config_json) {
            Ok(c) => c,
            Err(s) => return s,
        };
        let run = || -> singular_mfg::Result<StationarySolution> {
            let sweep = epsilon_continuation_stationary(
                &config.model()?,
                &config.coupling()?,
                &config.coupling.eps_schedule,
                config.grid()?,
                &config.solver,
            )?;
            Ok(sweep.stages.into_iter().last().expect("non-empty schedule"))
        };
        match run() {
            Ok(sol) => {
                *out = Box::into_raw(Box::new(SmfgStationary { config, sol }));
                SmfgStatus::Ok
            }
            Err(e) => from_err(e),
        }
    })
}

/// Number of grid nodes.
///
/// # Safety
/// `h` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn smfg_stationary_len(h: *const SmfgStationary) -> usize {
    h.as_ref().map_or(0, |h| h.sol.u.values().len())
}

/// # Safety
/// `h` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn smfg_stationary_hbar(h: *const SmfgStationary, out: *mut f64) -> SmfgStatus {
    match (h.as_ref(), out.is_null()) {
        (Some(h), false) => {
            *out = h.sol.hbar;
            SmfgStatus::Ok
        }
        _ => fail(SmfgStatus::NullPointer, "null handle or output"),
    }
}

/// Copies `u` (row-major) into `buf`, which must hold `smfg_stationary_len` values.
///
/// # Safety
/// `h` must be a live handle; `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn smfg_stationary_copy_u(h: *const SmfgStationary, buf: *mut f64, len: usize) -> SmfgStatus {
    match h.as_ref() {
        Some(h) => copy_out(h.sol.u.values(), buf, len),
        None => fail(SmfgStatus::NullPointer, "null handle"),
    }
}

/// Copies `m` (row-major) into `buf`.
///
/// # Safety
/// As [`smfg_stationary_copy_u`].
#[no_mangle]
pub unsafe extern "C" fn smfg_stationary_copy_m(h: *const SmfgStationary, buf: *mut f64, len: usize) -> SmfgStatus {
    match h.as_ref() {
        Some(h) => copy_out(h.sol.m.values(), buf, len),
        None => fail(SmfgStatus::NullPointer, "null handle"),
    }
}

/// Estimate report as JSON; release with [`smfg_string_free`].
///
/// # Safety
/// `h` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn smfg_stationary_report_json(h: *const SmfgStationary, out: *mut *mut c_char) -> SmfgStatus {
    guard(|| {
        let Some(h) = h.as_ref() else {
            return fail(SmfgStatus::NullPointer, "null handle");
        };
        let rep = h
            .config
            .model()
            .and_then(|m| stationary_report(&h.sol, &m, &h.config.coupling()?));
        match rep {
            Ok(r) => string_out(serde_json::to_string(&r).expect("serializable"), out),
            Err(e) => from_err(e),
        }
    })
}

/// # Safety
/// `h` must be null or a handle from [`smfg_stationary_solve`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn smfg_stationary_free(h: *mut SmfgStationary) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Solves the time-dependent problem along the eps schedule and keeps the
/// last stage.
///
/// # Safety
/// As [`smfg_stationary_solve`].
#[no_mangle]
pub unsafe extern "C" fn smfg_time_solve(config_json: *const c_char, out: *mut *mut SmfgTime) -> SmfgStatus {
    guard(|| {
        if out.is_null() {
            return fail(SmfgStatus::NullPointer, "output handle pointer is null");
        }
        let config = match config_from(config_json) {
            Ok(c) => c,
            Err(s) => return s,
        };
        let run = || -> singular_mfg::Result<TimeDependentSolution> {
            let sweep = epsilon_continuation_time(
                &config.model()?,
                &config.coupling()?,
                &config.coupling.eps_schedule,
                &config.terminal()?,
                &config.initial_density()?,
                config.data.t_final,
                config.nt(),
                &config.solver,
            )?;
            Ok(sweep.stages.into_iter().last().expect("non-empty schedule"))
        };
        match run() {
            Ok(sol) => {
                *out = Box::into_raw(Box::new(SmfgTime { config, sol }));
                SmfgStatus::Ok
            }
            Err(e) => from_err(e),
        }
    })
}

/// Number of time steps; slices are indexed `0..=nt`.
///
/// # Safety
/// `h` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn smfg_time_nt(h: *const SmfgTime) -> usize {
    h.as_ref().map_or(0, |h| h.sol.nt)
}

/// Number of grid nodes per slice.
///
/// # Safety
/// `h` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn smfg_time_len(h: *const SmfgTime) -> usize {
    h.as_ref().map_or(0, |h| h.sol.grid().len())
}

unsafe fn time_slice(h: *const SmfgTime, k: usize, pick_u: bool, buf: *mut f64, len: usize) -> SmfgStatus {
    let Some(h) = h.as_ref() else {
        return fail(SmfgStatus::NullPointer, "null handle");
    };
    if k > h.sol.nt {
        return fail(SmfgStatus::Validation, format!("time index {k} exceeds nt = {}", h.sol.nt));
    }
    let path = if pick_u { &h.sol.u } else { &h.sol.m };
    copy_out(path[k].values(), buf, len)
}

/// Copies `u(·, t_k)` into `buf`.
///
/// # Safety
/// `h` must be a live handle; `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn smfg_time_copy_u(h: *const SmfgTime, k: usize, buf: *mut f64, len: usize) -> SmfgStatus {
    time_slice(h, k, true, buf, len)
}

/// Copies `m(·, t_k)` into `buf`.
///
/// # Safety
/// As [`smfg_time_copy_u`].
#[no_mangle]
pub unsafe extern "C" fn smfg_time_copy_m(h: *const SmfgTime, k: usize, buf: *mut f64, len: usize) -> SmfgStatus {
    time_slice(h, k, false, buf, len)
}

/// Estimate report as JSON; release with [`smfg_string_free`].
///
/// # Safety
/// `h` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn smfg_time_report_json(h: *const SmfgTime, out: *mut *mut c_char) -> SmfgStatus {
    guard(|| {
        let Some(h) = h.as_ref() else {
            return fail(SmfgStatus::NullPointer, "null handle");
        };
        let rep = h.config.model().and_then(|m| {
            time_report(&h.sol, &m, &h.config.coupling()?, &h.config.verification.p_list)
        });
        match rep {
            Ok(r) => string_out(serde_json::to_string(&r).expect("serializable"), out),
            Err(e) => from_err(e),
        }
    })
}

/// # Safety
/// `h` must be null or a handle from [`smfg_time_solve`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn smfg_time_free(h: *mut SmfgTime) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must be null or a pointer obtained from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn smfg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
