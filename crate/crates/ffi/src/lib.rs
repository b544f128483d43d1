//! C ABI over `sticky-core`.
//!
//! Every fallible function returns a [`StickyStatus`]. On failure the
//! message is kept per thread and read with [`sticky_last_error`].
//! Handles are opaque and must be released with their `_free` function.
//! Output buffers are owned by the caller.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use sticky_core::closed_form;
use sticky_core::engine::{simulate_undelayed, NoiseStream, SimGrid};
use sticky_core::error::Error;
use sticky_core::lattice::{oracle_sample, LatticeParams};
use sticky_core::model::{
    feller_compile, probe_grid, tube_compile, validate_process_spec, ProcessSpec, ScaleSpeedSpec, StickyPoint,
    TubeSpec, ValidatedSpec, DEFAULT_PROBE_POINTS,
};
use sticky_core::piecewise::PiecewiseFn;
use sticky_core::special::normal_cdf;
use sticky_core::stats::run_paths;
use sticky_core::transform::{alphas, build_time_change, delayed_state, points, simulate_delayed, DelayedPath};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StickyStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Spec = 3,
    Parse = 4,
    Eval = 5,
    Numerical = 6,
    Range = 7,
    Domain = 8,
    Quadrature = 9,
    Ensemble = 10,
    Io = 11,
    BufferTooSmall = 12,
    Panic = 13,
}

/// Process specification: coefficients plus sticky points.
pub struct StickySpec {
    spec: ProcessSpec,
}

/// One simulated path of the delayed process on the output grid.
pub struct StickyPath {
    path: DelayedPath,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StickyPointInfo {
    pub x: f64,
    pub p_plus: f64,
    pub p_minus: f64,
    pub alpha: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(StickyStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Spec(_) => StickyStatus::Spec,
            Error::Parse { .. } => StickyStatus::Parse,
            Error::Eval { .. } => StickyStatus::Eval,
            Error::Numerical { .. } => StickyStatus::Numerical,
            Error::Range(_) => StickyStatus::Range,
            Error::Domain(_) => StickyStatus::Domain,
            Error::Input(_) => StickyStatus::InvalidArgument,
            Error::Quadrature { .. } => StickyStatus::Quadrature,
            Error::Ensemble { .. } => StickyStatus::Ensemble,
            Error::Io(_) => StickyStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

type FfiResult<T> = Result<T, Failure>;

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> FfiResult<()>) -> StickyStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => StickyStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            StickyStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(StickyStatus::NullPointer, format!("{what} is null"))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(StickyStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn write<T>(out: *mut T, value: T, what: &str) -> FfiResult<()> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

unsafe fn spec_ref<'a>(spec: *const StickySpec) -> FfiResult<&'a StickySpec> {
    spec.as_ref().ok_or_else(|| null("spec"))
}

unsafe fn path_ref<'a>(path: *const StickyPath) -> FfiResult<&'a StickyPath> {
    path.as_ref().ok_or_else(|| null("path"))
}

unsafe fn out_slice<'a, T>(buf: *mut T, len: usize, need: usize, what: &str) -> FfiResult<&'a mut [T]> {
    if buf.is_null() {
        return Err(null(what));
    }
    if len < need {
        return Err(Failure(StickyStatus::BufferTooSmall, format!("{what} holds {len} values, {need} needed")));
    }
    Ok(std::slice::from_raw_parts_mut(buf, need))
}

/// Nullable output buffer of exactly `need` values.
unsafe fn optional_slice<'a, T>(buf: *mut T, need: usize) -> Option<&'a mut [T]> {
    (!buf.is_null()).then(|| std::slice::from_raw_parts_mut(buf, need))
}

fn boxed(spec: ProcessSpec) -> *mut StickySpec {
    Box::into_raw(Box::new(StickySpec { spec }))
}

fn default_probe() -> Vec<f64> {
    probe_grid(-10.0, 10.0, DEFAULT_PROBE_POINTS)
}

fn validated(spec: &ProcessSpec, x0: f64) -> FfiResult<ValidatedSpec> {
    let mut probe = default_probe();
    probe.push(x0);
    Ok(validate_process_spec(spec.clone(), &probe)?)
}

/// Message of the last failure on this thread; empty if none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sticky_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

#[no_mangle]
pub extern "C" fn sticky_clear_error() {
    set_error(String::new());
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn sticky_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Constant drift and volatility, no sticky points.
///
/// # Safety
/// `out` must be valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn sticky_spec_new_constant(drift: f64, vol: f64, out: *mut *mut StickySpec) -> StickyStatus {
    guard(|| {
        if !(drift.is_finite() && vol.is_finite() && vol != 0.0) {
            return Err(Failure(StickyStatus::InvalidArgument, "need finite drift and nonzero volatility".into()));
        }
        write(out, boxed(ProcessSpec::constant(drift, vol, Vec::new())), "out")
    })
}

/// Drift and volatility given as expressions in `x`, with piecewise
/// segments written `[e0, b1: e1, ...]`.
///
/// # Safety
/// `drift` and `vol` must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sticky_spec_from_exprs(
    drift: *const c_char,
    vol: *const c_char,
    out: *mut *mut StickySpec,
) -> StickyStatus {
    guard(|| {
        let d = PiecewiseFn::parse(text(drift, "drift")?)?;
        let v = PiecewiseFn::parse(text(vol, "vol")?)?;
        let spec = ProcessSpec::with_probed_ellipticity(d, v, Vec::new(), &default_probe());
        write(out, boxed(spec), "out")
    })
}

/// Adds a sticky point at `x` leaving right with probability `p_plus`.
///
/// # Safety
/// `spec` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sticky_spec_add_point(spec: *mut StickySpec, x: f64, p_plus: f64, alpha: f64) -> StickyStatus {
    guard(|| {
        let s = spec.as_mut().ok_or_else(|| null("spec"))?;
        let mut sticky = s.spec.sticky.clone();
        if sticky.iter().any(|p| p.x == x) {
            return Err(Failure(StickyStatus::InvalidArgument, format!("a sticky point at {x} already exists")));
        }
        sticky.push(StickyPoint::new(x, p_plus, alpha));
        sticky.sort_by(|a, b| a.x.total_cmp(&b.x));
        let old = &s.spec;
        s.spec = ProcessSpec::new(old.drift.clone(), old.vol.clone(), sticky, old.ellipticity);
        Ok(())
    })
}

/// Compiles scale `u` and speed `v`; every breakpoint becomes a sticky point.
///
/// # Safety
/// `u` and `v` must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sticky_spec_feller(u: *const c_char, v: *const c_char, out: *mut *mut StickySpec) -> StickyStatus {
    guard(|| {
        let u = PiecewiseFn::parse(text(u, "u")?)?;
        let v = PiecewiseFn::parse(text(v, "v")?)?;
        let spec = feller_compile(&ScaleSpeedSpec::with_breakpoints_as_jumps(u, v), &default_probe())?;
        write(out, boxed(spec), "out")
    })
}

/// Limiting process of a narrow tube with cross section `v1`.
///
/// # Safety
/// `v1` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sticky_spec_tube(v1: *const c_char, beta: f64, mu: f64, out: *mut *mut StickySpec) -> StickyStatus {
    guard(|| {
        let ts = TubeSpec { v1: PiecewiseFn::parse(text(v1, "v1")?)?, beta, mu };
        let spec = tube_compile(&ts, &default_probe())?;
        write(out, boxed(spec), "out")
    })
}

/// Checks the specification; the error message lists every violation.
///
/// # Safety
/// `spec` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sticky_spec_validate(spec: *const StickySpec) -> StickyStatus {
    guard(|| validated(&spec_ref(spec)?.spec, 0.0).map(|_| ()))
}

/// # Safety
/// `spec` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sticky_spec_point_count(spec: *const StickySpec, out: *mut usize) -> StickyStatus {
    guard(|| write(out, spec_ref(spec)?.spec.sticky.len(), "out"))
}

/// # Safety
/// `spec` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sticky_spec_get_point(spec: *const StickySpec, index: usize, out: *mut StickyPointInfo) -> StickyStatus {
    guard(|| {
        let s = spec_ref(spec)?;
        let p = s
            .spec
            .sticky
            .get(index)
            .ok_or_else(|| Failure(StickyStatus::Range, format!("point {index} of {}", s.spec.sticky.len())))?;
        write(out, StickyPointInfo { x: p.x, p_plus: p.p_plus, p_minus: p.p_minus, alpha: p.alpha }, "out")
    })
}

/// # Safety
/// `spec` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sticky_spec_free(spec: *mut StickySpec) {
    if !spec.is_null() {
        drop(Box::from_raw(spec));
    }
}

/// Simulates one path on `[0, horizon]` with step `dt`. Paths with the
/// same `seed` and `path_index` are identical.
///
/// # Safety
/// `spec` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sticky_simulate_path(
    spec: *const StickySpec,
    horizon: f64,
    dt: f64,
    x0: f64,
    seed: u64,
    path_index: u64,
    out: *mut *mut StickyPath,
) -> StickyStatus {
    guard(|| {
        let spec = validated(&spec_ref(spec)?.spec, x0)?;
        let grid = SimGrid::new(horizon, dt)?;
        let (_, path) = simulate_delayed(&spec, grid, NoiseStream::new(seed, path_index), x0)?;
        write(out, Box::into_raw(Box::new(StickyPath { path })), "out")
    })
}

/// Number of samples, including time 0.
///
/// # Safety
/// `path` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sticky_path_len(path: *const StickyPath, out: *mut usize) -> StickyStatus {
    guard(|| write(out, path_ref(path)?.path.len(), "out"))
}

/// # Safety
/// `path` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sticky_path_point_count(path: *const StickyPath, out: *mut usize) -> StickyStatus {
    guard(|| write(out, path_ref(path)?.path.points.len(), "out"))
}

/// Copies sample times and positions; either buffer may be null.
///
/// # Safety
/// Non-null buffers must hold `len` values; `path` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sticky_path_copy(path: *const StickyPath, times: *mut f64, values: *mut f64, len: usize) -> StickyStatus {
    guard(|| {
        let p = &path_ref(path)?.path;
        if !times.is_null() {
            out_slice(times, len, p.len(), "times")?.copy_from_slice(&p.times);
        }
        if !values.is_null() {
            out_slice(values, len, p.len(), "values")?.copy_from_slice(&p.values);
        }
        Ok(())
    })
}

/// Copies the per-point series of sticky point `point`: local time,
/// occupation time, at-point flag. Any buffer may be null.
///
/// # Safety
/// Non-null buffers must hold `len` values; `path` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sticky_path_copy_point(
    path: *const StickyPath,
    point: usize,
    local_time: *mut f64,
    occupation: *mut f64,
    at_point: *mut u8,
    len: usize,
) -> StickyStatus {
    guard(|| {
        let p = &path_ref(path)?.path;
        if point >= p.points.len() {
            return Err(Failure(StickyStatus::Range, format!("point {point} of {}", p.points.len())));
        }
        if !local_time.is_null() {
            out_slice(local_time, len, p.len(), "local_time")?.copy_from_slice(&p.local_time[point]);
        }
        if !occupation.is_null() {
            out_slice(occupation, len, p.len(), "occupation")?.copy_from_slice(&p.occupation[point]);
        }
        if !at_point.is_null() {
            let dst = out_slice(at_point, len, p.len(), "at_point")?;
            for (d, &flag) in dst.iter_mut().zip(&p.at_point[point]) {
                *d = flag as u8;
            }
        }
        Ok(())
    })
}

/// # Safety
/// `path` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sticky_path_free(path: *mut StickyPath) {
    if !path.is_null() {
        drop(Box::from_raw(path));
    }
}

/// Terminal state of `n_paths` independent paths at `horizon`.
///
/// `positions` and `at_point` hold `n_paths` values; `local_time` holds
/// `n_paths * m` values row by row, `m` being the number of sticky points.
/// `at_point` receives the point index or -1. Any buffer may be null.
///
/// # Safety
/// `spec` must be a live handle; non-null buffers must have the sizes above.
#[no_mangle]
pub unsafe extern "C" fn sticky_sample_terminal(
    spec: *const StickySpec,
    horizon: f64,
    dt: f64,
    x0: f64,
    seed: u64,
    n_paths: usize,
    positions: *mut f64,
    local_time: *mut f64,
    at_point: *mut i32,
) -> StickyStatus {
    guard(|| {
        let spec = validated(&spec_ref(spec)?.spec, x0)?;
        let grid = SimGrid::new(horizon, dt)?;
        let m = spec.sticky.len();
        let (pts, als) = (points(&spec), alphas(&spec));
        let states = run_paths(n_paths as u64, |i| {
            let up = simulate_undelayed(&spec, grid, NoiseStream::new(seed, i), x0)?;
            let table = build_time_change(&up, &als)?;
            delayed_state(&up, &table, &pts, horizon)
        })?;
        if let Some(buf) = optional_slice(positions, n_paths) {
            for (b, s) in buf.iter_mut().zip(&states) {
                *b = s.x;
            }
        }
        if let Some(buf) = optional_slice(local_time, n_paths * m) {
            for (row, s) in buf.chunks_mut(m.max(1)).zip(&states) {
                row.copy_from_slice(&s.local_time);
            }
        }
        if let Some(buf) = optional_slice(at_point, n_paths) {
            for (b, s) in buf.iter_mut().zip(&states) {
                *b = s.at_point.map_or(-1, |i| i as i32);
            }
        }
        Ok(())
    })
}

/// Lattice walk with spacing `delta` and a sticky site at 0, sampled at
/// `horizon`. Each buffer holds `n_paths` values and may be null.
///
/// # Safety
/// Non-null buffers must hold `n_paths` values.
#[no_mangle]
pub unsafe extern "C" fn sticky_lattice_sample(
    delta: f64,
    p_plus: f64,
    alpha: f64,
    horizon: f64,
    seed: u64,
    n_paths: usize,
    positions: *mut f64,
    occupation: *mut f64,
    local_time: *mut f64,
) -> StickyStatus {
    guard(|| {
        let params = LatticeParams::new(delta, p_plus, alpha, horizon)?;
        let samples = run_paths(n_paths as u64, |i| oracle_sample(&params, NoiseStream::new(seed, i), horizon))?;
        let fill = |buf: *mut f64, f: &dyn Fn(usize) -> f64| {
            if let Some(b) = optional_slice(buf, n_paths) {
                for (i, v) in b.iter_mut().enumerate() {
                    *v = f(i);
                }
            }
        };
        fill(positions, &|i| samples[i].position);
        fill(occupation, &|i| samples[i].occupation);
        fill(local_time, &|i| samples[i].local_time);
        Ok(())
    })
}

/// `P(X(t) = 0)` for symmetric sticky Brownian motion from 0.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sticky_point_mass(t: f64, alpha: f64, out: *mut f64) -> StickyStatus {
    guard(|| {
        if !(alpha > 0.0) || !(t >= 0.0) {
            return Err(Failure(StickyStatus::Domain, format!("need t >= 0 and alpha > 0, got t={t}, alpha={alpha}")));
        }
        write(out, closed_form::point_mass(t, alpha), "out")
    })
}

/// Expected occupation time of the origin up to `t`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sticky_expected_occupation(t: f64, alpha: f64, out: *mut f64) -> StickyStatus {
    guard(|| write(out, closed_form::expected_occupation(t, alpha)?, "out"))
}

/// `P(α L(t, 0) > y)` for `0 <= y < t`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sticky_local_time_tail(t: f64, y: f64, alpha: f64, out: *mut f64) -> StickyStatus {
    guard(|| {
        if !(alpha > 0.0) {
            return Err(Failure(StickyStatus::Domain, format!("alpha must be positive, got {alpha}")));
        }
        write(out, closed_form::sticky_local_time_tail(t, y, alpha)?, "out")
    })
}

/// Characteristic function of `X(t)`; real by symmetry.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sticky_char_fn(lambda: f64, t: f64, alpha: f64, out: *mut f64) -> StickyStatus {
    guard(|| {
        if !(alpha > 0.0) {
            return Err(Failure(StickyStatus::Domain, format!("alpha must be positive, got {alpha}")));
        }
        write(out, closed_form::char_fn(lambda, t, alpha)?, "out")
    })
}

#[no_mangle]
pub extern "C" fn sticky_normal_cdf(x: f64) -> f64 {
    normal_cdf(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ptr;

    #[test]
    fn errors_are_kept_per_thread() {
        let mut out = ptr::null_mut();
        let bad = CString::new("1 +").unwrap();
        let one = CString::new("1").unwrap();
        let s = unsafe { sticky_spec_from_exprs(bad.as_ptr(), one.as_ptr(), &mut out) };
        assert_eq!(s, StickyStatus::Parse);
        let msg = unsafe { CStr::from_ptr(sticky_last_error()) }.to_str().unwrap().to_string();
        assert!(msg.contains("parse"), "{msg}");
        std::thread::spawn(|| {
            let other = unsafe { CStr::from_ptr(sticky_last_error()) };
            assert!(other.to_bytes().is_empty());
        })
        .join()
        .unwrap();
        sticky_clear_error();
        assert!(unsafe { CStr::from_ptr(sticky_last_error()) }.to_bytes().is_empty());
    }

    #[test]
    fn statuses_follow_core_errors() {
        assert_eq!(Failure::from(Error::Range("r".into())).0, StickyStatus::Range);
        assert_eq!(Failure::from(Error::Numerical { step: 3, message: "m".into() }).0, StickyStatus::Numerical);
        assert_eq!(Failure::from(Error::Input("i".into())).0, StickyStatus::InvalidArgument);
    }

    #[test]
    fn panics_become_status() {
        assert_eq!(guard(|| panic!("boom")), StickyStatus::Panic);
        let msg = unsafe { CStr::from_ptr(sticky_last_error()) }.to_str().unwrap().to_string();
        assert!(msg.contains("boom"));
    }
}
