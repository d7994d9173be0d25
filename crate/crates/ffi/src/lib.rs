//! C ABI over the three-species wave solver.
//!
//! Objects are opaque handles created by `*_new`/`*_solve` and released by
//! the matching `*_free`. Every fallible call returns a [`TricompStatus`];
//! the message of the last failure on the calling thread is available from
//! [`tricomp_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use tricomp::system_waves::{solve_wave3, wave_grid, IterationConfig, PairOptions, WaveSolution};
use tricomp::{classify_regime, rates, Error, Grid, ModelParams, RegimeVariant};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TricompStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// No monotone wave exists below the minimal speed.
    NoMonotoneWave = 3,
    /// Regime or precondition error other than the minimal speed.
    Precondition = 4,
    /// The nonlinear solve failed.
    Numerical = 5,
    BufferTooSmall = 6,
    /// A Rust panic was caught at the boundary.
    Panic = 7,
}

/// Parameter regime as classified by the inequalities on `(a1, a2, r)`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TricompRegime {
    H2a = 0,
    H2b = 1,
    Uncovered = 2,
    H1Violated = 3,
}

/// Linearization rates at the two ends of the wave.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TricompRates {
    pub c: f64,
    pub c_min: f64,
    /// NaN when the roots are complex.
    pub lambda_minus: f64,
    pub complex_roots: bool,
    pub critical: bool,
    pub mu1: f64,
    pub mu2: f64,
    pub mu3: f64,
}

/// Model parameters `(a1, a2, r, tau)`.
pub struct TricompParams(ModelParams);

/// A converged three-species wave in monotone coordinates.
pub struct TricompWave(WaveSolution);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let s = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = s);
}

fn status_of(e: &Error) -> TricompStatus {
    match e {
        Error::NoMonotoneWave { .. } => TricompStatus::NoMonotoneWave,
        Error::InvalidParameter(_) | Error::Config(_) | Error::Io(_) => TricompStatus::InvalidArgument,
        _ if e.exit_code() == 3 => TricompStatus::Precondition,
        _ => TricompStatus::Numerical,
    }
}

/// Runs `f`, turning errors and panics into a status and a stored message.
fn guard(f: impl FnOnce() -> Result<(), (TricompStatus, String)>) -> TricompStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            TricompStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside tricomp");
            TricompStatus::Panic
        }
    }
}

fn lift(e: Error) -> (TricompStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (TricompStatus, String) {
    (TricompStatus::NullPointer, format!("{what} is null"))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tricomp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message of the last failed call on this thread, empty after a success.
/// The pointer stays valid until the next call into the library on the
/// same thread.
#[no_mangle]
pub extern "C" fn tricomp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Validates the parameters and stores a new handle in `*out`.
///
/// # Safety
/// `out` must be null or point to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn tricomp_params_new(
    a1: f64,
    a2: f64,
    r: f64,
    tau: f64,
    out: *mut *mut TricompParams,
) -> TricompStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let p = ModelParams::new(a1, a2, r, tau).map_err(lift)?;
        *out = Box::into_raw(Box::new(TricompParams(p)));
        Ok(())
    })
}

/// Releases a parameter handle; null is ignored.
///
/// # Safety
/// `params` must be null or a handle from [`tricomp_params_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tricomp_params_free(params: *mut TricompParams) {
    if !params.is_null() {
        drop(Box::from_raw(params));
    }
}

/// Classifies the parameter regime.
///
/// # Safety
/// `params` must be a live handle and `out` writable, or either may be null.
#[no_mangle]
pub unsafe extern "C" fn tricomp_classify(params: *const TricompParams, out: *mut TricompRegime) -> TricompStatus {
    guard(|| {
        let p = params.as_ref().ok_or_else(|| null("params"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = match classify_regime(&p.0).variant {
            RegimeVariant::H2a => TricompRegime::H2a,
            RegimeVariant::H2b => TricompRegime::H2b,
            RegimeVariant::Uncovered => TricompRegime::Uncovered,
            RegimeVariant::H1Violated => TricompRegime::H1Violated,
        };
        Ok(())
    })
}

/// Decay rates at both ends for speed `c`.
///
/// # Safety
/// `params` must be a live handle and `out` writable, or either may be null.
#[no_mangle]
pub unsafe extern "C" fn tricomp_rates(params: *const TricompParams, c: f64, out: *mut TricompRates) -> TricompStatus {
    guard(|| {
        let p = params.as_ref().ok_or_else(|| null("params"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let t = rates(&p.0, c).map_err(lift)?;
        *out = TricompRates {
            c: t.c,
            c_min: t.c_min,
            lambda_minus: t.lambda_minus.unwrap_or(f64::NAN),
            complex_roots: t.complex_roots,
            critical: t.critical,
            mu1: t.mu1,
            mu2: t.mu2,
            mu3: t.mu3,
        };
        Ok(())
    })
}

/// Computes the three-species wave with default iteration settings.
/// `half_width <= 0` picks a domain wide enough for the tail fits;
/// `h_max` bounds the grid spacing.
///
/// # Safety
/// `params` must be a live handle and `out` writable storage for one
/// pointer, or either may be null.
#[no_mangle]
pub unsafe extern "C" fn tricomp_wave_solve(
    params: *const TricompParams,
    c: f64,
    half_width: f64,
    h_max: f64,
    out: *mut *mut TricompWave,
) -> TricompStatus {
    guard(|| {
        let p = params.as_ref().ok_or_else(|| null("params"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let grid = if half_width > 0.0 {
            Grid::with_max_spacing(half_width, h_max)
        } else {
            wave_grid(&p.0, c, h_max)
        }
        .map_err(lift)?;
        let outcome =
            solve_wave3(&p.0, c, &grid, &PairOptions::default(), &IterationConfig::default()).map_err(lift)?;
        *out = Box::into_raw(Box::new(TricompWave(outcome.wave)));
        Ok(())
    })
}

/// Number of grid nodes of the wave, ends included; 0 for null.
///
/// # Safety
/// `wave` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tricomp_wave_len(wave: *const TricompWave) -> usize {
    wave.as_ref().map_or(0, |w| w.0.grid().len())
}

/// Number of monotone-iteration sweeps; 0 for null.
///
/// # Safety
/// `wave` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tricomp_wave_iterations(wave: *const TricompWave) -> usize {
    wave.as_ref().map_or(0, |w| w.0.iterations)
}

/// Copies component `component` (0 = u, 1 = 1 - v, 2 = 1 - w) into
/// `values` and, when `xi` is not null, the grid nodes into `xi`. Both
/// buffers must hold `len >= tricomp_wave_len(wave)` doubles.
///
/// # Safety
/// `wave` must be a live handle; `values` and a non-null `xi` must be
/// writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn tricomp_wave_copy_profile(
    wave: *const TricompWave,
    component: usize,
    xi: *mut f64,
    values: *mut f64,
    len: usize,
) -> TricompStatus {
    guard(|| {
        let w = wave.as_ref().ok_or_else(|| null("wave"))?;
        if values.is_null() {
            return Err(null("values"));
        }
        let prof = w.0.profiles.get(component).ok_or_else(|| {
            (
                TricompStatus::InvalidArgument,
                format!("component {component} out of range"),
            )
        })?;
        let n = prof.values.len();
        if len < n {
            return Err((TricompStatus::BufferTooSmall, format!("buffer holds {len}, need {n}")));
        }
        std::slice::from_raw_parts_mut(values, n).copy_from_slice(&prof.values);
        if !xi.is_null() {
            let g = prof.grid;
            for (i, x) in std::slice::from_raw_parts_mut(xi, n).iter_mut().enumerate() {
                *x = g.node(i);
            }
        }
        Ok(())
    })
}

/// Writes the three per-component residuals into `out[0..3]`.
///
/// # Safety
/// `wave` must be a live handle and `out` writable for three doubles.
#[no_mangle]
pub unsafe extern "C" fn tricomp_wave_residuals(wave: *const TricompWave, out: *mut f64) -> TricompStatus {
    guard(|| {
        let w = wave.as_ref().ok_or_else(|| null("wave"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let dst = std::slice::from_raw_parts_mut(out, 3);
        for (d, r) in dst.iter_mut().zip(&w.0.residuals) {
            *d = *r;
        }
        Ok(())
    })
}

/// Releases a wave handle; null is ignored.
///
/// # Safety
/// `wave` must be null or a handle from [`tricomp_wave_solve`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tricomp_wave_free(wave: *mut TricompWave) {
    if !wave.is_null() {
        drop(Box::from_raw(wave));
    }
}
