use std::ffi::CStr;
use std::ptr;

use tricomp_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(tricomp_last_error_message()) }
        .to_string_lossy()
        .into_owned()
}

fn params(a1: f64, a2: f64, r: f64, tau: f64) -> *mut TricompParams {
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { tricomp_params_new(a1, a2, r, tau, &mut p) }, TricompStatus::Ok);
    assert!(!p.is_null());
    p
}

#[test]
fn version_is_nonempty() {
    let v = unsafe { CStr::from_ptr(tricomp_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn invalid_params_are_rejected_with_message() {
    let mut p = ptr::null_mut();
    let s = unsafe { tricomp_params_new(0.5, 2.0, 0.2, -1.0, &mut p) };
    assert_eq!(s, TricompStatus::InvalidArgument);
    assert!(p.is_null());
    assert!(!last_error().is_empty());
}

#[test]
fn null_pointers_are_reported() {
    assert_eq!(
        unsafe { tricomp_params_new(0.5, 2.0, 0.2, 2.0, ptr::null_mut()) },
        TricompStatus::NullPointer
    );
    let mut regime = TricompRegime::H2a;
    assert_eq!(
        unsafe { tricomp_classify(ptr::null(), &mut regime) },
        TricompStatus::NullPointer
    );
    assert_eq!(unsafe { tricomp_wave_len(ptr::null()) }, 0);
    unsafe {
        tricomp_params_free(ptr::null_mut());
        tricomp_wave_free(ptr::null_mut());
    }
}

#[test]
fn classify_and_rates() {
    let p = params(0.5, 2.0, 0.2, 2.0);
    let mut regime = TricompRegime::Uncovered;
    assert_eq!(unsafe { tricomp_classify(p, &mut regime) }, TricompStatus::Ok);
    assert_eq!(regime, TricompRegime::H2a);
    let mut t = std::mem::MaybeUninit::<TricompRates>::uninit();
    assert_eq!(unsafe { tricomp_rates(p, 1.5, t.as_mut_ptr()) }, TricompStatus::Ok);
    let t = unsafe { t.assume_init() };
    assert!((t.lambda_minus - 0.5).abs() < 1e-12);
    assert!((t.c_min - 2f64.sqrt()).abs() < 1e-12);
    let mut low = std::mem::MaybeUninit::<TricompRates>::uninit();
    assert_eq!(unsafe { tricomp_rates(p, 1.0, low.as_mut_ptr()) }, TricompStatus::Ok);
    let low = unsafe { low.assume_init() };
    assert!(low.complex_roots && low.lambda_minus.is_nan());
    unsafe { tricomp_params_free(p) };
}

#[test]
fn below_minimal_speed_has_no_wave() {
    let p = params(0.5, 2.0, 0.2, 2.0);
    let mut w = ptr::null_mut();
    let s = unsafe { tricomp_wave_solve(p, 1.0, 0.0, 0.05, &mut w) };
    assert_eq!(s, TricompStatus::NoMonotoneWave);
    assert!(w.is_null());
    assert!(last_error().contains("no monotone wave"));
    unsafe { tricomp_params_free(p) };
}

#[test]
fn solve_and_copy_profiles() {
    let p = params(0.5, 2.0, 0.2, 2.0);
    let mut w = ptr::null_mut();
    assert_eq!(
        unsafe { tricomp_wave_solve(p, 1.5, 0.0, 0.05, &mut w) },
        TricompStatus::Ok
    );
    let n = unsafe { tricomp_wave_len(w) };
    assert!(n > 100);
    assert!(unsafe { tricomp_wave_iterations(w) } > 0);
    let mut res = [f64::NAN; 3];
    assert_eq!(
        unsafe { tricomp_wave_residuals(w, res.as_mut_ptr()) },
        TricompStatus::Ok
    );
    assert!(res.iter().all(|r| *r <= 1e-8));
    let mut xi = vec![0.0; n];
    let mut u = vec![0.0; n];
    let s = unsafe { tricomp_wave_copy_profile(w, 0, xi.as_mut_ptr(), u.as_mut_ptr(), n) };
    assert_eq!(s, TricompStatus::Ok);
    assert!(u.windows(2).all(|p| p[1] >= p[0]));
    assert!(xi.windows(2).all(|p| p[1] > p[0]));
    let small = unsafe { tricomp_wave_copy_profile(w, 1, ptr::null_mut(), u.as_mut_ptr(), n - 1) };
    assert_eq!(small, TricompStatus::BufferTooSmall);
    let bad = unsafe { tricomp_wave_copy_profile(w, 3, ptr::null_mut(), u.as_mut_ptr(), n) };
    assert_eq!(bad, TricompStatus::InvalidArgument);
    unsafe {
        tricomp_wave_free(w);
        tricomp_params_free(p);
    }
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/tricomp.h");
    let Ok(out) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c", header])
        .output()
    else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
