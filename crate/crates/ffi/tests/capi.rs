use std::ffi::{CStr, CString};
use std::ptr;

use statphase_ffi::*;

fn phase(json: &str) -> *mut SpPhase {
    let j = CString::new(json).unwrap();
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { sp_phase_from_json(j.as_ptr(), &mut p) }, SpStatus::Ok, "{}", last_error());
    p
}

fn symbol(json: &str, p: *const SpPhase) -> Result<*mut SpSymbol, SpStatus> {
    let j = CString::new(json).unwrap();
    let mut s = ptr::null_mut();
    match unsafe { sp_symbol_from_json(j.as_ptr(), p, &mut s) } {
        SpStatus::Ok => Ok(s),
        e => Err(e),
    }
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(sp_last_error()) }.to_string_lossy().into_owned()
}

const QUADRATIC: &str = r#"{"family": "quadratic", "domain": {"dim": 1, "half_width": 2.0}}"#;

#[test]
fn oracle_and_decomposition_agree_through_the_c_interface() {
    let p = phase(QUADRATIC);
    let s = symbol(r#"{"family": "smooth_bump", "params": {"radius": 1.0}}"#, p).unwrap();
    let mut a = SpIntegral::default();
    let mut b = SpIntegral::default();
    unsafe {
        assert_eq!(sp_integrate(p, s, 64.0, SpMethod::Oracle, &mut a), SpStatus::Ok);
        assert_eq!(sp_integrate(p, s, 64.0, SpMethod::Decomposition, &mut b), SpStatus::Ok);
    }
    let diff = (a.re - b.re).hypot(a.im - b.im);
    assert!(diff < 1e-8 * a.re.hypot(a.im), "{a:?} vs {b:?}");
    assert_eq!(a.pieces, 1);
    assert!(b.pieces >= 1);
    unsafe {
        sp_symbol_free(s);
        sp_phase_free(p);
    }
}

#[test]
fn audit_reports_json() {
    let p = phase(QUADRATIC);
    let s = symbol(r#"{"family": "smooth_bump"}"#, p).unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { sp_audit_json(p, s, &mut out) }, SpStatus::Ok);
    let text = unsafe { CStr::from_ptr(out) }.to_str().unwrap().to_owned();
    unsafe { sp_string_free(out) };
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["a0"], 1.0);
    assert_eq!(v["degenerate"], false);
    unsafe {
        sp_symbol_free(s);
        sp_phase_free(p);
    }
}

#[test]
fn degenerate_phase_is_reported() {
    let p = phase(r#"{"family": "custom_polynomial", "params": {"terms": [{"coef": 1.0, "powers": [1]}]},
                     "domain": {"dim": 1, "half_width": 2.0}}"#);
    let s = symbol(r#"{"family": "smooth_bump"}"#, p).unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { sp_audit_json(p, s, &mut out) }, SpStatus::Degenerate);
    assert!(!out.is_null());
    unsafe { sp_string_free(out) };
    let mut r = SpIntegral::default();
    assert_eq!(
        unsafe { sp_integrate(p, s, 64.0, SpMethod::Decomposition, &mut r) },
        SpStatus::Degenerate
    );
    assert!(last_error().contains("audit failed"));
    unsafe {
        sp_symbol_free(s);
        sp_phase_free(p);
    }
}

#[test]
fn invalid_inputs_map_to_status_codes() {
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { sp_phase_from_json(ptr::null(), &mut p) }, SpStatus::NullPointer);
    let bad = CString::new(r#"{"family": "quartic", "domain": {"dim": 1, "half_width": 1.0}}"#).unwrap();
    assert_eq!(unsafe { sp_phase_from_json(bad.as_ptr(), &mut p) }, SpStatus::InvalidArgument);
    assert!(last_error().contains("quartic"));

    let q = phase(QUADRATIC);
    assert_eq!(symbol(r#"{"family": "smooth_bump", "params": {"radius": 3.0}}"#, q), Err(SpStatus::InvalidArgument));
    let mut v = 0.0;
    assert_eq!(unsafe { sp_phase_value(q, [1.0].as_ptr(), 1, &mut v) }, SpStatus::Ok);
    assert_eq!(v, 0.5);
    assert_eq!(unsafe { sp_phase_value(q, [5.0].as_ptr(), 1, &mut v) }, SpStatus::OutsideDomain);
    assert_eq!(unsafe { sp_phase_value(q, [0.0, 0.0].as_ptr(), 2, &mut v) }, SpStatus::InvalidArgument);
    let s = symbol(r#"{"family": "smooth_bump"}"#, q).unwrap();
    let mut r = SpIntegral::default();
    assert_eq!(unsafe { sp_integrate(q, s, 0.5, SpMethod::Oracle, &mut r) }, SpStatus::InvalidArgument);
    assert_eq!(unsafe { sp_integrate(q, ptr::null(), 8.0, SpMethod::Oracle, &mut r) }, SpStatus::NullPointer);
    unsafe {
        sp_symbol_free(s);
        sp_phase_free(q);
        sp_phase_free(ptr::null_mut());
        sp_string_free(ptr::null_mut());
    }
}

#[test]
fn header_declares_the_interface() {
    let header = include_str!("../include/statphase.h");
    for name in [
        "sp_phase_from_json",
        "sp_symbol_from_json",
        "sp_audit_json",
        "sp_integrate",
        "sp_last_error",
        "sp_string_free",
        "SP_STATUS_PANIC = 7",
        "typedef struct SpPhase SpPhase;",
    ] {
        assert!(header.contains(name), "{name}");
    }
    let v = unsafe { CStr::from_ptr(sp_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}
