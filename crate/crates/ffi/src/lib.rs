//! C interface to `statphase`.
//!
//! Phases and symbols are opaque handles built from JSON. Every fallible
//! call returns an [`SpStatus`]; on failure the message is available from
//! [`sp_last_error`] on the same thread until the next failing call.
//! Strings returned by the library are released with [`sp_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use statphase::audit::audit;
use statphase::config::{ExperimentConfig, PhaseSpec, SymbolSpec};
use statphase::quadrature::{decomposition_integral, oracle_integral};
use statphase::{Error, PhaseModel, SymbolModel};

/// Status codes of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    OutsideDomain = 3,
    Degenerate = 4,
    Accuracy = 5,
    Resource = 6,
    Panic = 7,
}

/// Integration route for [`sp_integrate`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpMethod {
    Oracle = 0,
    Decomposition = 1,
}

/// Value of one oscillatory integral.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SpIntegral {
    pub re: f64,
    pub im: f64,
    pub error_estimate: f64,
    /// Pieces of the partition (1 for the oracle).
    pub pieces: u64,
}

/// Phase function on its domain.
pub struct SpPhase {
    spec: PhaseSpec,
    model: PhaseModel,
}

/// Compactly supported amplitude, bound to the phase it was built for.
pub struct SpSymbol {
    spec: SymbolSpec,
    model: SymbolModel,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> SpStatus {
    match e {
        Error::Domain { .. } => SpStatus::OutsideDomain,
        Error::DegeneratePhase(_) | Error::Hypothesis(_) | Error::NearCritical { .. } => SpStatus::Degenerate,
        Error::Accuracy { .. } => SpStatus::Accuracy,
        Error::Resource { .. } => SpStatus::Resource,
        _ => SpStatus::InvalidArgument,
    }
}

struct Failure(SpStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(SpStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SpStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("panic: {msg}"));
            SpStatus::Panic
        }
    }
}

/// # Safety
/// `s` must be null or a NUL-terminated string.
unsafe fn read_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if s.is_null() {
        return Err(null(what));
    }
    // SAFETY: non-null and NUL-terminated by the caller's contract.
    unsafe { CStr::from_ptr(s) }
        .to_str()
        .map_err(|_| Failure(SpStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

fn parse<T: serde::de::DeserializeOwned>(text: &str, what: &str) -> Result<T, Failure> {
    serde_json::from_str(text).map_err(|e| Failure(SpStatus::InvalidArgument, format!("{what}: {e}")))
}

/// Default experiment around the pair; supplies audit and partition settings.
fn experiment(phase: &SpPhase, symbol: &SpSymbol) -> Result<ExperimentConfig, Failure> {
    let v = serde_json::json!({
        "schema_version": statphase::config::SCHEMA_VERSION,
        "phase": phase.spec,
        "symbol": symbol.spec,
    });
    Ok(ExperimentConfig::from_json(&v.to_string())?)
}

/// Message of the last failure on this thread; empty if none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn sp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a phase from `{"family", "params", "domain"}` JSON.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn sp_phase_from_json(json: *const c_char, out: *mut *mut SpPhase) -> SpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        // SAFETY: forwarded caller contract.
        let spec: PhaseSpec = parse(unsafe { read_str(json, "json") }?, "phase")?;
        let model = statphase::families::builtin_phase(&spec.family, &spec.params, spec.domain.to_box()?)?;
        // SAFETY: `out` is non-null and writable.
        unsafe { *out = Box::into_raw(Box::new(SpPhase { spec, model })) };
        Ok(())
    })
}

/// # Safety
/// `phase` must be null or a handle from [`sp_phase_from_json`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sp_phase_free(phase: *mut SpPhase) {
    if !phase.is_null() {
        // SAFETY: the handle came from `Box::into_raw`.
        drop(unsafe { Box::from_raw(phase) });
    }
}

/// Dimension of the phase, or 0 for a null handle.
///
/// # Safety
/// `phase` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sp_phase_dim(phase: *const SpPhase) -> usize {
    // SAFETY: live handle or null.
    unsafe { phase.as_ref() }.map_or(0, |p| p.model.dim())
}

/// Evaluates `Φ(x)` for `x` of length `dim`.
///
/// # Safety
/// `phase` must be a live handle, `x` must point to `dim` doubles and `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn sp_phase_value(phase: *const SpPhase, x: *const f64, dim: usize, out: *mut f64) -> SpStatus {
    guard(|| {
        // SAFETY: live handle or null.
        let p = unsafe { phase.as_ref() }.ok_or_else(|| null("phase"))?;
        if x.is_null() {
            return Err(null("x"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        if dim != p.model.dim() {
            return Err(Failure(
                SpStatus::InvalidArgument,
                format!("point has {dim} coordinates, phase has dimension {}", p.model.dim()),
            ));
        }
        // SAFETY: `x` points to `dim` doubles.
        let xs = unsafe { std::slice::from_raw_parts(x, dim) };
        if !p.model.domain().contains(xs) {
            return Err(Error::Domain {
                point: xs.to_vec(),
                domain: p.model.domain().to_string(),
            }
            .into());
        }
        // SAFETY: `out` is non-null and writable.
        unsafe { *out = p.model.value(xs) };
        Ok(())
    })
}

/// Builds a symbol from `{"family", "params"}` JSON; its support must lie
/// strictly inside the domain of `phase`.
///
/// # Safety
/// `json` must be a NUL-terminated string, `phase` a live handle and `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn sp_symbol_from_json(
    json: *const c_char,
    phase: *const SpPhase,
    out: *mut *mut SpSymbol,
) -> SpStatus {
    guard(|| {
        // SAFETY: live handle or null.
        let p = unsafe { phase.as_ref() }.ok_or_else(|| null("phase"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        // SAFETY: forwarded caller contract.
        let spec: SymbolSpec = parse(unsafe { read_str(json, "json") }?, "symbol")?;
        let v = p.model.domain();
        let model = statphase::families::builtin_symbol(&spec.family, &spec.params, v.dim(), Some(v))?;
        // SAFETY: `out` is non-null and writable.
        unsafe { *out = Box::into_raw(Box::new(SpSymbol { spec, model })) };
        Ok(())
    })
}

/// # Safety
/// `symbol` must be null or a handle from [`sp_symbol_from_json`] not yet
/// freed.
#[no_mangle]
pub unsafe extern "C" fn sp_symbol_free(symbol: *mut SpSymbol) {
    if !symbol.is_null() {
        // SAFETY: the handle came from `Box::into_raw`.
        drop(unsafe { Box::from_raw(symbol) });
    }
}

/// Runs the hypothesis audit and returns the report as a JSON object in
/// `*out_json`, to be released with [`sp_string_free`]. A degenerate phase
/// still yields a report (with `"degenerate": true`) and returns
/// `Degenerate`.
///
/// # Safety
/// `phase` and `symbol` must be live handles and `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn sp_audit_json(
    phase: *const SpPhase,
    symbol: *const SpSymbol,
    out_json: *mut *mut c_char,
) -> SpStatus {
    let mut degenerate = false;
    let status = guard(|| {
        // SAFETY: live handles or null.
        let p = unsafe { phase.as_ref() }.ok_or_else(|| null("phase"))?;
        let s = unsafe { symbol.as_ref() }.ok_or_else(|| null("symbol"))?;
        if out_json.is_null() {
            return Err(null("out_json"));
        }
        let cfg = experiment(p, s)?;
        let report = audit(&p.model, &s.model, &cfg.audit_options())?;
        degenerate = !report.passed();
        let text = serde_json::to_string(&report).map_err(Error::from)?;
        let c = CString::new(text).map_err(|e| Failure(SpStatus::InvalidArgument, e.to_string()))?;
        // SAFETY: `out_json` is non-null and writable.
        unsafe { *out_json = c.into_raw() };
        Ok(())
    });
    if status == SpStatus::Ok && degenerate {
        set_error("audit failed: degenerate Hessian determinant");
        return SpStatus::Degenerate;
    }
    status
}

/// Computes `I(λ) = ∫ e^{iλΦ} b` with the given method. The decomposition
/// audits the pair first and fails with `Degenerate` when the audit fails.
///
/// # Safety
/// `phase` and `symbol` must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sp_integrate(
    phase: *const SpPhase,
    symbol: *const SpSymbol,
    lambda: f64,
    method: SpMethod,
    out: *mut SpIntegral,
) -> SpStatus {
    guard(|| {
        // SAFETY: live handles or null.
        let p = unsafe { phase.as_ref() }.ok_or_else(|| null("phase"))?;
        let s = unsafe { symbol.as_ref() }.ok_or_else(|| null("symbol"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        if !(lambda >= 1.0) {
            return Err(Failure(SpStatus::InvalidArgument, format!("λ = {lambda} is below 1")));
        }
        let cfg = experiment(p, s)?;
        let r = match method {
            SpMethod::Oracle => oracle_integral(&p.model, &s.model, lambda, &cfg.quadrature)?,
            SpMethod::Decomposition => {
                let report = audit(&p.model, &s.model, &cfg.audit_options())?;
                if !report.passed() {
                    return Err(Failure(
                        SpStatus::Degenerate,
                        format!("audit failed: a0 = {}", report.a0),
                    ));
                }
                let (pou, _) = cfg.partition(&s.model, report.a0, report.m_k(2), report.third_order_norm)?;
                decomposition_integral(&p.model, &s.model, lambda, &pou, report.a0, &cfg.decomposition_options())?
            }
        };
        let v = SpIntegral {
            re: r.value.re,
            im: r.value.im,
            error_estimate: r.error_estimate,
            pieces: r.pieces_total as u64,
        };
        // SAFETY: `out` is non-null and writable.
        unsafe { *out = v };
        Ok(())
    })
}

/// Releases a string returned by the library.
///
/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sp_string_free(s: *mut c_char) {
    if !s.is_null() {
        // SAFETY: `s` came from `CString::into_raw`.
        drop(unsafe { CString::from_raw(s) });
    }
}
