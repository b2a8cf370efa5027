//! C ABI over the `glr_cusum` core.
//!
//! Every function returns a [`GlrStatus`]; results go through out-pointers.
//! On failure the message is kept per thread and read back with
//! [`glr_last_error_message`]. Detectors are opaque handles created by
//! [`glr_detector_new`] and released with [`glr_detector_free`].

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::slice;

use glr_cusum::detector::{self, AlarmEvent, Detector, DetectorConfig, DEFAULT_VARPI};
use glr_cusum::sim::{PricePath, SpotVolSeries};
use glr_cusum::theory::{self, NuMode, TheoryConstants};
use glr_cusum::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidConfig = 2,
    InvalidData = 3,
    Domain = 4,
    WindowOutOfRange = 5,
    Io = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlrNuMode {
    Exact = 0,
    Approx = 1,
}

/// Detector settings. `w_n = 0` selects the unbounded window.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct GlrDetectorConfig {
    pub xi: f64,
    pub w_n: usize,
    pub r_n: usize,
    pub varpi: f64,
    pub zeta: f64,
    pub delta_n: f64,
    pub warmup: usize,
    pub reset_on_alarm: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct GlrAlarm {
    pub l: u64,
    pub k_star: u64,
    pub statistic: f64,
}

/// Opaque streaming detector.
pub struct GlrDetector {
    inner: Detector,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> GlrStatus {
    match e {
        Error::Config(_) => GlrStatus::InvalidConfig,
        Error::Data(_) | Error::Parse { .. } => GlrStatus::InvalidData,
        Error::Domain(_) => GlrStatus::Domain,
        Error::WindowOutOfRange { .. } => GlrStatus::WindowOutOfRange,
        Error::Io(_) | Error::Csv(_) => GlrStatus::Io,
    }
}

/// Runs `f`, converting errors and panics into a status code.
fn guard<F: FnOnce() -> Result<(), GlrStatusError>>(f: F) -> GlrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GlrStatus::Ok,
        Ok(Err(GlrStatusError(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            GlrStatus::Panic
        }
    }
}

struct GlrStatusError(GlrStatus, String);

impl From<Error> for GlrStatusError {
    fn from(e: Error) -> Self {
        GlrStatusError(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> GlrStatusError {
    GlrStatusError(GlrStatus::NullPointer, format!("null pointer: {what}"))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, GlrStatusError> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn input<'a, T>(p: *const T, what: &str) -> Result<&'a T, GlrStatusError> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn array<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], GlrStatusError> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

fn to_core(c: &GlrDetectorConfig) -> DetectorConfig {
    DetectorConfig {
        xi: c.xi,
        w_n: (c.w_n > 0).then_some(c.w_n),
        r_n: c.r_n,
        varpi: c.varpi,
        zeta: c.zeta,
        delta_n: c.delta_n,
        warmup: c.warmup,
        reset_on_alarm: c.reset_on_alarm,
    }
}

fn to_mode(m: GlrNuMode) -> NuMode {
    match m {
        GlrNuMode::Exact => NuMode::Exact,
        GlrNuMode::Approx => NuMode::Approx,
    }
}

fn alarm(a: &AlarmEvent) -> GlrAlarm {
    GlrAlarm {
        l: a.l,
        k_star: a.k_star,
        statistic: a.statistic,
    }
}

/// Message for the last failed call on this thread, or NULL. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn glr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn glr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Defaults: ξ = 4, one-minute grid on a 390-minute day, 30-observation
/// window, no minimum span, ζ = 1.
#[no_mangle]
pub unsafe extern "C" fn glr_detector_config_default(cfg: *mut GlrDetectorConfig) -> GlrStatus {
    guard(|| {
        *out(cfg, "cfg")? = GlrDetectorConfig {
            xi: 4.0,
            w_n: 30,
            r_n: 0,
            varpi: DEFAULT_VARPI,
            zeta: 1.0,
            delta_n: 1.0 / 390.0,
            warmup: 0,
            reset_on_alarm: false,
        };
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn glr_detector_new(cfg: *const GlrDetectorConfig, det: *mut *mut GlrDetector) -> GlrStatus {
    guard(|| {
        let slot = out(det, "det")?;
        *slot = std::ptr::null_mut();
        let inner = Detector::new(to_core(input(cfg, "cfg")?))?;
        *slot = Box::into_raw(Box::new(GlrDetector { inner }));
        Ok(())
    })
}

/// Releases a detector; NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn glr_detector_free(det: *mut GlrDetector) {
    if !det.is_null() {
        drop(Box::from_raw(det));
    }
}

/// Feeds one raw return `dy` with spot volatility `sigma`. `fired` is set
/// when an alarm is raised, in which case `alarm` (may be NULL) receives it.
#[no_mangle]
pub unsafe extern "C" fn glr_detector_step(
    det: *mut GlrDetector,
    dy: f64,
    sigma: f64,
    fired: *mut bool,
    alarm_out: *mut GlrAlarm,
) -> GlrStatus {
    guard(|| {
        let d = out(det, "det")?;
        let fired = out(fired, "fired")?;
        *fired = false;
        if let Some(a) = d.inner.step(dy, sigma)? {
            *fired = true;
            if let Some(slot) = alarm_out.as_mut() {
                *slot = alarm(&a);
            }
        }
        Ok(())
    })
}

/// Feeds an already standardized increment.
#[no_mangle]
pub unsafe extern "C" fn glr_detector_push(
    det: *mut GlrDetector,
    x: f64,
    fired: *mut bool,
    alarm_out: *mut GlrAlarm,
) -> GlrStatus {
    guard(|| {
        let d = out(det, "det")?;
        let fired = out(fired, "fired")?;
        if !x.is_finite() {
            return Err(GlrStatusError(GlrStatus::InvalidData, format!("non-finite increment {x}")));
        }
        let scan = d.inner.push(x);
        *fired = false;
        if let Some(a) = scan.alarm(0) {
            *fired = true;
            if let Some(slot) = alarm_out.as_mut() {
                *slot = alarm(&a);
            }
        }
        Ok(())
    })
}

/// Statistic for the window `(k, l]` over retained anchors.
#[no_mangle]
pub unsafe extern "C" fn glr_detector_stat(det: *const GlrDetector, k: u64, l: u64, value: *mut f64) -> GlrStatus {
    guard(|| {
        let d = input(det, "det")?;
        *out(value, "value")? = d.inner.glr_stat(k, l)?;
        Ok(())
    })
}

/// Number of increments consumed so far.
#[no_mangle]
pub unsafe extern "C" fn glr_detector_index(det: *const GlrDetector, index: *mut u64) -> GlrStatus {
    guard(|| {
        *out(index, "index")? = input(det, "det")?.inner.index();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn glr_detector_set_zeta(det: *mut GlrDetector, zeta: f64) -> GlrStatus {
    guard(|| {
        out(det, "det")?.inner.set_zeta(zeta)?;
        Ok(())
    })
}

/// First alarm over one day of `len` log prices with aligned spot vols.
/// `found` is false when no alarm is raised.
#[no_mangle]
pub unsafe extern "C" fn glr_first_alarm(
    log_prices: *const f64,
    spot_vols: *const f64,
    len: usize,
    cfg: *const GlrDetectorConfig,
    found: *mut bool,
    alarm_out: *mut GlrAlarm,
) -> GlrStatus {
    guard(|| {
        let found = out(found, "found")?;
        *found = false;
        let prices = array(log_prices, len, "log_prices")?.to_vec();
        let vols = array(spot_vols, len, "spot_vols")?.to_vec();
        let path = PricePath::new(prices, 0)?;
        let vols = SpotVolSeries::new(path.delta_n, vols)?;
        let mut c = to_core(input(cfg, "cfg")?);
        c.delta_n = path.delta_n;
        if let Some((_, a)) = detector::first_alarm(&path, &vols, &c)? {
            *found = true;
            if let Some(slot) = alarm_out.as_mut() {
                *slot = alarm(&a);
            }
        }
        Ok(())
    })
}

/// `ζ = 4 × median` of a day's spot-vol estimates.
#[no_mangle]
pub unsafe extern "C" fn glr_truncation_scale(spot_vols: *const f64, len: usize, zeta: *mut f64) -> GlrStatus {
    guard(|| {
        let v = SpotVolSeries::new(1.0, array(spot_vols, len, "spot_vols")?.to_vec())?;
        *out(zeta, "zeta")? = detector::truncation_scale(&v)?;
        Ok(())
    })
}

/// Overshoot constant `D_a`; pass `a = INFINITY` for the unbounded window.
#[no_mangle]
pub unsafe extern "C" fn glr_theory_d(a: f64, mode: GlrNuMode, value: *mut f64) -> GlrStatus {
    guard(|| {
        *out(value, "value")? = theory::d_of_a(a, to_mode(mode), &TheoryConstants::default())?;
        Ok(())
    })
}

/// Approximate average run length at threshold `xi` and window ratio `a = w_n/ξ²`.
#[no_mangle]
pub unsafe extern "C" fn glr_theory_arl(xi: f64, a: f64, mode: GlrNuMode, value: *mut f64) -> GlrStatus {
    guard(|| {
        *out(value, "value")? = theory::arl_theory(xi, a, to_mode(mode), &TheoryConstants::default())?;
        Ok(())
    })
}

/// False detection rate over `ell` observations, linear and exponential forms.
#[no_mangle]
pub unsafe extern "C" fn glr_theory_fdr(
    xi: f64,
    a: f64,
    ell: f64,
    mode: GlrNuMode,
    linear: *mut f64,
    exponential: *mut f64,
) -> GlrStatus {
    guard(|| {
        let f = theory::fdr_theory(xi, a, ell, to_mode(mode), &TheoryConstants::default())?;
        *out(linear, "linear")? = f.linear;
        *out(exponential, "exponential")? = f.exponential;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_mapping() {
        assert_eq!(status_of(&Error::Domain("x".into())), GlrStatus::Domain);
        assert_eq!(
            status_of(&Error::WindowOutOfRange {
                k: 0,
                l: 1,
                oldest: 0,
                newest: 0
            }),
            GlrStatus::WindowOutOfRange
        );
    }

    #[test]
    fn panics_become_status() {
        let s = guard(|| panic!("boom"));
        assert_eq!(s, GlrStatus::Panic);
        assert!(!glr_last_error_message().is_null());
    }
}
