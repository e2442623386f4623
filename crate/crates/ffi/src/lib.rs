//! C ABI over `fleet-core`.
//!
//! Scenarios and reports cross the boundary as opaque handles. Every call
//! returns a [`FleetStatus`]; on failure [`fleet_last_error`] describes what
//! went wrong on the calling thread. Strings handed out by this library
//! must be released with [`fleet_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use fleet_core::cli::{render, Format};
use fleet_core::dhcpd::{parse_leases_str, LeaseState};
use fleet_core::router_dpi::SignatureSet;
use fleet_core::{run_scenario, RunReport, Scenario};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FleetStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    ConfigError = 3,
    ParseError = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FleetFormat {
    Table = 0,
    Json = 1,
    Csv = 2,
}

/// Opaque scenario handle.
pub struct FleetScenario(Scenario);

/// Opaque report handle.
pub struct FleetReport(RunReport);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn guard(f: impl FnOnce() -> Result<(), (FleetStatus, String)>) -> FleetStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FleetStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            FleetStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char) -> Result<&'a str, (FleetStatus, String)> {
    if p.is_null() {
        return Err((FleetStatus::NullArgument, "null string argument".into()));
    }
    CStr::from_ptr(p).to_str().map_err(|e| (FleetStatus::InvalidUtf8, e.to_string()))
}

fn null(what: &str) -> (FleetStatus, String) {
    (FleetStatus::NullArgument, format!("{what} is null"))
}

/// Message for the last failed call on this thread, or NULL. Valid until
/// the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn fleet_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// # Safety
/// `s` must be NULL or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn fleet_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses a scenario from JSON text. Relative paths inside resolve
/// against the working directory.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fleet_scenario_from_json(json: *const c_char, out: *mut *mut FleetScenario) -> FleetStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let s = Scenario::from_json_str(text(json)?).map_err(|e| (FleetStatus::ConfigError, e.to_string()))?;
        *out = Box::into_raw(Box::new(FleetScenario(s)));
        Ok(())
    })
}

/// Loads a scenario file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fleet_scenario_load(path: *const c_char, out: *mut *mut FleetScenario) -> FleetStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let s = Scenario::load(Path::new(text(path)?)).map_err(|e| (FleetStatus::ConfigError, e.to_string()))?;
        *out = Box::into_raw(Box::new(FleetScenario(s)));
        Ok(())
    })
}

/// # Safety
/// `scenario` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fleet_scenario_set_seed(scenario: *mut FleetScenario, seed: u64) -> FleetStatus {
    guard(|| {
        let s = scenario.as_mut().ok_or_else(|| null("scenario"))?;
        s.0.seed = seed;
        Ok(())
    })
}

/// # Safety
/// `scenario` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fleet_scenario_set_devices(scenario: *mut FleetScenario, devices: u32) -> FleetStatus {
    guard(|| {
        let s = scenario.as_mut().ok_or_else(|| null("scenario"))?;
        s.0.device_count = devices;
        Ok(())
    })
}

/// # Safety
/// `scenario` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fleet_scenario_free(scenario: *mut FleetScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Runs a scenario to completion.
///
/// # Safety
/// `scenario` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fleet_run(scenario: *const FleetScenario, out: *mut *mut FleetReport) -> FleetStatus {
    guard(|| {
        let s = scenario.as_ref().ok_or_else(|| null("scenario"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let report = run_scenario(&s.0).map_err(|e| (FleetStatus::ConfigError, e.to_string()))?;
        *out = Box::into_raw(Box::new(FleetReport(report)));
        Ok(())
    })
}

/// Reads back a report previously rendered as JSON.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fleet_report_from_json(json: *const c_char, out: *mut *mut FleetReport) -> FleetStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let r = RunReport::from_json(text(json)?).map_err(|e| (FleetStatus::ParseError, e.to_string()))?;
        *out = Box::into_raw(Box::new(FleetReport(r)));
        Ok(())
    })
}

/// Renders a report; free the result with [`fleet_string_free`].
///
/// # Safety
/// `report` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fleet_report_render(
    report: *const FleetReport,
    format: FleetFormat,
    out: *mut *mut c_char,
) -> FleetStatus {
    guard(|| {
        let r = report.as_ref().ok_or_else(|| null("report"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let format = match format {
            FleetFormat::Table => Format::Table,
            FleetFormat::Json => Format::Json,
            FleetFormat::Csv => Format::Csv,
        };
        let s = CString::new(render(&r.0, format)).map_err(|e| (FleetStatus::ParseError, e.to_string()))?;
        *out = s.into_raw();
        Ok(())
    })
}

/// Flow and anomaly counts of a report.
///
/// # Safety
/// `report` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn fleet_report_counts(
    report: *const FleetReport,
    flows: *mut usize,
    anomalies: *mut usize,
) -> FleetStatus {
    guard(|| {
        let r = report.as_ref().ok_or_else(|| null("report"))?;
        if flows.is_null() || anomalies.is_null() {
            return Err(null("out"));
        }
        *flows = r.0.flows.len();
        *anomalies = r.0.anomalies.len();
        Ok(())
    })
}

/// # Safety
/// `report` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fleet_report_free(report: *mut FleetReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Checks signature rule text and reports how many rules it holds.
///
/// # Safety
/// `rules` must be a NUL-terminated string; `count` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fleet_signatures_check(rules: *const c_char, count: *mut usize) -> FleetStatus {
    guard(|| {
        if count.is_null() {
            return Err(null("count"));
        }
        let set = SignatureSet::parse(text(rules)?).map_err(|e| (FleetStatus::ParseError, e.to_string()))?;
        *count = set.rules().len();
        Ok(())
    })
}

/// Counts the active leases in leases-file text.
///
/// # Safety
/// `leases` must be a NUL-terminated string; `active` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fleet_leases_active(leases: *const c_char, active: *mut usize) -> FleetStatus {
    guard(|| {
        if active.is_null() {
            return Err(null("active"));
        }
        let parsed = parse_leases_str(text(leases)?).map_err(|e| (FleetStatus::ParseError, e.to_string()))?;
        *active = parsed.iter().filter(|l| l.state == LeaseState::Active).count();
        Ok(())
    })
}
