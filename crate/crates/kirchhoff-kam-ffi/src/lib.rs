//! C ABI for the kirchhoff-kam solver.
//!
//! Conventions (POSIX-style, matching the generated `kirchhoff_kam.h`):
//! - functions returning `int` use `0` for success and negative codes for
//!   failure (see the `KK_*` constants);
//! - functions returning pointers return null on failure;
//! - every returned string is owned by the caller and must be released with
//!   [`kk_string_free`]; every run handle with [`kk_run_free`];
//! - the last error message is retrievable per thread via
//!   [`kk_last_error_message`].
//!
//! # Safety
//!
//! All pointer parameters must be either null (handled) or valid, aligned,
//! NUL-terminated strings / handles produced by this library. Handles are not
//! thread-safe; strings are plain buffers.

use std::cell::RefCell;
use std::ffi::{c_char, c_double, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use kirchhoff_kam::config::RunConfig;
use kirchhoff_kam::error::Error;
use kirchhoff_kam::measure::{sample_exclusions, MeasureConfig};
use kirchhoff_kam::nash_moser::{
    assemble_full_solution, full_system_residual, nash_moser_iterate, solve_zero_mode, RunStatus,
};
use kirchhoff_kam::toeplitz::BlockDiagonal;

/// Success.
pub const KK_OK: c_int = 0;
/// A required pointer was null.
pub const KK_ERR_NULL: c_int = -1;
/// Configuration or input error.
pub const KK_ERR_CONFIG: c_int = -2;
/// The frequency was excluded by a non-resonance condition.
pub const KK_ERR_EXCLUDED: c_int = -3;
/// The iteration diverged.
pub const KK_ERR_DIVERGED: c_int = -4;
/// Internal panic (a bug; the message carries the payload).
pub const KK_ERR_PANIC: c_int = -9;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg).unwrap_or_else(|_| CString::new("invalid error text").unwrap());
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn code_of(err: &Error) -> c_int {
    match err {
        Error::NearResonant { .. } | Error::NonResonance { .. } => KK_ERR_EXCLUDED,
        Error::Divergence { .. } => KK_ERR_DIVERGED,
        _ => KK_ERR_CONFIG,
    }
}

fn to_owned_c_string(s: &str) -> *mut c_char {
    match CString::new(s) {
        Ok(c) => c.into_raw(),
        Err(_) => ptr::null_mut(),
    }
}

unsafe fn str_arg<'a>(p: *const c_char) -> Option<&'a str> {
    if p.is_null() {
        return None;
    }
    unsafe { CStr::from_ptr(p) }.to_str().ok()
}

/// Opaque handle to a finished solver run.
pub struct KkRun {
    status: RunStatus,
    final_residual: f64,
    full_residual: f64,
    steps: usize,
    summary_json: String,
    solution_v_json: String,
    solution_p_json: String,
}

/// Version string of the library (static storage; do not free).
#[no_mangle]
pub extern "C" fn kk_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Returns the last error message on this thread as an owned string (caller
/// frees with `kk_string_free`), or null when no error has occurred.
#[no_mangle]
pub extern "C" fn kk_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|e| match &*e.borrow() {
        Some(c) => to_owned_c_string(c.to_str().unwrap_or("")),
        None => ptr::null_mut(),
    })
}

/// Releases a string returned by this library. Null is a no-op.
///
/// # Safety
/// `s` must be a pointer previously returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn kk_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

fn run_from_config(cfg_text: &str) -> Result<KkRun, Error> {
    let value: serde_json::Value = serde_json::from_str(cfg_text)?;
    kirchhoff_kam::config::validate_schema(&kirchhoff_kam::config::schema_config(), &value)
        .map_err(Error::Config)?;
    let cfg: RunConfig = serde_json::from_value(value)?;
    let ctx = cfg.context()?;
    let nm = cfg.newton_config()?;
    let forcing = cfg.load_forcing(None)?;
    let run = nash_moser_iterate(&forcing, &nm, &ctx)?;
    match run.status {
        RunStatus::Converged | RunStatus::MaxSteps => {}
        RunStatus::Excluded => {
            return Err(run
                .exclusion
                .unwrap_or_else(|| Error::Config("frequency excluded".into())))
        }
        RunStatus::Diverged => {
            return Err(Error::Divergence {
                step: run.records.len(),
                residual: run.records.last().map(|r| r.residual_s0).unwrap_or(f64::NAN),
            })
        }
    }
    let (v0, p0) = solve_zero_mode(&forcing, cfg.eps, &ctx)?;
    let vp = assemble_full_solution(&run.state, &v0, &p0);
    let full_residual = full_system_residual(&vp, &forcing, cfg.eps, &ctx);
    let final_residual = run.records.last().map(|r| r.residual_s0).unwrap_or(f64::NAN);
    let summary = serde_json::json!({
        "status": run.status,
        "steps": run.records.len(),
        "final_residual_s0": final_residual,
        "full_system_residual": full_residual,
        "amplitude_s0": run.state.u.sobolev_norm(ctx.s0()),
        "records": run.records,
    });
    Ok(KkRun {
        status: run.status,
        final_residual,
        full_residual,
        steps: run.records.len(),
        summary_json: summary.to_string(),
        solution_v_json: serde_json::to_string(&vp.u.to_file())?,
        solution_p_json: serde_json::to_string(&vp.psi.to_file())?,
    })
}

/// Runs the solver for a JSON configuration (same schema as the CLI config
/// files). Returns an opaque handle, or null on failure (see
/// `kk_last_error_message`).
///
/// # Safety
/// `config_json` must be null or a valid NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn kk_run_new(config_json: *const c_char) -> *mut KkRun {
    let Some(cfg_text) = (unsafe { str_arg(config_json) }) else {
        set_error("config_json is null or not UTF-8".into());
        return ptr::null_mut();
    };
    let result = catch_unwind(AssertUnwindSafe(|| run_from_config(cfg_text)));
    match result {
        Ok(Ok(run)) => Box::into_raw(Box::new(run)),
        Ok(Err(e)) => {
            set_error(format!("[{}] {e}", code_of(&e)));
            ptr::null_mut()
        }
        Err(_) => {
            set_error("internal panic".into());
            ptr::null_mut()
        }
    }
}

/// Releases a run handle. Null is a no-op.
///
/// # Safety
/// `run` must be a handle from `kk_run_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn kk_run_free(run: *mut KkRun) {
    if !run.is_null() {
        drop(unsafe { Box::from_raw(run) });
    }
}

/// Newton step count of a finished run; `KK_ERR_NULL` when the handle is null.
///
/// # Safety
/// `run` must be null or a valid handle.
#[no_mangle]
pub unsafe extern "C" fn kk_run_steps(run: *const KkRun) -> c_int {
    match unsafe { run.as_ref() } {
        Some(r) => r.steps as c_int,
        None => KK_ERR_NULL,
    }
}

/// 1 when the run converged below its residual tolerance, 0 otherwise.
///
/// # Safety
/// `run` must be null or a valid handle.
#[no_mangle]
pub unsafe extern "C" fn kk_run_converged(run: *const KkRun) -> c_int {
    match unsafe { run.as_ref() } {
        Some(r) => (r.status == RunStatus::Converged) as c_int,
        None => KK_ERR_NULL,
    }
}

/// Final residual of the zero-mean system (NaN when the handle is null).
///
/// # Safety
/// `run` must be null or a valid handle.
#[no_mangle]
pub unsafe extern "C" fn kk_run_final_residual(run: *const KkRun) -> c_double {
    match unsafe { run.as_ref() } {
        Some(r) => r.final_residual,
        None => f64::NAN,
    }
}

/// Residual of the assembled full solution (NaN when the handle is null).
///
/// # Safety
/// `run` must be null or a valid handle.
#[no_mangle]
pub unsafe extern "C" fn kk_run_full_residual(run: *const KkRun) -> c_double {
    match unsafe { run.as_ref() } {
        Some(r) => r.full_residual,
        None => f64::NAN,
    }
}

/// Run summary as a JSON string (owned by the caller).
///
/// # Safety
/// `run` must be null or a valid handle.
#[no_mangle]
pub unsafe extern "C" fn kk_run_summary_json(run: *const KkRun) -> *mut c_char {
    match unsafe { run.as_ref() } {
        Some(r) => to_owned_c_string(&r.summary_json),
        None => ptr::null_mut(),
    }
}

/// Solution component as a field JSON string: `component` 0 for `v`, 1 for `p`.
///
/// # Safety
/// `run` must be null or a valid handle.
#[no_mangle]
pub unsafe extern "C" fn kk_run_solution_json(run: *const KkRun, component: c_int) -> *mut c_char {
    match unsafe { run.as_ref() } {
        Some(r) => match component {
            0 => to_owned_c_string(&r.solution_v_json),
            1 => to_owned_c_string(&r.solution_p_json),
            _ => {
                set_error(format!("component {component} out of range (0 = v, 1 = p)"));
                ptr::null_mut()
            }
        },
        None => ptr::null_mut(),
    }
}

/// Monte Carlo measure estimation over the configured frequency box with
/// unperturbed blocks: returns a JSON array with one
/// `{gamma, excluded_fraction, ci_low, ci_high, ...}` record per gamma
/// (owned by the caller). `gammas` points to `n_gammas` doubles.
///
/// # Safety
/// `config_json` and `gammas` must be null or valid; `gammas` must reference
/// `n_gammas` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn kk_measure_json(
    config_json: *const c_char,
    gammas: *const c_double,
    n_gammas: c_int,
) -> *mut c_char {
    let Some(cfg_text) = (unsafe { str_arg(config_json) }) else {
        set_error("config_json is null or not UTF-8".into());
        return ptr::null_mut();
    };
    if gammas.is_null() || n_gammas <= 0 {
        set_error("gammas must be a non-empty array".into());
        return ptr::null_mut();
    }
    let gs = unsafe { std::slice::from_raw_parts(gammas, n_gammas as usize) };
    let result = catch_unwind(AssertUnwindSafe(|| -> Result<String, Error> {
        let cfg: RunConfig = serde_json::from_str(cfg_text)?;
        let ctx = cfg.context()?;
        let boxes: Vec<(f64, f64)> = match &cfg.omega_box {
            Some(b) => b.iter().map(|p| (p[0], p[1])).collect(),
            None => ctx.omega.iter().map(|w| (w - 0.25, w + 0.25)).collect(),
        };
        let mut mcfg = MeasureConfig::defaults(ctx.nu, ctx.l_max, ctx.j_max);
        if let Some(n) = cfg.measure_samples {
            mcfg.samples = n;
        }
        mcfg.seed = cfg.seed.unwrap_or(0);
        let d = BlockDiagonal::dispersion(1.0, ctx.j_max);
        let mut stats = Vec::new();
        for &g in gs {
            stats.push(sample_exclusions(&d, 1.0, &boxes, g, &mcfg)?);
        }
        Ok(serde_json::to_string(&stats)?)
    }));
    match result {
        Ok(Ok(json)) => to_owned_c_string(&json),
        Ok(Err(e)) => {
            set_error(format!("[{}] {e}", code_of(&e)));
            ptr::null_mut()
        }
        Err(_) => {
            set_error("internal panic".into());
            ptr::null_mut()
        }
    }
}

/// Runs the invariant self-test suite; returns `KK_OK` when every check
/// passes, `KK_ERR_CONFIG` otherwise.
#[no_mangle]
pub extern "C" fn kk_verify() -> c_int {
    let result = catch_unwind(kirchhoff_kam::config::run_verify);
    match result {
        Ok(checks) => {
            if checks.iter().all(|c| c.pass) {
                KK_OK
            } else {
                let failed: Vec<&str> =
                    checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
                set_error(format!("invariant checks failed: {}", failed.join(", ")));
                KK_ERR_CONFIG
            }
        }
        Err(_) => {
            set_error("internal panic".into());
            KK_ERR_PANIC
        }
    }
}
