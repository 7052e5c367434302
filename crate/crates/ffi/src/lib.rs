//! C interface to `crisscross`.
//!
//! Parameters and boundaries are passed as opaque handles released with the
//! matching `cc_*_free`. Every fallible call returns a [`CcStatus`]; on failure
//! the message is available from [`cc_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use crisscross::distributions::PrimitiveDistributions;
use crisscross::experiment::mean_se;
use crisscross::free_boundary::default_w_max;
use crisscross::network::policy::PolicyThresholds;
use crisscross::network::sim::{run_replications, SimConfig};
use crisscross::param_select::{select_thresholds, SelectOptions};
use crisscross::rbm::{estimate_jstar, CostFn, McConfig};
use crisscross::{
    brownian_data, extract_boundary, lp_optimizer, lp_value, solve_value, FreeBoundary, GridSpec,
    NetworkParams, Regime, SolveOptions,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Solver = 4,
    Simulation = 5,
    Io = 6,
    Panic = 7,
}

/// Network parameters.
pub struct CcParams(NetworkParams);

/// Tabulated free boundary.
pub struct CcBoundary(FreeBoundary);

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CcThresholds {
    pub c: f64,
    pub l0: f64,
    pub g0: f64,
    pub d: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CcConstants {
    pub theta4: f64,
    pub c: f64,
    pub gamma4: f64,
    pub lbar: f64,
    pub d: f64,
    pub k: f64,
    pub theta: f64,
    pub eps1: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CcEstimate {
    pub mean: f64,
    pub std_error: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(s));
}

fn guard(f: impl FnOnce() -> Result<(), (CcStatus, String)>) -> CcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CcStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            CcStatus::Panic
        }
    }
}

fn fail<E: std::fmt::Display>(status: CcStatus) -> impl FnOnce(E) -> (CcStatus, String) {
    move |e| (status, e.to_string())
}

unsafe fn as_ref<'a, T>(p: *const T, name: &str) -> Result<&'a T, (CcStatus, String)> {
    p.as_ref()
        .ok_or_else(|| (CcStatus::NullPointer, format!("{name} is null")))
}

unsafe fn as_str<'a>(p: *const c_char, name: &str) -> Result<&'a str, (CcStatus, String)> {
    if p.is_null() {
        return Err((CcStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(fail(CcStatus::InvalidArgument))
}

unsafe fn put<T>(out: *mut T, v: T, name: &str) -> Result<(), (CcStatus, String)> {
    if out.is_null() {
        return Err((CcStatus::NullPointer, format!("{name} is null")));
    }
    out.write(v);
    Ok(())
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Parses a `key = value` parameter document.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cc_params_parse(text: *const c_char, out: *mut *mut CcParams) -> CcStatus {
    guard(|| {
        let s = as_str(text, "text")?;
        let p = NetworkParams::from_config_str(s).map_err(fail(CcStatus::Config))?;
        put(out, Box::into_raw(Box::new(CcParams(p))), "out")
    })
}

/// The reference Case IIB instance.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cc_params_reference(out: *mut *mut CcParams) -> CcStatus {
    guard(|| {
        put(
            out,
            Box::into_raw(Box::new(CcParams(NetworkParams::reference()))),
            "out",
        )
    })
}

/// # Safety
/// `p` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cc_params_free(p: *mut CcParams) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Regime code: 0 Case I, 1..4 Cases IIA..IID.
///
/// # Safety
/// `p` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cc_params_regime(p: *const CcParams, out: *mut i32) -> CcStatus {
    guard(|| {
        let code = match as_ref(p, "params")?.0.regime() {
            Regime::CaseI => 0,
            Regime::CaseIIA => 1,
            Regime::CaseIIB => 2,
            Regime::CaseIIC => 3,
            Regime::CaseIID => 4,
        };
        put(out, code, "out")
    })
}

/// # Safety
/// `p` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cc_lp_value(
    p: *const CcParams,
    w1: f64,
    w2: f64,
    out: *mut f64,
) -> CcStatus {
    guard(|| {
        let v =
            lp_value(&as_ref(p, "params")?.0, [w1, w2]).map_err(fail(CcStatus::InvalidArgument))?;
        put(out, v, "out")
    })
}

/// Writes the three queue lengths to `out[0..3]`.
///
/// # Safety
/// `p` must be a live handle and `out` must point to 3 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn cc_lp_optimizer(
    p: *const CcParams,
    w1: f64,
    w2: f64,
    out: *mut f64,
) -> CcStatus {
    guard(|| {
        let q = lp_optimizer(&as_ref(p, "params")?.0, [w1, w2])
            .map_err(fail(CcStatus::InvalidArgument))?;
        if out.is_null() {
            return Err((CcStatus::NullPointer, "out is null".into()));
        }
        std::ptr::copy_nonoverlapping(q.as_ptr(), out, 3);
        Ok(())
    })
}

/// Solves the workload problem on an `grid_n` x `grid_n` grid and extracts the
/// boundary. `j_origin` may be NULL.
///
/// # Safety
/// `p` must be a live handle; `out` writable; `j_origin` NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn cc_solve_boundary(
    p: *const CcParams,
    grid_n: usize,
    j_origin: *mut f64,
    out: *mut *mut CcBoundary,
) -> CcStatus {
    guard(|| {
        let p = &as_ref(p, "params")?.0;
        let bd = brownian_data(p);
        let grid = GridSpec::new(grid_n, default_w_max(&bd, p.gamma))
            .map_err(fail(CcStatus::InvalidArgument))?;
        let vg =
            solve_value(p, &bd, grid, &SolveOptions::default()).map_err(fail(CcStatus::Solver))?;
        let fb = extract_boundary(&vg, p).map_err(fail(CcStatus::Solver))?;
        if !j_origin.is_null() {
            j_origin.write(vg.origin());
        }
        put(out, Box::into_raw(Box::new(CcBoundary(fb))), "out")
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cc_boundary_load(
    path: *const c_char,
    out: *mut *mut CcBoundary,
) -> CcStatus {
    guard(|| {
        let fb =
            FreeBoundary::load(Path::new(as_str(path, "path")?)).map_err(fail(CcStatus::Io))?;
        put(out, Box::into_raw(Box::new(CcBoundary(fb))), "out")
    })
}

/// # Safety
/// `fb` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn cc_boundary_save(fb: *const CcBoundary, path: *const c_char) -> CcStatus {
    guard(|| {
        let fb = as_ref(fb, "boundary")?;
        fb.0.save(Path::new(as_str(path, "path")?))
            .map_err(fail(CcStatus::Io))
    })
}

/// `psi(w2)`, extrapolated beyond the table.
///
/// # Safety
/// `fb` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cc_boundary_eval(
    fb: *const CcBoundary,
    w2: f64,
    out: *mut f64,
) -> CcStatus {
    guard(|| {
        let v = as_ref(fb, "boundary")?
            .0
            .eval(w2)
            .map_err(fail(CcStatus::InvalidArgument))?;
        put(out, v, "out")
    })
}

/// # Safety
/// `fb` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cc_boundary_free(fb: *mut CcBoundary) {
    if !fb.is_null() {
        drop(Box::from_raw(fb));
    }
}

/// Monte-Carlo limiting cost under `fb`.
///
/// # Safety
/// Handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cc_estimate_jstar(
    p: *const CcParams,
    fb: *const CcBoundary,
    dt: f64,
    paths: usize,
    seed: u64,
    out: *mut CcEstimate,
) -> CcStatus {
    guard(|| {
        let p = &as_ref(p, "params")?.0;
        let fb = &as_ref(fb, "boundary")?.0;
        let cfg = McConfig::new(dt, p.gamma, paths, seed);
        let e = estimate_jstar(p, fb, &brownian_data(p), &cfg, CostFn::Lp)
            .map_err(fail(CcStatus::Simulation))?;
        put(
            out,
            CcEstimate {
                mean: e.mean,
                std_error: e.std_error,
            },
            "out",
        )
    })
}

/// Threshold constants, with the infimum over `n` taken over
/// `n_schedule[0..len]`.
///
/// # Safety
/// `p` must be a live handle, `n_schedule` must point to `len` values, `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn cc_select_thresholds(
    p: *const CcParams,
    n_schedule: *const u64,
    len: usize,
    out: *mut CcConstants,
) -> CcStatus {
    guard(|| {
        let p = &as_ref(p, "params")?.0;
        if n_schedule.is_null() || len == 0 {
            return Err((CcStatus::InvalidArgument, "empty n schedule".into()));
        }
        let schedule = std::slice::from_raw_parts(n_schedule, len).to_vec();
        let prim = PrimitiveDistributions::from_params(p).map_err(fail(CcStatus::Config))?;
        let sc = select_thresholds(
            p,
            &prim,
            &SelectOptions {
                n_schedule: schedule,
                ..Default::default()
            },
        )
        .map_err(fail(CcStatus::InvalidArgument))?;
        let c = CcConstants {
            theta4: sc.theta4,
            c: sc.c,
            gamma4: sc.gamma4,
            lbar: sc.lbar,
            d: sc.d,
            k: sc.k,
            theta: sc.theta,
            eps1: sc.eps1,
        };
        put(out, c, "out")
    })
}

/// Mean scaled cost of `reps` replications of the `n`-th network under the
/// threshold policy.
///
/// # Safety
/// Handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cc_simulate_network(
    p: *const CcParams,
    fb: *const CcBoundary,
    th: CcThresholds,
    n: u64,
    reps: u64,
    horizon: f64,
    seed: u64,
    out: *mut CcEstimate,
) -> CcStatus {
    guard(|| {
        let p = &as_ref(p, "params")?.0;
        let fb = &as_ref(fb, "boundary")?.0;
        let th = PolicyThresholds::new(th.c, th.l0, th.g0, th.d)
            .map_err(fail(CcStatus::InvalidArgument))?;
        if reps < 2 {
            return Err((
                CcStatus::InvalidArgument,
                "need at least 2 replications".into(),
            ));
        }
        let prim = PrimitiveDistributions::from_params(p).map_err(fail(CcStatus::Config))?;
        let r = run_replications(p, &th, fb, &prim, &SimConfig::new(n, horizon), seed, reps)
            .map_err(fail(CcStatus::Simulation))?;
        let (mean, std_error) = mean_se(&r.iter().map(|x| x.jhat).collect::<Vec<_>>());
        put(out, CcEstimate { mean, std_error }, "out")
    })
}
