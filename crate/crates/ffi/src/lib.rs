//! C ABI over `distlq`.
//!
//! Problems are opaque [`DlqProblem`] handles created by
//! `dlq_problem_from_fixture` / `dlq_problem_from_config_json` and released
//! with `dlq_problem_free`. Every fallible call returns a [`DlqStatus`]; on
//! failure `dlq_last_error_message` describes the error for the calling thread.
//! Panics never cross the boundary.
//!
//! Vectors are passed as `(pointer, length)` pairs of `double`, in subspace
//! coordinates; the length must equal `dlq_problem_dim`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use distlq::config::ExperimentConfig;
use distlq::experiment::reference_optimum;
use distlq::learner::{compute_d, learn, LearnerConfig};
use distlq::policy_space::qi_check;
use distlq::{CostContext, Error};
use nalgebra::DVector;

/// Status codes; the nonzero library codes match the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DlqStatus {
    Ok = 0,
    /// Bad configuration or argument.
    InvalidInput = 2,
    /// Subspace not QI, or singular quadratic.
    Precondition = 3,
    /// Internal consistency check or I/O failure.
    Internal = 4,
    NullPointer = 5,
    Panic = 6,
}

/// Opaque problem handle: a plant, its lifted operators and a policy subspace.
pub struct DlqProblem {
    ctx: CostContext,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> DlqStatus {
    match err.exit_code() {
        3 => DlqStatus::Precondition,
        4 => DlqStatus::Internal,
        _ => DlqStatus::InvalidInput,
    }
}

/// Runs `f`, recording any error or panic message.
fn guard<F: FnOnce() -> Result<(), (DlqStatus, String)>>(f: F) -> DlqStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DlqStatus::Ok,
        Ok(Err((status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            DlqStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (DlqStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (DlqStatus, String) {
    (DlqStatus::NullPointer, format!("{what} is NULL"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (DlqStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (DlqStatus::InvalidInput, format!("{what} is not valid UTF-8")))
}

unsafe fn problem_arg<'a>(p: *const DlqProblem) -> Result<&'a DlqProblem, (DlqStatus, String)> {
    p.as_ref().ok_or_else(|| null("problem"))
}

unsafe fn vec_arg(p: *const f64, len: usize, dim: usize, what: &str) -> Result<DVector<f64>, (DlqStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    if len != dim {
        return Err((DlqStatus::InvalidInput, format!("{what} has length {len}, subspace dimension is {dim}")));
    }
    Ok(DVector::from_column_slice(std::slice::from_raw_parts(p, len)))
}

unsafe fn write_vec(out: *mut f64, len: usize, v: &DVector<f64>, what: &str) -> Result<(), (DlqStatus, String)> {
    if out.is_null() {
        return Err(null(what));
    }
    if len != v.len() {
        return Err((DlqStatus::InvalidInput, format!("{what} has length {len}, need {}", v.len())));
    }
    std::slice::from_raw_parts_mut(out, len).copy_from_slice(v.as_slice());
    Ok(())
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, (DlqStatus, String)> {
    p.as_mut().ok_or_else(|| null(what))
}

fn boxed(ctx: CostContext) -> *mut DlqProblem {
    Box::into_raw(Box::new(DlqProblem { ctx }))
}

/// Creates a problem from a named fixture (`appendix-d`, `b2`, `b3`, `quadratic`).
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dlq_problem_from_fixture(name: *const c_char, out: *mut *mut DlqProblem) -> DlqStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let cfg = ExperimentConfig::for_fixture(str_arg(name, "name")?).map_err(lib_err)?;
        *out = boxed(cfg.build().map_err(lib_err)?);
        Ok(())
    })
}

/// Creates a problem from an experiment config in JSON (only the system,
/// pattern and noise blocks are used).
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dlq_problem_from_config_json(json: *const c_char, out: *mut *mut DlqProblem) -> DlqStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let cfg = ExperimentConfig::from_json(str_arg(json, "json")?).map_err(lib_err)?;
        *out = boxed(cfg.build().map_err(lib_err)?);
        Ok(())
    })
}

/// Releases a problem. NULL is ignored.
///
/// # Safety
/// `problem` must come from one of the constructors and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dlq_problem_free(problem: *mut DlqProblem) {
    if !problem.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(problem))));
    }
}

/// Subspace dimension `d`; 0 for NULL.
///
/// # Safety
/// `problem` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dlq_problem_dim(problem: *const DlqProblem) -> usize {
    problem.as_ref().map_or(0, |p| p.ctx.dim())
}

/// Writes whether the subspace is quadratically invariant.
///
/// # Safety
/// `problem` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dlq_is_qi(problem: *const DlqProblem, out: *mut bool) -> DlqStatus {
    guard(|| {
        let p = problem_arg(problem)?;
        *out_arg(out, "out")? = qi_check(&p.ctx.basis, &p.ctx.ops.cp12).quadratically_invariant;
        Ok(())
    })
}

/// Exact expected cost at subspace coordinates `z`.
///
/// # Safety
/// `z` must point to `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dlq_exact_cost(
    problem: *const DlqProblem,
    z: *const f64,
    len: usize,
    out: *mut f64,
) -> DlqStatus {
    guard(|| {
        let p = problem_arg(problem)?;
        let z = vec_arg(z, len, p.ctx.dim(), "z")?;
        *out_arg(out, "out")? = p.ctx.f(&z);
        Ok(())
    })
}

/// Optimal coordinates and cost: QI oracle, or damped Newton when `direct`.
///
/// # Safety
/// `z_out` must point to `len` writable doubles; `j_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dlq_solve(
    problem: *const DlqProblem,
    direct: bool,
    z_out: *mut f64,
    len: usize,
    j_out: *mut f64,
) -> DlqStatus {
    guard(|| {
        let p = problem_arg(problem)?;
        let j_out = out_arg(j_out, "j_out")?;
        let reference = reference_optimum(&p.ctx, direct).map_err(lib_err)?;
        write_vec(z_out, len, &reference.z_star, "z_out")?;
        *j_out = reference.j_star;
        Ok(())
    })
}

/// Runs `iterations` steps of the one-point zeroth-order learner from `z0`
/// against simulated rollouts and writes the final iterate.
///
/// # Safety
/// `z0` must point to `len` doubles and `z_out` to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dlq_learn(
    problem: *const DlqProblem,
    eta: f64,
    r: f64,
    iterations: u64,
    seed: u64,
    z0: *const f64,
    z_out: *mut f64,
    len: usize,
) -> DlqStatus {
    guard(|| {
        let p = problem_arg(problem)?;
        let z0 = vec_arg(z0, len, p.ctx.dim(), "z0")?;
        let config = LearnerConfig {
            eta,
            r,
            iterations: iterations as usize,
            z0,
            seed,
            log_true_cost_every: 0,
            stop: None,
        };
        let (_, log) = learn(&p.ctx, &config).map_err(lib_err)?;
        write_vec(z_out, len, &log.z_final, "z_out")
    })
}

/// Disturbance constant `D` of the plant's noise model.
///
/// # Safety
/// `problem` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dlq_disturbance_constant(problem: *const DlqProblem, out: *mut f64) -> DlqStatus {
    guard(|| {
        let p = problem_arg(problem)?;
        let d = compute_d(p.ctx.spec.noise(), &p.ctx.spec.dims()).map_err(lib_err)?;
        *out_arg(out, "out")? = d.d;
        Ok(())
    })
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dlq_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version, static string.
#[no_mangle]
pub extern "C" fn dlq_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
