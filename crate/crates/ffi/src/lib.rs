//! C ABI over the critjump solvers.
//!
//! Handles are opaque heap objects created by `cj_*_new`/solver calls and
//! released with the matching `cj_*_free`. Every fallible call returns a
//! [`CjStatus`]; the message of the most recent failure on the calling thread
//! is available from [`cj_last_error_message`]. Panics never cross the
//! boundary.

use std::cell::RefCell;
use std::ffi::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use critjump::continuation::{k_of_a, nonexistence_bound};
use critjump::discretization::Grid;
use critjump::mountain_pass::{second_solution, sobolev_constants, SecondOptions, SecondOutcome};
use critjump::nonlinearity::{Domain, ProblemSpec};
use critjump::singular_solvers::{first_solution, Context, SolveReport, SolverOptions};
use critjump::Error;

/// Outcome of a call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CjStatus {
    Ok = 0,
    InvalidArgument = 1,
    NoSolution = 2,
    StallAboveThreshold = 3,
    NotConverged = 4,
    NullPointer = 5,
    BufferTooSmall = 6,
    Panic = 7,
    Failure = 8,
}

/// Which branch of the dichotomy produced a second solution.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CjCase {
    ZeroAltitude = 0,
    MountainPass = 1,
}

/// Grid, eigenpair and solver options.
pub struct CjContext {
    ctx: Context,
}

/// A first solution and its diagnostics.
pub struct CjSolution {
    spec: ProblemSpec,
    report: SolveReport,
}

/// A second solution with its level certificate.
pub struct CjSecond {
    out: SecondOutcome,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(e: &Error) -> CjStatus {
    match e {
        Error::InvalidParameter(_) | Error::Domain(_) | Error::Geometry(_) | Error::Config(_) => {
            CjStatus::InvalidArgument
        }
        Error::NoSolutionEvidence(_) => CjStatus::NoSolution,
        Error::StallAboveThreshold { .. } => CjStatus::StallAboveThreshold,
        Error::Convergence { .. } | Error::ScheduleExhausted { .. } => CjStatus::NotConverged,
        _ => CjStatus::Failure,
    }
}

/// Runs `f`, translating errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), CjStatus>) -> CjStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            CjStatus::Ok
        }
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            CjStatus::Panic
        }
    }
}

fn fail(e: Error) -> CjStatus {
    let s = status_of(&e);
    set_error(e.to_string());
    s
}

fn null(what: &str) -> CjStatus {
    set_error(format!("{what} is null"));
    CjStatus::NullPointer
}

/// Copies the last error message of this thread into `buf` as a
/// NUL-terminated string and returns its full length in bytes (without the
/// terminator). With a null `buf` or zero `len` only the length is returned.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn cj_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Radial grid with `m` nodes for the unit ball in `R^n`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn cj_context_new_radial(n: usize, m: usize, out: *mut *mut CjContext) -> CjStatus {
    if out.is_null() {
        return null("out");
    }
    guard(|| {
        let grid = Grid::radial(n, m).map_err(fail)?;
        let ctx = Context::new(grid, SolverOptions::default()).map_err(fail)?;
        *out = Box::into_raw(Box::new(CjContext { ctx }));
        Ok(())
    })
}

/// Cube grid with `m` interior nodes per direction.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn cj_context_new_box(m: usize, out: *mut *mut CjContext) -> CjStatus {
    if out.is_null() {
        return null("out");
    }
    guard(|| {
        let grid = Grid::box3d(m).map_err(fail)?;
        let ctx = Context::new(grid, SolverOptions::default()).map_err(fail)?;
        *out = Box::into_raw(Box::new(CjContext { ctx }));
        Ok(())
    })
}

/// Discrete principal eigenvalue of the context's grid.
///
/// # Safety
/// `ctx` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn cj_context_lambda1(ctx: *const CjContext) -> f64 {
    ctx.as_ref().map_or(f64::NAN, |c| c.ctx.eigen.lambda1)
}

/// Number of unknowns of the context's grid.
///
/// # Safety
/// `ctx` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn cj_context_len(ctx: *const CjContext) -> usize {
    ctx.as_ref().map_or(0, |c| c.ctx.grid.dim())
}

/// # Safety
/// `ctx` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cj_context_free(ctx: *mut CjContext) {
    if !ctx.is_null() {
        drop(Box::from_raw(ctx));
    }
}

fn domain_of(ctx: &Context) -> Domain {
    if ctx.grid.is_radial() {
        Domain::RadialBall
    } else {
        Domain::Box3D
    }
}

/// First solution for `(n, delta, a, lambda)` on the context's domain.
///
/// # Safety
/// `ctx` must be a live handle; `out` must be valid for one handle.
#[no_mangle]
pub unsafe extern "C" fn cj_first_solution(
    ctx: *const CjContext,
    n: usize,
    delta: f64,
    a: f64,
    lambda: f64,
    out: *mut *mut CjSolution,
) -> CjStatus {
    let Some(c) = ctx.as_ref() else { return null("ctx") };
    if out.is_null() {
        return null("out");
    }
    guard(|| {
        let spec = ProblemSpec::new(n, delta, a, lambda, domain_of(&c.ctx)).map_err(fail)?;
        let report = first_solution(&c.ctx, &spec).map_err(fail)?;
        if !report.converged {
            set_error(format!("residual {:.3e} above tolerance", report.residual_inf));
            return Err(CjStatus::NotConverged);
        }
        *out = Box::into_raw(Box::new(CjSolution { spec, report }));
        Ok(())
    })
}

unsafe fn copy_out(values: &[f64], buf: *mut f64, len: usize) -> CjStatus {
    if buf.is_null() {
        return null("buf");
    }
    if len < values.len() {
        set_error(format!("buffer holds {len} values, {} needed", values.len()));
        return CjStatus::BufferTooSmall;
    }
    ptr::copy_nonoverlapping(values.as_ptr(), buf, values.len());
    CjStatus::Ok
}

/// Nodal values of a first solution into `buf` (at least
/// [`cj_context_len`] entries).
///
/// # Safety
/// `sol` must be a live handle; `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn cj_solution_values(sol: *const CjSolution, buf: *mut f64, len: usize) -> CjStatus {
    let Some(s) = sol.as_ref() else { return null("sol") };
    copy_out(&s.report.solution.values, buf, len)
}

/// Relative strong-form residual of a first solution.
///
/// # Safety
/// `sol` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn cj_solution_residual(sol: *const CjSolution) -> f64 {
    sol.as_ref().map_or(f64::NAN, |s| s.report.residual_inf)
}

/// Energy of a first solution.
///
/// # Safety
/// `sol` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn cj_solution_energy(sol: *const CjSolution) -> f64 {
    sol.as_ref().map_or(f64::NAN, |s| s.report.energy.total)
}

/// # Safety
/// `sol` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cj_solution_free(sol: *mut CjSolution) {
    if !sol.is_null() {
        drop(Box::from_raw(sol));
    }
}

/// Second solution above `first`, with random probes seeded by `seed`.
///
/// # Safety
/// `ctx` and `first` must be live handles, `first` computed on `ctx`;
/// `out` must be valid for one handle.
#[no_mangle]
pub unsafe extern "C" fn cj_second_solution(
    ctx: *const CjContext,
    first: *const CjSolution,
    seed: u64,
    out: *mut *mut CjSecond,
) -> CjStatus {
    let Some(c) = ctx.as_ref() else { return null("ctx") };
    let Some(f) = first.as_ref() else { return null("first") };
    if out.is_null() {
        return null("out");
    }
    guard(|| {
        if f.report.solution.values.len() != c.ctx.grid.dim() {
            set_error("first solution was computed on a different grid");
            return Err(CjStatus::InvalidArgument);
        }
        let opts = SecondOptions {
            seed,
            ..SecondOptions::default()
        };
        let out_val = second_solution(&c.ctx, &f.spec, &f.report.solution, &opts).map_err(fail)?;
        *out = Box::into_raw(Box::new(CjSecond { out: out_val }));
        Ok(())
    })
}

/// Values of the composed second solution `u_λ + v_λ`.
///
/// # Safety
/// `sec` must be a live handle; `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn cj_second_values(sec: *const CjSecond, buf: *mut f64, len: usize) -> CjStatus {
    let Some(s) = sec.as_ref() else { return null("sec") };
    copy_out(&s.out.composed.values, buf, len)
}

/// Critical level, or NaN for a zero-altitude result.
///
/// # Safety
/// `sec` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn cj_second_gamma0(sec: *const CjSecond) -> f64 {
    sec.as_ref()
        .and_then(|s| s.out.certificate.gamma0)
        .unwrap_or(f64::NAN)
}

/// Compactness threshold the level was certified against.
///
/// # Safety
/// `sec` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn cj_second_threshold(sec: *const CjSecond) -> f64 {
    sec.as_ref().map_or(f64::NAN, |s| s.out.certificate.threshold)
}

/// Strong-form residual of the composed second solution.
///
/// # Safety
/// `sec` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn cj_second_residual(sec: *const CjSecond) -> f64 {
    sec.as_ref().map_or(f64::NAN, |s| s.out.certificate.residual)
}

/// # Safety
/// `sec` must be a live handle; `out` must be valid for one value.
#[no_mangle]
pub unsafe extern "C" fn cj_second_case(sec: *const CjSecond, out: *mut CjCase) -> CjStatus {
    let Some(s) = sec.as_ref() else { return null("sec") };
    if out.is_null() {
        return null("out");
    }
    *out = if s.out.certificate.case == "ZA" {
        CjCase::ZeroAltitude
    } else {
        CjCase::MountainPass
    };
    CjStatus::Ok
}

/// # Safety
/// `sec` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cj_second_free(sec: *mut CjSecond) {
    if !sec.is_null() {
        drop(Box::from_raw(sec));
    }
}

/// Whole-space Talenti integrals `A`, `B` and the Sobolev constant `S`.
///
/// # Safety
/// Each output pointer must be valid for one double.
#[no_mangle]
pub unsafe extern "C" fn cj_sobolev_constants(n: usize, a: *mut f64, b: *mut f64, s: *mut f64) -> CjStatus {
    if a.is_null() || b.is_null() || s.is_null() {
        return null("output");
    }
    guard(|| {
        let c = sobolev_constants(n).map_err(fail)?;
        *a = c.a;
        *b = c.b;
        *s = c.s;
        Ok(())
    })
}

/// `K(a)` and the nonexistence bound `lambda1 / K(a)`.
///
/// # Safety
/// Both output pointers must be valid for one double.
#[no_mangle]
pub unsafe extern "C" fn cj_nonexistence_bound(
    n: usize,
    delta: f64,
    a_level: f64,
    lambda1: f64,
    k_out: *mut f64,
    bound_out: *mut f64,
) -> CjStatus {
    if k_out.is_null() || bound_out.is_null() {
        return null("output");
    }
    guard(|| {
        let spec = ProblemSpec::new(n, delta, a_level, 1.0, Domain::RadialBall).map_err(fail)?;
        if !(lambda1 > 0.0 && lambda1.is_finite()) {
            set_error(format!("lambda1 = {lambda1} must be positive"));
            return Err(CjStatus::InvalidArgument);
        }
        *k_out = k_of_a(n, delta, a_level);
        *bound_out = nonexistence_bound(&spec, lambda1);
        Ok(())
    })
}
