//! C ABI for the nonholo library: opaque system handles, status codes, and
//! flat-array signatures so other languages can bind without Rust types.
//!
//! Conventions: every fallible call returns an [`NhStatus`]; on any status
//! other than `Ok` the thread-local message retrieved by
//! [`nh_last_error`] describes the failure. Handles returned through
//! out-pointers are owned by the caller and released with
//! [`nh_system_free`].

use nonholo::dynamics::MechanicalSystem;
use nonholo::geometry::{classify_point, ClassifyOpts};
use nonholo::scenario::{load_scenario, run_scenario, RunStatus};
use nonholo::transitions::{CrossingOutcome, Decision, TransitionOpts};
use nonholo::Error;

use nalgebra::DVector;
use std::cell::RefCell;
use std::ffi::CStr;
use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

/// Status codes shared by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NhStatus {
    Ok = 0,
    /// Invalid argument, scenario, or state.
    InvalidInput = 2,
    /// A crossing's outgoing subspace is path-dependent or non-convergent.
    Indeterminate = 3,
    /// Integration failed.
    IntegrationFailure = 4,
    /// Null pointer argument.
    NullPointer = 5,
    /// Degenerate constraint rows where independence is required.
    Degenerate = 6,
    /// Internal panic; the library state is still consistent.
    Panic = 7,
}

/// Momentum outcomes of [`nh_jump_probe`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NhDecision {
    NoJumpContained = 0,
    NoJumpCompatible = 1,
    Jump = 2,
}

/// Opaque mechanical system handle.
pub struct NhSystem {
    inner: MechanicalSystem,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(err: &Error) -> NhStatus {
    match err {
        Error::DegenerateConstraints { .. } => NhStatus::Degenerate,
        Error::LimitIndeterminate { .. } => NhStatus::Indeterminate,
        _ => NhStatus::InvalidInput,
    }
}

fn guarded(f: impl FnOnce() -> NhStatus + std::panic::UnwindSafe) -> NhStatus {
    match catch_unwind(f) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            NhStatus::Panic
        }
    }
}

/// Copy the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length in bytes.
///
/// # Safety
/// `buf` must point to `len` writable bytes, or be null (then only the
/// length is returned).
#[no_mangle]
pub unsafe extern "C" fn nh_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

fn emit_system(out: *mut *mut NhSystem, system: Result<MechanicalSystem, Error>) -> NhStatus {
    if out.is_null() {
        set_error("null output pointer");
        return NhStatus::NullPointer;
    }
    match system {
        Ok(inner) => {
            let handle = Box::new(NhSystem { inner });
            unsafe { *out = Box::into_raw(handle) };
            NhStatus::Ok
        }
        Err(e) => {
            set_error(e.to_string());
            status_of(&e)
        }
    }
}

/// Particle in the plane; free on `x <= 0`, velocity constrained to
/// `xdot = ydot` on `x > 0`.
///
/// # Safety
/// `out` must be a valid pointer to an `NhSystem*` slot.
#[no_mangle]
pub unsafe extern "C" fn nh_system_plane_particle(mass: f64, out: *mut *mut NhSystem) -> NhStatus {
    guarded(AssertUnwindSafe(|| {
        emit_system(out, nonholo::systems::plane_particle(mass))
    }))
}

/// Sphere on a half-smooth, half-rough plane; 5 coordinates
/// `(x, y, q1, q2, q3)`.
///
/// # Safety
/// `out` must be a valid pointer to an `NhSystem*` slot.
#[no_mangle]
pub unsafe extern "C" fn nh_system_rolling_sphere(
    radius: f64,
    gyration: f64,
    mass: f64,
    out: *mut *mut NhSystem,
) -> NhStatus {
    guarded(AssertUnwindSafe(|| {
        emit_system(
            out,
            nonholo::systems::rolling_sphere(nonholo::systems::SphereParams {
                radius,
                gyration,
                mass,
            }),
        )
    }))
}

/// Particle in 3-space under a central force with one curved constraint
/// row that collapses on the line `x = 0, z = y^2`.
///
/// # Safety
/// `out` must be a valid pointer to an `NhSystem*` slot.
#[no_mangle]
pub unsafe extern "C" fn nh_system_central_force(out: *mut *mut NhSystem) -> NhStatus {
    guarded(AssertUnwindSafe(|| {
        emit_system(out, Ok(nonholo::systems::central_force_particle()))
    }))
}

/// Release a system handle. Null is a no-op.
///
/// # Safety
/// `sys` must be a handle returned by one of the constructors, not yet
/// freed.
#[no_mangle]
pub unsafe extern "C" fn nh_system_free(sys: *mut NhSystem) {
    if !sys.is_null() {
        drop(Box::from_raw(sys));
    }
}

/// Chart dimension of the system; 0 for a null handle.
///
/// # Safety
/// `sys` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn nh_system_dim(sys: *const NhSystem) -> usize {
    if sys.is_null() {
        return 0;
    }
    (*sys).inner.dim()
}

unsafe fn slice_arg<'a>(ptr: *const f64, len: usize, what: &str) -> Result<&'a [f64], NhStatus> {
    if ptr.is_null() {
        set_error(format!("null pointer for {what}"));
        return Err(NhStatus::NullPointer);
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

/// Pointwise constraint rank at `q` (length `len = dim`).
///
/// # Safety
/// `sys` must be a live handle; `q` must point to `len` doubles;
/// `rank_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nh_rank_at(
    sys: *const NhSystem,
    q: *const f64,
    len: usize,
    rank_out: *mut usize,
) -> NhStatus {
    guarded(AssertUnwindSafe(|| {
        if sys.is_null() || rank_out.is_null() {
            set_error("null pointer argument");
            return NhStatus::NullPointer;
        }
        let system = &(*sys).inner;
        let q = match slice_arg(q, len, "q") {
            Ok(s) => s,
            Err(st) => return st,
        };
        if len != system.dim() {
            set_error(format!("q has length {len}, system dim {}", system.dim()));
            return NhStatus::InvalidInput;
        }
        match system
            .codistribution()
            .rank_at(&DVector::from_row_slice(q), 1e-9)
        {
            Ok(r) => {
                *rank_out = r;
                NhStatus::Ok
            }
            Err(e) => {
                set_error(e.to_string());
                status_of(&e)
            }
        }
    }))
}

/// Classify `q` by sampling ranks on a sphere of `radius`;
/// `is_singular_out` receives 0/1, `rank_out` the rank at `q`. Pass
/// `samples = 0` for the default `4 * dim`.
///
/// # Safety
/// Pointer arguments as in [`nh_rank_at`].
#[no_mangle]
pub unsafe extern "C" fn nh_classify_point(
    sys: *const NhSystem,
    q: *const f64,
    len: usize,
    radius: f64,
    samples: usize,
    is_singular_out: *mut i32,
    rank_out: *mut usize,
) -> NhStatus {
    guarded(AssertUnwindSafe(|| {
        if sys.is_null() || is_singular_out.is_null() || rank_out.is_null() {
            set_error("null pointer argument");
            return NhStatus::NullPointer;
        }
        let system = &(*sys).inner;
        let q = match slice_arg(q, len, "q") {
            Ok(s) => s,
            Err(st) => return st,
        };
        if len != system.dim() {
            set_error(format!("q has length {len}, system dim {}", system.dim()));
            return NhStatus::InvalidInput;
        }
        let mut opts = ClassifyOpts::for_dim(system.dim(), radius);
        if samples > 0 {
            opts.samples = samples;
        }
        match classify_point(system.codistribution(), &DVector::from_row_slice(q), &opts) {
            Ok(class) => {
                *is_singular_out = i32::from(class.is_singular());
                *rank_out = class.rank();
                NhStatus::Ok
            }
            Err(e) => {
                set_error(e.to_string());
                status_of(&e)
            }
        }
    }))
}

/// Total energy `T + U` at `(q, p)`.
///
/// # Safety
/// Pointer arguments as in [`nh_rank_at`].
#[no_mangle]
pub unsafe extern "C" fn nh_total_energy(
    sys: *const NhSystem,
    q: *const f64,
    p: *const f64,
    len: usize,
    energy_out: *mut f64,
) -> NhStatus {
    guarded(AssertUnwindSafe(|| {
        if sys.is_null() || energy_out.is_null() {
            set_error("null pointer argument");
            return NhStatus::NullPointer;
        }
        let system = &(*sys).inner;
        let (q, p) = match (slice_arg(q, len, "q"), slice_arg(p, len, "p")) {
            (Ok(q), Ok(p)) => (q, p),
            (Err(st), _) | (_, Err(st)) => return st,
        };
        if len != system.dim() {
            set_error(format!(
                "vectors have length {len}, system dim {}",
                system.dim()
            ));
            return NhStatus::InvalidInput;
        }
        let state = nonholo::dynamics::PhaseState::new(
            0.0,
            DVector::from_row_slice(q),
            DVector::from_row_slice(p),
        );
        match system.total_energy(&state) {
            Ok(e) => {
                *energy_out = e;
                NhStatus::Ok
            }
            Err(e) => {
                set_error(e.to_string());
                status_of(&e)
            }
        }
    }))
}

/// Resolve a potential crossing at `q` with incoming momentum `p_minus`
/// along ballistic one-sided continuations. On `Ok`, `p_plus_out` (length
/// `len`) holds the outgoing momentum, `delta_t_out` the kinetic-energy
/// drop, and `decision_out` the [`NhDecision`].
///
/// # Safety
/// `p_plus_out` must point to `len` writable doubles; other arguments as
/// in [`nh_rank_at`].
#[no_mangle]
pub unsafe extern "C" fn nh_jump_probe(
    sys: *const NhSystem,
    q: *const f64,
    p_minus: *const f64,
    len: usize,
    p_plus_out: *mut f64,
    delta_t_out: *mut f64,
    decision_out: *mut NhDecision,
) -> NhStatus {
    guarded(AssertUnwindSafe(|| {
        if sys.is_null() || p_plus_out.is_null() || delta_t_out.is_null() || decision_out.is_null()
        {
            set_error("null pointer argument");
            return NhStatus::NullPointer;
        }
        let system = &(*sys).inner;
        let (q, p) = match (slice_arg(q, len, "q"), slice_arg(p_minus, len, "p_minus")) {
            (Ok(q), Ok(p)) => (q, p),
            (Err(st), _) | (_, Err(st)) => return st,
        };
        if len != system.dim() {
            set_error(format!(
                "vectors have length {len}, system dim {}",
                system.dim()
            ));
            return NhStatus::InvalidInput;
        }
        let outcome = nonholo::scenario::probe(
            system,
            &DVector::from_row_slice(q),
            &DVector::from_row_slice(p),
            &[],
            &TransitionOpts::default(),
        );
        match outcome {
            Ok(CrossingOutcome::Resolved { report, .. }) => {
                for (i, x) in report.p_plus.iter().enumerate() {
                    *p_plus_out.add(i) = *x;
                }
                *delta_t_out = report.delta_t;
                *decision_out = match report.decision {
                    Decision::NoJumpContained => NhDecision::NoJumpContained,
                    Decision::NoJumpCompatible => NhDecision::NoJumpCompatible,
                    Decision::Jump | Decision::Impulse => NhDecision::Jump,
                };
                NhStatus::Ok
            }
            Ok(CrossingOutcome::Indeterminate(info)) => {
                set_error(format!("indeterminate crossing: {}", info.reason));
                NhStatus::Indeterminate
            }
            Err(e) => {
                set_error(e.to_string());
                status_of(&e)
            }
        }
    }))
}

/// Run a scenario file end to end, writing its outputs next to the file.
/// Status mirrors the CLI exit codes.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn nh_run_scenario(path: *const c_char) -> NhStatus {
    guarded(AssertUnwindSafe(|| {
        if path.is_null() {
            set_error("null scenario path");
            return NhStatus::NullPointer;
        }
        let path = match CStr::from_ptr(path).to_str() {
            Ok(s) => Path::new(s),
            Err(_) => {
                set_error("scenario path is not valid UTF-8");
                return NhStatus::InvalidInput;
            }
        };
        let run = (|| -> Result<RunStatus, Error> {
            let sc = load_scenario(path)?;
            let system = nonholo::scenario::build_system(&sc.system)?;
            let result = run_scenario(&sc)?;
            let dir = path.parent().unwrap_or(Path::new("."));
            let stem = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "scenario".to_string());
            nonholo::scenario::write_outputs(&sc, &system, &result, dir, &stem)?;
            Ok(result.status)
        })();
        match run {
            Ok(RunStatus::Completed) => NhStatus::Ok,
            Ok(RunStatus::IndeterminateCrossing(info)) => {
                set_error(format!("indeterminate crossing at t0 = {}", info.t0));
                NhStatus::Indeterminate
            }
            Ok(RunStatus::IntegrationFailure { t, reason }) => {
                set_error(format!("integration failed at t = {t}: {reason}"));
                NhStatus::IntegrationFailure
            }
            Err(e) => {
                set_error(e.to_string());
                status_of(&e)
            }
        }
    }))
}
