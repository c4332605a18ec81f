//! C ABI for the segmented particle filter on the linear-Gaussian model.
//!
//! Objects are opaque handles created by `*_new` and released by `*_free`.
//! Every fallible function returns a status code (`SEGPF_OK` on success) and
//! writes results through caller-provided pointers. The message for the most
//! recent failure on the calling thread is available from
//! `segpf_last_error`. Time indices are 0-based.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use segpf::{
    allocate_particles, kalman_filter, rts_smoother, Error, Functional, InitMode, LikelihoodForm, LinearGaussian,
    ModelParams, SegmentedFilter, SegmentedRun, StreamSeed, WeightRule,
};

pub const SEGPF_OK: i32 = 0;
pub const SEGPF_NULL_POINTER: i32 = 1;
pub const SEGPF_INVALID_ARGUMENT: i32 = 2;
/// Weights or boundary factors vanished, or an initializer failed to cover
/// the model's transitions.
pub const SEGPF_NUMERICAL: i32 = 3;
pub const SEGPF_PANIC: i32 = 4;

pub const SEGPF_INIT_PRIOR: i32 = 0;
pub const SEGPF_INIT_FIXED: i32 = 1;
pub const SEGPF_INIT_ESTIMATED: i32 = 2;
pub const SEGPF_INIT_PREDICTOR: i32 = 3;

pub const SEGPF_FORM_CHAIN: i32 = 0;
pub const SEGPF_FORM_PRODUCT: i32 = 1;

/// Linear-Gaussian model handle.
pub struct SegpfModel(LinearGaussian);

/// Outputs of one segmented run.
pub struct SegpfRun(SegmentedRun);

/// How segments after the first are initialized. `mean` and `var` are used
/// by `SEGPF_INIT_FIXED`; `window` and `aux_particles` by
/// `SEGPF_INIT_ESTIMATED`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SegpfInit {
    pub kind: i32,
    pub mean: f64,
    pub var: f64,
    pub window: usize,
    pub aux_particles: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> i32 {
    match e {
        Error::InvalidParams(_) | Error::InvalidConfig(_) | Error::DimensionMismatch(_) => SEGPF_INVALID_ARGUMENT,
        Error::DegenerateWeights { .. }
        | Error::DominanceViolation { .. }
        | Error::DegenerateJoin { .. }
        | Error::ZeroPairProbability(..) => SEGPF_NUMERICAL,
    }
}

enum Failure {
    Null(&'static str),
    Invalid(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

/// Run `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SEGPF_OK,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            SEGPF_NULL_POINTER
        }
        Ok(Err(Failure::Invalid(msg))) => {
            set_error(msg);
            SEGPF_INVALID_ARGUMENT
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            SEGPF_PANIC
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn write<T>(p: *mut T, v: T, what: &'static str) -> Result<(), Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    p.write(v);
    Ok(())
}

/// Message for the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn segpf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Create a model `X_t = a X_{t-1} + e_t`, `Y_t = X_t + n_t` with stationary
/// variance `sigma_x2` and noise variance `sigma_y2`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn segpf_model_new(a: f64, sigma_x2: f64, sigma_y2: f64, out: *mut *mut SegpfModel) -> i32 {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let model = LinearGaussian::new(ModelParams::new(a, sigma_x2, sigma_y2)?)?;
        write(out, Box::into_raw(Box::new(SegpfModel(model))), "out")
    })
}

/// # Safety
/// `model` must be null or a handle from `segpf_model_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn segpf_model_free(model: *mut SegpfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Simulate `len` states and observations from `seed`. Either output may
/// be null if not wanted.
///
/// # Safety
/// Non-null outputs must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn segpf_model_simulate(
    model: *const SegpfModel,
    seed: u64,
    len: usize,
    states_out: *mut f64,
    observations_out: *mut f64,
) -> i32 {
    guard(|| {
        let model = &as_ref(model, "model")?.0;
        let (xs, ys) = segpf::simulate_hmm(*model.params(), len, seed)?;
        if !states_out.is_null() {
            slice_mut(states_out, len, "states_out")?.copy_from_slice(&xs);
        }
        if !observations_out.is_null() {
            slice_mut(observations_out, len, "observations_out")?.copy_from_slice(&ys);
        }
        Ok(())
    })
}

/// Exact log-likelihood of `observations` from the Kalman filter.
///
/// # Safety
/// `observations` must point to `len` doubles and `out` to one.
#[no_mangle]
pub unsafe extern "C" fn segpf_kalman_log_likelihood(
    model: *const SegpfModel,
    observations: *const f64,
    len: usize,
    out: *mut f64,
) -> i32 {
    guard(|| {
        let model = &as_ref(model, "model")?.0;
        let ys = slice(observations, len, "observations")?;
        let kf = kalman_filter(model.params(), ys)?;
        write(out, kf.log_likelihood, "out")
    })
}

/// Exact smoothed means `E(X_u | all observations)` for every `u`.
///
/// # Safety
/// `observations` must point to `len` doubles and `means_out` to `len`
/// writable doubles.
#[no_mangle]
pub unsafe extern "C" fn segpf_kalman_smoothed_means(
    model: *const SegpfModel,
    observations: *const f64,
    len: usize,
    means_out: *mut f64,
) -> i32 {
    guard(|| {
        let model = &as_ref(model, "model")?.0;
        let ys = slice(observations, len, "observations")?;
        let sm = rts_smoother(model.params(), &kalman_filter(model.params(), ys)?);
        slice_mut(means_out, len, "means_out")?.copy_from_slice(&sm.mean);
        Ok(())
    })
}

fn init_mode(init: SegpfInit) -> Result<InitMode, Failure> {
    Ok(match init.kind {
        SEGPF_INIT_PRIOR => InitMode::Prior,
        SEGPF_INIT_FIXED => InitMode::Fixed { mean: init.mean, var: init.var },
        SEGPF_INIT_ESTIMATED => {
            InitMode::Estimated { window: init.window, aux_particles: init.aux_particles, var_floor: 1e-12 }
        }
        SEGPF_INIT_PREDICTOR => InitMode::Predictor,
        k => return Err(Failure::Invalid(format!("unknown initializer kind {k}"))),
    })
}

/// Run `segments` independent filters over the first `len` observations
/// (which must divide evenly) and join them. `particles` holds one count
/// per segment.
///
/// # Safety
/// `observations` must point to `len` doubles, `particles` to `segments`
/// counts and `out` to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn segpf_run_new(
    model: *const SegpfModel,
    observations: *const f64,
    len: usize,
    segments: usize,
    particles: *const usize,
    init: SegpfInit,
    seed: u64,
    out: *mut *mut SegpfRun,
) -> i32 {
    guard(|| {
        let model = &as_ref(model, "model")?.0;
        let ys = slice(observations, len, "observations")?;
        let ks = slice(particles, segments, "particles")?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let filter =
            SegmentedFilter { horizon: len, particles: ks.to_vec(), init: init_mode(init)?, weight: WeightRule::Ratio };
        let run = filter.run(model, ys, StreamSeed(seed))?;
        run.join()?;
        write(out, Box::into_raw(Box::new(SegpfRun(run))), "out")
    })
}

/// # Safety
/// `run` must be null or a handle from `segpf_run_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn segpf_run_free(run: *mut SegpfRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Number of segments in `run`, or 0 for a null handle.
///
/// # Safety
/// `run` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn segpf_run_segment_count(run: *const SegpfRun) -> usize {
    run.as_ref().map_or(0, |r| r.0.segments.len())
}

/// Log of the unbiased likelihood estimate, in `SEGPF_FORM_CHAIN` or
/// `SEGPF_FORM_PRODUCT` form (identical for up to two segments).
///
/// # Safety
/// `run` must be a live handle and `out` must point to one double.
#[no_mangle]
pub unsafe extern "C" fn segpf_run_log_likelihood(run: *const SegpfRun, form: i32, out: *mut f64) -> i32 {
    guard(|| {
        let run = &as_ref(run, "run")?.0;
        let form = match form {
            SEGPF_FORM_CHAIN => LikelihoodForm::Chain,
            SEGPF_FORM_PRODUCT => LikelihoodForm::Product,
            f => return Err(Failure::Invalid(format!("unknown likelihood form {f}"))),
        };
        write(out, run.join()?.log_likelihood(form)?, "out")
    })
}

/// Estimate of `E(X_u | observations)` and its in-sample standard error.
/// `sigma2_out` may be null; otherwise it receives one per-filter variance
/// estimate per segment.
///
/// # Safety
/// `run` must be a live handle, `estimate_out` and `stderr_out` must point
/// to one double each, and a non-null `sigma2_out` to one per segment.
#[no_mangle]
pub unsafe extern "C" fn segpf_run_latent_estimate(
    run: *const SegpfRun,
    u: usize,
    estimate_out: *mut f64,
    stderr_out: *mut f64,
    sigma2_out: *mut f64,
) -> i32 {
    guard(|| {
        let run = &as_ref(run, "run")?.0;
        let join = run.join()?;
        if u >= join.horizon() {
            return Err(Failure::Invalid(format!("stage {u} outside 0..{}", join.horizon())));
        }
        let psi = Functional::Coordinate(u);
        let est = join.latent_estimate(&psi)?;
        let var = join.variance_estimate(&psi, est)?;
        write(estimate_out, est, "estimate_out")?;
        write(stderr_out, var.stderr, "stderr_out")?;
        if !sigma2_out.is_null() {
            slice_mut(sigma2_out, var.sigma2.len(), "sigma2_out")?.copy_from_slice(&var.sigma2);
        }
        Ok(())
    })
}

/// Split `budget` particles over `n` filters in proportion to the square
/// roots of `sigma2` (at least 2 each).
///
/// # Safety
/// `sigma2` must point to `n` doubles and `out` to `n` writable counts.
#[no_mangle]
pub unsafe extern "C" fn segpf_allocate_particles(sigma2: *const f64, n: usize, budget: usize, out: *mut usize) -> i32 {
    guard(|| {
        let s = slice(sigma2, n, "sigma2")?;
        let alloc = allocate_particles(s, budget)?;
        slice_mut(out, n, "out")?.copy_from_slice(&alloc);
        Ok(())
    })
}
