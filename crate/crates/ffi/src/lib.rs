//! C ABI over the ratchet simulator, the handcrafted baselines and trained
//! policy checkpoints.
//!
//! Every fallible call returns a [`RatchetStatus`]; on failure the message is
//! available from [`ratchet_last_error`] on the same thread. Handles are
//! opaque and must be released with their `_free` function. No call panics
//! across the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use libc::size_t;
use ratchet::baselines::{greedy_policy, mean_force};
use ratchet::bench::{evaluate, member_env, EvalBudget, PolicySpec};
use ratchet::physics::{DelayedEnv, PotentialKind, RatchetParams, Switch};
use ratchet::policy::{load_checkpoint, Network, ObsBatch};
use ratchet::rng::StreamRng;
use ratchet::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RatchetStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    NonFinite = 3,
    Incompatible = 4,
    Checkpoint = 5,
    Io = 6,
    Internal = 7,
}

/// Potential shape selector.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RatchetPotential {
    Smooth = 0,
    Sawtooth = 1,
}

/// Handcrafted policies for [`ratchet_evaluate_baseline`]. Parameters `a`
/// and `b` are `(t_on, t_off)` for periodic, `(u_on, u_off)` for threshold
/// and `(x0, unused)` for MND; the others ignore them.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RatchetBaseline {
    Off = 0,
    On = 1,
    Periodic = 2,
    Greedy = 3,
    Threshold = 4,
    Mnd = 5,
}

/// Ensemble statistics of an evaluation.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RatchetReport {
    pub current_mean: f64,
    pub current_std: f64,
    pub std_error: f64,
    pub ensemble: size_t,
}

/// One ensemble member: particles, delay queue and its noise stream.
pub struct RatchetSim {
    env: DelayedEnv,
    rng: StreamRng,
}

/// A trained policy network loaded from a checkpoint.
pub struct RatchetPolicy {
    net: Network,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    // interior NULs would truncate the message; replace them
    let msg = CString::new(msg.replace('\0', "?")).expect("NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(e: &Error) -> RatchetStatus {
    match e {
        Error::InvalidParameter(_) | Error::Config { .. } | Error::Shape { .. } => {
            RatchetStatus::InvalidArgument
        }
        Error::NonFinite(_) => RatchetStatus::NonFinite,
        Error::Incompatible(_) => RatchetStatus::Incompatible,
        Error::Checkpoint(_) => RatchetStatus::Checkpoint,
        Error::Io { .. } => RatchetStatus::Io,
        _ => RatchetStatus::Internal,
    }
}

/// Runs `f`, mapping errors and panics to status codes.
fn guard(f: impl FnOnce() -> Result<(), (RatchetStatus, String)>) -> RatchetStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RatchetStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            RatchetStatus::Internal
        }
    }
}

fn lift(e: Error) -> (RatchetStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (RatchetStatus, String) {
    (RatchetStatus::NullPointer, format!("{what} is null"))
}

fn params_for(potential: RatchetPotential) -> RatchetParams {
    RatchetParams::with_potential(match potential {
        RatchetPotential::Smooth => PotentialKind::Smooth,
        RatchetPotential::Sawtooth => PotentialKind::Sawtooth,
    })
}

fn switch_of(alpha: u8) -> Result<Switch, (RatchetStatus, String)> {
    Switch::from_u8(alpha).map_err(lift)
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ratchet_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ratchet_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates ensemble member `member` of the ensemble seeded by `seed`: the
/// same initial positions and noise as the evaluation harness uses.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn ratchet_sim_new(
    n: size_t,
    tau: f64,
    potential: RatchetPotential,
    seed: u64,
    member: u64,
    out: *mut *mut RatchetSim,
) -> RatchetStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let params = params_for(potential);
        if n == 0 {
            return Err((RatchetStatus::InvalidArgument, "n must be >= 1".into()));
        }
        let (env, rng) = member_env(n, tau, &params, seed, member).map_err(lift)?;
        *out = Box::into_raw(Box::new(RatchetSim { env, rng }));
        Ok(())
    })
}

/// Releases a simulator; null is ignored.
///
/// # Safety
/// `sim` must come from [`ratchet_sim_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ratchet_sim_free(sim: *mut RatchetSim) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Requests potential state `alpha` (0 off, 1 on) and advances one time
/// step. With a delay the applied state is the one requested `tau` earlier.
/// Writes the mean displacement of the step to `displacement` if non-null.
///
/// # Safety
/// `sim` must be a live handle; `displacement` may be null.
#[no_mangle]
pub unsafe extern "C" fn ratchet_sim_step(
    sim: *mut RatchetSim,
    alpha: u8,
    displacement: *mut f64,
) -> RatchetStatus {
    guard(|| {
        let sim = sim.as_mut().ok_or_else(|| null("sim"))?;
        let a = switch_of(alpha)?;
        let d = sim.env.step(a, &mut sim.rng).map_err(lift)?;
        if !displacement.is_null() {
            *displacement = d;
        }
        Ok(())
    })
}

/// Particle count of `sim`.
///
/// # Safety
/// `sim` must be a live handle and `n` writable.
#[no_mangle]
pub unsafe extern "C" fn ratchet_sim_n(sim: *const RatchetSim, n: *mut size_t) -> RatchetStatus {
    guard(|| {
        let sim = sim.as_ref().ok_or_else(|| null("sim"))?;
        let n = n.as_mut().ok_or_else(|| null("n"))?;
        *n = sim.env.state.n();
        Ok(())
    })
}

/// Elapsed simulated time.
///
/// # Safety
/// `sim` must be a live handle and `t` writable.
#[no_mangle]
pub unsafe extern "C" fn ratchet_sim_time(sim: *const RatchetSim, t: *mut f64) -> RatchetStatus {
    guard(|| {
        let sim = sim.as_ref().ok_or_else(|| null("sim"))?;
        let t = t.as_mut().ok_or_else(|| null("t"))?;
        *t = sim.env.state.time();
        Ok(())
    })
}

/// Copies the (unwrapped) particle positions into `buf`, which must hold
/// `len >= n` values.
///
/// # Safety
/// `sim` must be a live handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn ratchet_sim_positions(
    sim: *const RatchetSim,
    buf: *mut f64,
    len: size_t,
) -> RatchetStatus {
    guard(|| {
        let sim = sim.as_ref().ok_or_else(|| null("sim"))?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let pos = &sim.env.state.positions;
        if len < pos.len() {
            return Err((
                RatchetStatus::InvalidArgument,
                format!("buffer holds {len} values, need {}", pos.len()),
            ));
        }
        ptr::copy_nonoverlapping(pos.as_ptr(), buf, pos.len());
        Ok(())
    })
}

/// Greedy decision for the current state: 1 when the mean force is
/// positive.
///
/// # Safety
/// `sim` must be a live handle and `alpha` writable.
#[no_mangle]
pub unsafe extern "C" fn ratchet_sim_greedy(sim: *const RatchetSim, alpha: *mut u8) -> RatchetStatus {
    guard(|| {
        let sim = sim.as_ref().ok_or_else(|| null("sim"))?;
        let alpha = alpha.as_mut().ok_or_else(|| null("alpha"))?;
        *alpha = greedy_policy(&sim.env.state.positions, &sim.env.params) as u8;
        Ok(())
    })
}

/// Mean force `(1/N) Σ F(x_i)` of the potential at `positions`.
///
/// # Safety
/// `positions` must be valid for `n` reads and `force` writable.
#[no_mangle]
pub unsafe extern "C" fn ratchet_mean_force(
    positions: *const f64,
    n: size_t,
    potential: RatchetPotential,
    force: *mut f64,
) -> RatchetStatus {
    guard(|| {
        if positions.is_null() {
            return Err(null("positions"));
        }
        let force = force.as_mut().ok_or_else(|| null("force"))?;
        if n == 0 {
            return Err((RatchetStatus::InvalidArgument, "n must be >= 1".into()));
        }
        let xs = std::slice::from_raw_parts(positions, n);
        *force = mean_force(xs, &params_for(potential));
        Ok(())
    })
}

/// Loads a policy checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ratchet_policy_load(
    path: *const c_char,
    out: *mut *mut RatchetPolicy,
) -> RatchetStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| (RatchetStatus::InvalidArgument, "path is not UTF-8".to_string()))?;
        let ck = load_checkpoint(Path::new(path)).map_err(lift)?;
        *out = Box::into_raw(Box::new(RatchetPolicy { net: ck.policy }));
        Ok(())
    })
}

/// Releases a policy; null is ignored.
///
/// # Safety
/// `policy` must come from [`ratchet_policy_load`] and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn ratchet_policy_free(policy: *mut RatchetPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Probability of switching on in the current state of `sim`.
///
/// # Safety
/// Both handles must be live and `p_on` writable.
#[no_mangle]
pub unsafe extern "C" fn ratchet_policy_p_on(
    policy: *const RatchetPolicy,
    sim: *const RatchetSim,
    p_on: *mut f64,
) -> RatchetStatus {
    guard(|| {
        let policy = policy.as_ref().ok_or_else(|| null("policy"))?;
        let sim = sim.as_ref().ok_or_else(|| null("sim"))?;
        let p_on = p_on.as_mut().ok_or_else(|| null("p_on"))?;
        let mut batch = ObsBatch::new(sim.env.state.n(), sim.env.depth());
        batch.push_env(&sim.env).map_err(lift)?;
        let out = policy.net.policy_outputs(&batch).map_err(lift)?;
        *p_on = out[0].p_on;
        Ok(())
    })
}

fn write_report(
    spec: &PolicySpec,
    n: size_t,
    tau: f64,
    potential: RatchetPotential,
    budget: EvalBudget,
    out: &mut RatchetReport,
) -> Result<(), (RatchetStatus, String)> {
    let r = evaluate(spec, n, tau, &params_for(potential), &budget).map_err(lift)?;
    *out = RatchetReport {
        current_mean: r.current_mean,
        current_std: r.current_std,
        std_error: r.std_error(),
        ensemble: r.ensemble,
    };
    Ok(())
}

/// Ensemble current of a handcrafted policy; identical to the command line
/// `simulate` for the same inputs.
///
/// # Safety
/// `report` must be writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn ratchet_evaluate_baseline(
    kind: RatchetBaseline,
    a: f64,
    b: f64,
    n: size_t,
    tau: f64,
    potential: RatchetPotential,
    duration: f64,
    ensemble: size_t,
    seed: u64,
    report: *mut RatchetReport,
) -> RatchetStatus {
    guard(|| {
        let report = report.as_mut().ok_or_else(|| null("report"))?;
        let spec = match kind {
            RatchetBaseline::Off => PolicySpec::Off,
            RatchetBaseline::On => PolicySpec::On,
            RatchetBaseline::Periodic => PolicySpec::Periodic { t_on: a, t_off: b },
            RatchetBaseline::Greedy => PolicySpec::Greedy,
            RatchetBaseline::Threshold => PolicySpec::Threshold { u_on: a, u_off: b },
            RatchetBaseline::Mnd => PolicySpec::Mnd { x0: a },
        };
        write_report(&spec, n, tau, potential, EvalBudget { duration, ensemble, seed }, report)
    })
}

/// Ensemble current of a trained policy acting deterministically.
///
/// # Safety
/// `policy` must be a live handle and `report` writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn ratchet_evaluate_policy(
    policy: *const RatchetPolicy,
    n: size_t,
    tau: f64,
    potential: RatchetPotential,
    duration: f64,
    ensemble: size_t,
    seed: u64,
    report: *mut RatchetReport,
) -> RatchetStatus {
    guard(|| {
        let policy = policy.as_ref().ok_or_else(|| null("policy"))?;
        let report = report.as_mut().ok_or_else(|| null("report"))?;
        let spec = PolicySpec::network(policy.net.clone());
        write_report(&spec, n, tau, potential, EvalBudget { duration, ensemble, seed }, report)
    })
}
