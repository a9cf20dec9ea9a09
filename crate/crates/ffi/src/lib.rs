//! C ABI over the simulator.
//!
//! Every fallible function returns an [`FoStatus`]; on failure a message is
//! available from [`fo_last_error_message`] on the same thread. Environments
//! are opaque handles created with [`fo_env_new`] and released with
//! [`fo_env_free`]. Panics never cross the boundary; they surface as
//! `FO_STATUS_INTERNAL`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use fedoffload::baselines::{knapsack_optimal, KnapsackInstance};
use fedoffload::device::Device;
use fedoffload::error::Error;
use fedoffload::simctl::{self, config};
use fedoffload::sysmodel::{self, JointAction, SystemParams};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FoStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidAction = 3,
    Infeasible = 4,
    DeadlineExceeded = 5,
    Validation = 6,
    Parse = 7,
    Io = 8,
    NonFinite = 9,
    Internal = 99,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> FoStatus {
    use fedoffload::error::TransmissionError as T;
    match err {
        Error::InvalidArgument(_) | Error::ShapeMismatch { .. } => FoStatus::InvalidArgument,
        Error::InvalidAction(_) => FoStatus::InvalidAction,
        Error::Transmission(T::Infeasible { .. }) => FoStatus::Infeasible,
        Error::Transmission(T::DeadlineExceeded { .. }) => FoStatus::DeadlineExceeded,
        Error::Validation(_) => FoStatus::Validation,
        Error::Parse(_) | Error::Json(_) | Error::Csv(_) => FoStatus::Parse,
        Error::Io { .. } => FoStatus::Io,
        Error::NonFinite(_) => FoStatus::NonFinite,
    }
}

/// Runs `f`, converting errors and panics into a status and stored message.
fn guard(f: impl FnOnce() -> Result<(), (FoStatus, String)>) -> FoStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FoStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "internal panic".into());
            set_error(msg);
            FoStatus::Internal
        }
    }
}

fn lift<T>(r: fedoffload::Result<T>) -> Result<T, (FoStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (FoStatus, String) {
    (FoStatus::NullPointer, format!("{what} is null"))
}

/// # Safety
/// `p` must be null or point to a NUL-terminated string.
unsafe fn opt_str<'a>(p: *const c_char, what: &str) -> Result<Option<&'a str>, (FoStatus, String)> {
    if p.is_null() {
        return Ok(None);
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Some)
        .map_err(|_| (FoStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn fo_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fo_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Opaque simulated device.
pub struct FoEnv {
    device: Device,
}

/// Observable state. `gains` holds `num_edge_nodes` values owned by the
/// handle; it stays valid until the next step or free.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FoState {
    pub task_queue: usize,
    pub energy_queue: usize,
    /// Associated edge node, 1-based.
    pub association: usize,
    pub num_edge_nodes: usize,
    pub gains: *const f64,
}

/// Result of one epoch.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct FoOutcome {
    pub delay: f64,
    pub handover: f64,
    pub transmission: f64,
    pub queuing: usize,
    pub drops: usize,
    pub payment: f64,
    pub completed: bool,
    pub energy_units_spent: usize,
    pub utility: f64,
}

impl From<sysmodel::EpochOutcome> for FoOutcome {
    fn from(o: sysmodel::EpochOutcome) -> Self {
        Self {
            delay: o.delay,
            handover: o.handover,
            transmission: o.transmission,
            queuing: o.queuing,
            drops: o.drops,
            payment: o.payment,
            completed: o.completed,
            energy_units_spent: o.energy_units_spent,
            utility: o.utility,
        }
    }
}

/// Summary of a finished experiment.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct FoSummary {
    pub final_window_mean_utility: f64,
    pub final_window_std: f64,
    pub energy_per_epoch_mean: f64,
    pub drops_per_epoch_mean: f64,
    pub rows: usize,
}

fn params_from(system_toml: *const c_char) -> Result<SystemParams, (FoStatus, String)> {
    match unsafe { opt_str(system_toml, "system_toml")? } {
        None => Ok(SystemParams::default()),
        Some(text) => lift(config::parse_system(text)),
    }
}

/// Creates a device environment.
///
/// `system_toml` holds `[system]` keys (e.g. `"p_t = 0.9\nq_e_max = 6"`) or
/// is null for the defaults. Streams are derived from `seed` and `device_id`
/// exactly as in full experiments.
///
/// # Safety
/// `system_toml` must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fo_env_new(
    system_toml: *const c_char,
    seed: u64,
    device_id: usize,
    out: *mut *mut FoEnv,
) -> FoStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let params = params_from(system_toml)?;
        let device = lift(Device::new(device_id, params, seed))?;
        *out = Box::into_raw(Box::new(FoEnv { device }));
        Ok(())
    })
}

/// Releases an environment; null is ignored.
///
/// # Safety
/// `env` must come from [`fo_env_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fo_env_free(env: *mut FoEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// Reads the current state.
///
/// # Safety
/// `env` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fo_env_state(env: *const FoEnv, out: *mut FoState) -> FoStatus {
    guard(|| {
        let env = env.as_ref().ok_or_else(|| null("env"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let s = env.device.env.state();
        *out = FoState {
            task_queue: s.q_t,
            energy_queue: s.q_e,
            association: s.assoc,
            num_edge_nodes: s.gains.len(),
            gains: s.gains.as_ptr(),
        };
        Ok(())
    })
}

/// Advances one epoch with offloading target `offload` (0 = local) and
/// `energy` units. `out` may be null.
///
/// # Safety
/// `env` must be a live handle; `out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn fo_env_step(env: *mut FoEnv, offload: usize, energy: usize, out: *mut FoOutcome) -> FoStatus {
    guard(|| {
        let env = env.as_mut().ok_or_else(|| null("env"))?;
        let outcome = lift(env.device.env.step(JointAction { offload, energy }))?;
        if !out.is_null() {
            *out = outcome.into();
        }
        Ok(())
    })
}

/// Local execution delay of the default task for `energy_joules`.
///
/// # Safety
/// `system_toml` null or NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fo_local_exec_delay(system_toml: *const c_char, energy_joules: f64, out: *mut f64) -> FoStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let p = params_from(system_toml)?;
        *out = lift(sysmodel::local_exec_delay(energy_joules, &p))?;
        Ok(())
    })
}

/// Transmission time of one task with `energy_joules` over a link of `gain`
/// under `interference`, leaving `handover_seconds` of the epoch unused.
///
/// # Safety
/// `system_toml` null or NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fo_transmission_time(
    system_toml: *const c_char,
    energy_joules: f64,
    gain: f64,
    interference: f64,
    handover_seconds: f64,
    out: *mut f64,
) -> FoStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let p = params_from(system_toml)?;
        *out = lift(sysmodel::solve_transmission_time(energy_joules, gain, interference, handover_seconds, &p))?;
        Ok(())
    })
}

/// Exact 0/1 knapsack. On success `out_value` holds the optimum and
/// `out_chosen[k]` is 1 for chosen tasks and 0 otherwise.
///
/// # Safety
/// `utilities` and `costs` must hold `n` values; `out_chosen` must have room
/// for `n` bytes; `out_value` writable.
#[no_mangle]
pub unsafe extern "C" fn fo_knapsack_optimal(
    utilities: *const f64,
    costs: *const usize,
    n: usize,
    budget: usize,
    out_value: *mut f64,
    out_chosen: *mut u8,
) -> FoStatus {
    guard(|| {
        if n > 0 && (utilities.is_null() || costs.is_null() || out_chosen.is_null()) {
            return Err(null("input array"));
        }
        if out_value.is_null() {
            return Err(null("out_value"));
        }
        let (u, c) = if n == 0 {
            (Vec::new(), Vec::new())
        } else {
            (
                std::slice::from_raw_parts(utilities, n).to_vec(),
                std::slice::from_raw_parts(costs, n).to_vec(),
            )
        };
        let inst = lift(KnapsackInstance::new(u, c, budget))?;
        let (value, chosen) = lift(knapsack_optimal(&inst))?;
        *out_value = value;
        if n > 0 {
            let flags = std::slice::from_raw_parts_mut(out_chosen, n);
            flags.fill(0);
            for k in chosen {
                flags[k] = 1;
            }
        }
        Ok(())
    })
}

/// Runs the experiment described by the configuration file at `config_path`,
/// writing its artifacts. `seed_override` replaces the configured seed when
/// `use_seed_override` is true. `out` may be null.
///
/// # Safety
/// `config_path` must be NUL-terminated; `out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn fo_run_experiment(
    config_path: *const c_char,
    use_seed_override: bool,
    seed_override: u64,
    out: *mut FoSummary,
) -> FoStatus {
    guard(|| {
        let path = opt_str(config_path, "config_path")?.ok_or_else(|| null("config_path"))?;
        let mut cfg = lift(config::load_config(Path::new(path)))?;
        if use_seed_override {
            cfg.seed = seed_override;
        }
        let result = lift(simctl::run(&cfg))?;
        if !out.is_null() {
            *out = FoSummary {
                final_window_mean_utility: result.summary.final_window_mean_utility,
                final_window_std: result.summary.final_window_std,
                energy_per_epoch_mean: result.summary.energy_per_epoch_mean,
                drops_per_epoch_mean: result.summary.drops_per_epoch_mean,
                rows: result.rows.len(),
            };
        }
        Ok(())
    })
}
