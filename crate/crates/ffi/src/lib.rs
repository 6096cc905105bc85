//! C ABI for driving the grid solver from other languages.
//!
//! Every function returns a [`ChtStatus`]; on failure a message is kept per
//! thread and can be fetched with [`cht_last_error`]. Handles are opaque
//! and must be released with [`cht_sim_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};

use chtumor::config::{parse_config, RunConfig};
use chtumor::semigroup::mode_block;
use chtumor::solver::{energy, run, EnergyReport, ModelParams, RunOptions, SolverError, State};
use chtumor::spectral::Field;
use chtumor::stationary::{constant_roots, RootOptions};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Solver = 4,
    StepRejected = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Scalar diagnostics of the current state.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ChtEnergy {
    pub t: f64,
    pub dt_used: f64,
    pub energy: f64,
    pub mass: f64,
    pub phi_min: f64,
    pub phi_max: f64,
    /// `D_mu + D_N + D_exchange` of the last step.
    pub dissipation: f64,
}

impl From<&EnergyReport> for ChtEnergy {
    fn from(r: &EnergyReport) -> Self {
        Self {
            t: r.t,
            dt_used: r.dt_used,
            energy: r.energy,
            mass: r.mass,
            phi_min: r.phi_min,
            phi_max: r.phi_max,
            dissipation: r.dissipation(),
        }
    }
}

/// Opaque simulation handle.
pub struct ChtSim {
    params: ModelParams,
    opts: RunOptions,
    state: State,
    last: EnergyReport,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn fail(status: ChtStatus, message: impl Into<String>) -> ChtStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = message.into());
    status
}

fn guarded(f: impl FnOnce() -> ChtStatus) -> ChtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(ChtStatus::Panic, "internal panic"),
    }
}

fn solver_status(e: SolverError) -> ChtStatus {
    let status = match e {
        SolverError::StepRejected { .. } => ChtStatus::StepRejected,
        _ => ChtStatus::Solver,
    };
    fail(status, e.to_string())
}

/// Null-terminated crate version; static storage.
#[no_mangle]
pub extern "C" fn cht_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the last error message of this thread into `buf` (truncated,
/// always terminated when `cap > 0`). Returns the full length including
/// the terminator.
///
/// # Safety
/// `buf` must be null or point to `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn cht_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        bytes.len() + 1
    })
}

fn build(cfg: &RunConfig) -> Result<ChtSim, ChtStatus> {
    let grid = cfg.build_grid().map_err(|e| fail(ChtStatus::Config, e.to_string()))?;
    let params = cfg.params().map_err(|e| fail(ChtStatus::Config, e.to_string()))?;
    let state = cfg.initial_data().generate(&grid);
    let last = energy(&state, &params);
    Ok(ChtSim {
        params,
        opts: cfg.run_options(),
        state,
        last,
    })
}

unsafe fn emit(out: *mut *mut ChtSim, cfg: &RunConfig) -> ChtStatus {
    match build(cfg) {
        Ok(sim) => {
            *out = Box::into_raw(Box::new(sim));
            ChtStatus::Ok
        }
        Err(s) => s,
    }
}

/// Simulation with the default configuration and the given seed.
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn cht_sim_new_default(seed: u64, out: *mut *mut ChtSim) -> ChtStatus {
    if out.is_null() {
        return fail(ChtStatus::NullPointer, "out is null");
    }
    guarded(|| emit(out, &RunConfig::default().with_seed(seed)))
}

/// Simulation from a TOML run configuration.
///
/// # Safety
/// `toml` must be a null-terminated UTF-8 string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cht_sim_new_from_toml(toml: *const c_char, out: *mut *mut ChtSim) -> ChtStatus {
    if toml.is_null() || out.is_null() {
        return fail(ChtStatus::NullPointer, "argument is null");
    }
    guarded(|| {
        let text = match CStr::from_ptr(toml).to_str() {
            Ok(t) => t,
            Err(e) => return fail(ChtStatus::InvalidArgument, format!("config is not UTF-8: {e}")),
        };
        match parse_config(text) {
            Ok(loaded) => emit(out, &loaded.config),
            Err(e) => fail(ChtStatus::Config, e.to_string()),
        }
    })
}

/// # Safety
/// `sim` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cht_sim_free(sim: *mut ChtSim) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

unsafe fn with_sim(sim: *mut ChtSim, f: impl FnOnce(&mut ChtSim) -> ChtStatus) -> ChtStatus {
    match sim.as_mut() {
        Some(s) => guarded(|| f(s)),
        None => fail(ChtStatus::NullPointer, "sim is null"),
    }
}

/// Advances by `duration` in steps of the configured `dt`.
///
/// # Safety
/// `sim` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cht_sim_advance(sim: *mut ChtSim, duration: f64) -> ChtStatus {
    with_sim(sim, |s| {
        if !(duration.is_finite() && duration >= 0.0) {
            return fail(ChtStatus::InvalidArgument, format!("duration {duration}"));
        }
        match run(&s.state, &s.params, duration, &s.opts) {
            Ok(summary) => {
                s.last = *summary.reports.last().expect("initial report");
                s.state = summary.final_state;
                ChtStatus::Ok
            }
            Err(e) => solver_status(e),
        }
    })
}

/// Takes `n` steps of the configured `dt`.
///
/// # Safety
/// `sim` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cht_sim_step(sim: *mut ChtSim, n: u64) -> ChtStatus {
    let dt = match sim.as_ref() {
        Some(s) => s.opts.dt,
        None => return fail(ChtStatus::NullPointer, "sim is null"),
    };
    cht_sim_advance(sim, dt * n as f64)
}

/// # Safety
/// `sim` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn cht_sim_energy(sim: *mut ChtSim, out: *mut ChtEnergy) -> ChtStatus {
    if out.is_null() {
        return fail(ChtStatus::NullPointer, "out is null");
    }
    with_sim(sim, |s| {
        *out = ChtEnergy::from(&s.last);
        ChtStatus::Ok
    })
}

/// Number of grid nodes per field, 0 for a null handle.
///
/// # Safety
/// `sim` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cht_sim_len(sim: *const ChtSim) -> usize {
    sim.as_ref().map_or(0, |s| s.state.phi.values().len())
}

/// Copies the nodal values (row-major) into caller buffers of `cap` doubles.
///
/// # Safety
/// `phi` and `sigma` must point to `cap` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn cht_sim_copy_fields(sim: *mut ChtSim, phi: *mut f64, sigma: *mut f64, cap: usize) -> ChtStatus {
    if phi.is_null() || sigma.is_null() {
        return fail(ChtStatus::NullPointer, "buffer is null");
    }
    with_sim(sim, |s| {
        let n = s.state.phi.values().len();
        if cap < n {
            return fail(ChtStatus::BufferTooSmall, format!("need {n} values, got {cap}"));
        }
        std::ptr::copy_nonoverlapping(s.state.phi.values().as_ptr(), phi, n);
        std::ptr::copy_nonoverlapping(s.state.sigma.values().as_ptr(), sigma, n);
        ChtStatus::Ok
    })
}

/// Replaces the state (time is kept) with `len` row-major values per field.
///
/// # Safety
/// `phi` and `sigma` must point to `len` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn cht_sim_set_fields(sim: *mut ChtSim, phi: *const f64, sigma: *const f64, len: usize) -> ChtStatus {
    if phi.is_null() || sigma.is_null() {
        return fail(ChtStatus::NullPointer, "buffer is null");
    }
    with_sim(sim, |s| {
        let grid = s.state.grid().clone();
        let take = |p: *const f64| Field::new(grid.clone(), std::slice::from_raw_parts(p, len).to_vec());
        let (f, g) = match (take(phi), take(sigma)) {
            (Ok(f), Ok(g)) => (f, g),
            (Err(e), _) | (_, Err(e)) => return fail(ChtStatus::InvalidArgument, e.to_string()),
        };
        s.state = State { t: s.state.t, phi: f, sigma: g };
        s.last = energy(&s.state, &s.params);
        ChtStatus::Ok
    })
}

/// Constant stationary states `phi = c` at mean mass `m` for the default
/// potential and proliferation. Writes up to `cap` roots, ascending, and
/// their total number to `count`.
///
/// # Safety
/// `out` must point to `cap` writable doubles and `count` be valid.
#[no_mangle]
pub unsafe extern "C" fn cht_constant_roots(
    m: f64,
    chi_phi: f64,
    chi_sigma: f64,
    out: *mut f64,
    cap: usize,
    count: *mut usize,
) -> ChtStatus {
    if count.is_null() || (out.is_null() && cap > 0) {
        return fail(ChtStatus::NullPointer, "buffer is null");
    }
    if !(chi_sigma > 0.0 && chi_phi >= 0.0 && m.is_finite()) {
        return fail(ChtStatus::InvalidArgument, "need chi_sigma > 0, chi_phi >= 0 and finite m");
    }
    guarded(|| {
        let params = ModelParams { chi_phi, chi_sigma, ..ModelParams::default() };
        let roots = constant_roots(m, &params, &RootOptions::default());
        *count = roots.len();
        for (i, r) in roots.iter().take(cap).enumerate() {
            *out.add(i) = *r;
        }
        if cap < roots.len() {
            return fail(ChtStatus::BufferTooSmall, format!("{} roots", roots.len()));
        }
        ChtStatus::Ok
    })
}

/// Largest eigenvalue of the linearised 2x2 block for eigenvalue `lambda`.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn cht_mode_abscissa(lambda: f64, chi_phi: f64, chi_sigma: f64, r1: f64, out: *mut f64) -> ChtStatus {
    if out.is_null() {
        return fail(ChtStatus::NullPointer, "out is null");
    }
    match mode_block(lambda, chi_phi, chi_sigma, r1) {
        Ok(b) => {
            *out = b.spectral_abscissa;
            ChtStatus::Ok
        }
        Err(e) => fail(ChtStatus::InvalidArgument, e.to_string()),
    }
}
