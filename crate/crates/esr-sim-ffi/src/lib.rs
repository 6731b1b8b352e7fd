//! C ABI for the driven spin-qubit simulator.
//!
//! Conventions
//! * Every fallible call returns an [`EsrStatus`]; results travel through out
//!   pointers. `ESR_STATUS_OK` is 0.
//! * [`esr_last_error_message`] returns a thread-local, NUL-terminated
//!   description of the most recent failure on this thread.
//! * Opaque handles ([`EsrBath`], [`EsrSpectralDensity`]) are created and
//!   released by matching `_new`/`_free` pairs; they are plain heap objects,
//!   safe to move across threads but not to share mutably.
//! * Units match the Rust API: ordinary frequencies in MHz, decay rates in
//!   MHz (1 MHz = 1/µs), times in ns, phases in rad.
//!
//! The companion header `include/esr_sim.h` is regenerated by cbindgen on
//! every build.

// Guards of the form `!(x > 0.0)` intentionally reject NaN inputs.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};

use esr_sim::bath::{default_species, spectral_density, NuclearSpeciesConfig, SpectralDensity};
use esr_sim::relaxation::{
    self_consistent_rate, DEFAULT_FIXED_POINT_MAX_ITER, DEFAULT_FIXED_POINT_TOL,
};
use esr_sim::sequence::{run_rabi, run_ramsey, OverhauserEnsemble};
use esr_sim::spin::{analytic_rabi, Gamma1Model, NuclearRateMode, RelaxationParams};
use esr_sim::waveform::{effective_esr_rabi, power_to_rabi_with_slope, RamanParams};

/// Call outcome; anything but `Ok` leaves a message for
/// [`esr_last_error_message`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EsrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ComputeError = 3,
    Utf8Error = 4,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(msg.replace('\0', " ")).unwrap();
    });
}

/// Description of the most recent failure on the calling thread. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn esr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn esr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

unsafe fn write_out(out: *mut f64, value: f64) -> EsrStatus {
    if out.is_null() {
        set_error("out pointer is NULL");
        return EsrStatus::NullPointer;
    }
    unsafe { *out = value };
    EsrStatus::Ok
}

/// Closed-form resonant Rabi population ρ↑↑(t) with depolarizing decay Γ₁.
///
/// # Safety
/// `out` must be a valid writable pointer.
#[no_mangle]
pub unsafe extern "C" fn esr_analytic_rabi(
    omega_mhz: f64,
    gamma1_mhz: f64,
    t_ns: f64,
    out: *mut f64,
) -> EsrStatus {
    match analytic_rabi(omega_mhz, gamma1_mhz, t_ns) {
        Ok(v) => unsafe { write_out(out, v) },
        Err(e) => {
            set_error(e.to_string());
            EsrStatus::InvalidArgument
        }
    }
}

/// π-rotation fidelity ½(1 + e^{-1/Q}).
///
/// # Safety
/// `out` must be a valid writable pointer.
#[no_mangle]
pub unsafe extern "C" fn esr_pi_fidelity(q: f64, out: *mut f64) -> EsrStatus {
    if !(q > 0.0) {
        set_error("q must be > 0");
        return EsrStatus::InvalidArgument;
    }
    unsafe { write_out(out, esr_sim::analysis::pi_fidelity(q)) }
}

/// Q factor τ/t_π for a 1/e time τ (ns) at drive Ω (MHz).
///
/// # Safety
/// `out` must be a valid writable pointer.
#[no_mangle]
pub unsafe extern "C" fn esr_q_factor(tau_ns: f64, omega_mhz: f64, out: *mut f64) -> EsrStatus {
    if !(omega_mhz > 0.0) {
        set_error("omega must be > 0");
        return EsrStatus::InvalidArgument;
    }
    unsafe { write_out(out, esr_sim::analysis::q_factor(tau_ns, omega_mhz)) }
}

/// σ (MHz) from the Gaussian Ramsey envelope time T₂* (ns).
///
/// # Safety
/// `out` must be a valid writable pointer.
#[no_mangle]
pub unsafe extern "C" fn esr_sigma_from_t2star(t2star_ns: f64, out: *mut f64) -> EsrStatus {
    if !(t2star_ns > 0.0) {
        set_error("t2star must be > 0");
        return EsrStatus::InvalidArgument;
    }
    unsafe { write_out(out, esr_sim::analysis::sigma_from_t2star(t2star_ns)) }
}

/// T₂* (ns) from the Overhauser width σ (MHz).
///
/// # Safety
/// `out` must be a valid writable pointer.
#[no_mangle]
pub unsafe extern "C" fn esr_t2star_from_sigma(sigma_mhz: f64, out: *mut f64) -> EsrStatus {
    if !(sigma_mhz > 0.0) {
        set_error("sigma must be > 0");
        return EsrStatus::InvalidArgument;
    }
    unsafe { write_out(out, esr_sim::analysis::t2star_from_sigma(sigma_mhz)) }
}

/// Drive strength Ω = slope·P for microwave power P (µW).
///
/// # Safety
/// `out` must be a valid writable pointer.
#[no_mangle]
pub unsafe extern "C" fn esr_power_to_rabi(
    power_uw: f64,
    slope_mhz_per_uw: f64,
    out: *mut f64,
) -> EsrStatus {
    if power_uw < 0.0 || slope_mhz_per_uw < 0.0 {
        set_error("power and slope must be ≥ 0");
        return EsrStatus::InvalidArgument;
    }
    unsafe { write_out(out, power_to_rabi_with_slope(power_uw, slope_mhz_per_uw)) }
}

/// Effective two-photon ESR Rabi frequency (MHz) through both Raman paths.
///
/// # Safety
/// `out` must be a valid writable pointer.
#[no_mangle]
pub unsafe extern "C" fn esr_effective_esr_rabi(
    omega_l_mhz: f64,
    delta_ghz: f64,
    omega_h_ghz: f64,
    out: *mut f64,
) -> EsrStatus {
    let params = RamanParams {
        omega_l_mhz,
        delta_ghz,
        omega_h_ghz,
        omega_e_ghz: 0.0,
    };
    match effective_esr_rabi(&params) {
        Ok(v) => unsafe { write_out(out, v) },
        Err(e) => {
            set_error(e.to_string());
            EsrStatus::InvalidArgument
        }
    }
}

/// Opaque nuclear-bath handle (species list).
pub struct EsrBath {
    species: Vec<NuclearSpeciesConfig>,
}

/// Opaque sampled spectral density handle.
pub struct EsrSpectralDensity {
    density: SpectralDensity,
}

/// New bath with the shipped illustrative In/As defaults. Never fails.
#[no_mangle]
pub extern "C" fn esr_bath_default() -> *mut EsrBath {
    Box::into_raw(Box::new(EsrBath {
        species: default_species(),
    }))
}

#[derive(serde::Deserialize)]
struct BathToml {
    species: Vec<NuclearSpeciesConfig>,
}

/// New bath from a TOML document with one or more `[[species]]` tables
/// (fields: name, spin, count, a_sq_mhz2, bq_mean_mhz, bq_std_mhz,
/// theta_p_std_rad, omega_nuc_mhz). Returns NULL on parse or validation
/// errors.
///
/// # Safety
/// `text` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn esr_bath_from_toml(text: *const c_char) -> *mut EsrBath {
    if text.is_null() {
        set_error("text pointer is NULL");
        return std::ptr::null_mut();
    }
    let s = match unsafe { CStr::from_ptr(text) }.to_str() {
        Ok(s) => s,
        Err(e) => {
            set_error(format!("invalid UTF-8: {e}"));
            return std::ptr::null_mut();
        }
    };
    let parsed: BathToml = match toml::from_str(s) {
        Ok(p) => p,
        Err(e) => {
            set_error(e.to_string());
            return std::ptr::null_mut();
        }
    };
    for sp in &parsed.species {
        if let Err(e) = sp.validate() {
            set_error(e.to_string());
            return std::ptr::null_mut();
        }
    }
    Box::into_raw(Box::new(EsrBath {
        species: parsed.species,
    }))
}

/// Release a bath handle (NULL is tolerated).
///
/// # Safety
/// `bath` must be NULL or a pointer from `esr_bath_default`/`esr_bath_from_toml`.
#[no_mangle]
pub unsafe extern "C" fn esr_bath_free(bath: *mut EsrBath) {
    if !bath.is_null() {
        drop(unsafe { Box::from_raw(bath) });
    }
}

/// Semi-analytic spectral density of `bath` on a uniform grid of
/// `grid_points` frequencies over [0, grid_max_mhz]. Returns NULL on error.
///
/// # Safety
/// `bath` must be a valid bath handle.
#[no_mangle]
pub unsafe extern "C" fn esr_bath_spectral_density(
    bath: *const EsrBath,
    grid_points: usize,
    grid_max_mhz: f64,
) -> *mut EsrSpectralDensity {
    if bath.is_null() {
        set_error("bath pointer is NULL");
        return std::ptr::null_mut();
    }
    if grid_points < 2 || !(grid_max_mhz > 0.0) {
        set_error("need grid_points ≥ 2 and grid_max > 0");
        return std::ptr::null_mut();
    }
    let bath = unsafe { &*bath };
    let grid: Vec<f64> = (0..grid_points)
        .map(|i| grid_max_mhz * i as f64 / (grid_points - 1) as f64)
        .collect();
    match spectral_density(&bath.species, &grid) {
        Ok(density) => Box::into_raw(Box::new(EsrSpectralDensity { density })),
        Err(e) => {
            set_error(e.to_string());
            std::ptr::null_mut()
        }
    }
}

/// Number of grid points of a spectral-density handle.
///
/// # Safety
/// `sd` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn esr_spectral_density_len(sd: *const EsrSpectralDensity) -> usize {
    if sd.is_null() {
        return 0;
    }
    unsafe { &*sd }.density.len()
}

/// Copy the grid (MHz) and density values (MHz) into caller buffers of
/// length `len` (= `esr_spectral_density_len`).
///
/// # Safety
/// `omega_out` and `d_out` must point to `len` writable f64 slots.
#[no_mangle]
pub unsafe extern "C" fn esr_spectral_density_get(
    sd: *const EsrSpectralDensity,
    omega_out: *mut f64,
    d_out: *mut f64,
    len: usize,
) -> EsrStatus {
    if sd.is_null() || omega_out.is_null() || d_out.is_null() {
        set_error("NULL pointer");
        return EsrStatus::NullPointer;
    }
    let sd = unsafe { &*sd };
    if len != sd.density.len() {
        set_error(format!(
            "buffer length {len} != density length {}",
            sd.density.len()
        ));
        return EsrStatus::InvalidArgument;
    }
    let omega = sd.density.omega_mhz();
    let values = sd.density.values();
    for i in 0..len {
        unsafe {
            *omega_out.add(i) = omega[i];
            *d_out.add(i) = values[i];
        }
    }
    EsrStatus::Ok
}

/// Interpolated density value (MHz) at an ordinary frequency (MHz).
///
/// # Safety
/// `sd` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn esr_spectral_density_value_at(
    sd: *const EsrSpectralDensity,
    omega_mhz: f64,
    out: *mut f64,
) -> EsrStatus {
    if sd.is_null() {
        set_error("sd pointer is NULL");
        return EsrStatus::NullPointer;
    }
    match unsafe { &*sd }.density.value_at_mhz(omega_mhz) {
        Ok(v) => unsafe { write_out(out, v) },
        Err(e) => {
            set_error(e.to_string());
            EsrStatus::InvalidArgument
        }
    }
}

/// Release a spectral-density handle (NULL is tolerated).
///
/// # Safety
/// `sd` must be NULL or a pointer from `esr_bath_spectral_density`.
#[no_mangle]
pub unsafe extern "C" fn esr_spectral_density_free(sd: *mut EsrSpectralDensity) {
    if !sd.is_null() {
        drop(unsafe { Box::from_raw(sd) });
    }
}

/// Converged self-consistent nuclear decay rate Γ̃_SCM (MHz) at drive Ω.
/// `iterations_out`/`converged_out` may be NULL when not wanted.
///
/// # Safety
/// `sd` and `rate_out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn esr_self_consistent_rate(
    sd: *const EsrSpectralDensity,
    omega_mhz: f64,
    sigma_oh_mhz: f64,
    gamma1_mhz: f64,
    gamma2_mhz: f64,
    rate_out: *mut f64,
    iterations_out: *mut u32,
    converged_out: *mut u8,
) -> EsrStatus {
    if sd.is_null() {
        set_error("sd pointer is NULL");
        return EsrStatus::NullPointer;
    }
    let sd = unsafe { &*sd };
    match self_consistent_rate(
        &sd.density,
        omega_mhz,
        sigma_oh_mhz,
        gamma1_mhz,
        gamma2_mhz,
        DEFAULT_FIXED_POINT_TOL,
        DEFAULT_FIXED_POINT_MAX_ITER,
    ) {
        Ok((rate, report)) => {
            if !iterations_out.is_null() {
                unsafe { *iterations_out = report.iterations as u32 };
            }
            if !converged_out.is_null() {
                unsafe { *converged_out = report.converged as u8 };
            }
            unsafe { write_out(rate_out, rate) }
        }
        Err(e) => {
            set_error(e.to_string());
            EsrStatus::ComputeError
        }
    }
}

fn relaxation(alpha: f64, gamma2_mhz: f64) -> Result<RelaxationParams, String> {
    if alpha < 0.0 || gamma2_mhz < 0.0 {
        return Err("alpha and gamma2 must be ≥ 0".into());
    }
    Ok(RelaxationParams {
        gamma1: Gamma1Model::Alpha(alpha),
        gamma2_mhz,
        nuclear: NuclearRateMode::Off,
    })
}

/// Overhauser-averaged Rabi trace: ρ↓↓ at the `n` requested times (ns,
/// sorted ascending) for a drive Ω, detuning δ, decay Γ₁ = alpha·Ω, pure
/// dephasing Γ₂ and Gaussian broadening σ_OH (31-node Gauss–Hermite).
///
/// # Safety
/// `t_grid_ns` must point to `n` readable and `p_down_out` to `n` writable
/// f64 slots.
#[no_mangle]
pub unsafe extern "C" fn esr_run_rabi(
    omega_mhz: f64,
    delta_mhz: f64,
    alpha: f64,
    gamma2_mhz: f64,
    sigma_oh_mhz: f64,
    t_grid_ns: *const f64,
    n: usize,
    p_down_out: *mut f64,
) -> EsrStatus {
    if t_grid_ns.is_null() || p_down_out.is_null() {
        set_error("NULL pointer");
        return EsrStatus::NullPointer;
    }
    let grid = unsafe { std::slice::from_raw_parts(t_grid_ns, n) };
    let relax = match relaxation(alpha, gamma2_mhz) {
        Ok(r) => r,
        Err(e) => {
            set_error(e);
            return EsrStatus::InvalidArgument;
        }
    };
    if sigma_oh_mhz < 0.0 {
        set_error("sigma_oh must be ≥ 0");
        return EsrStatus::InvalidArgument;
    }
    let ensemble = OverhauserEnsemble::gauss_hermite(sigma_oh_mhz, 31);
    match run_rabi(omega_mhz, delta_mhz, grid, &relax, &ensemble, None) {
        Ok(result) => {
            for (i, v) in result.p_down.iter().enumerate() {
                unsafe { *p_down_out.add(i) = *v };
            }
            EsrStatus::Ok
        }
        Err(e) => {
            set_error(e.to_string());
            EsrStatus::ComputeError
        }
    }
}

/// Rotating-frame Ramsey fringe with instantaneous π/2 pulses: ρ↓↓ at the
/// `n` requested delays (ns) with final-pulse phase φ.
///
/// # Safety
/// `tau_grid_ns` must point to `n` readable and `p_down_out` to `n` writable
/// f64 slots.
#[no_mangle]
pub unsafe extern "C" fn esr_run_ramsey(
    delta_mhz: f64,
    final_phase_rad: f64,
    alpha: f64,
    gamma2_mhz: f64,
    sigma_oh_mhz: f64,
    tau_grid_ns: *const f64,
    n: usize,
    p_down_out: *mut f64,
) -> EsrStatus {
    if tau_grid_ns.is_null() || p_down_out.is_null() {
        set_error("NULL pointer");
        return EsrStatus::NullPointer;
    }
    let grid = unsafe { std::slice::from_raw_parts(tau_grid_ns, n) };
    let relax = match relaxation(alpha, gamma2_mhz) {
        Ok(r) => r,
        Err(e) => {
            set_error(e);
            return EsrStatus::InvalidArgument;
        }
    };
    if sigma_oh_mhz < 0.0 {
        set_error("sigma_oh must be ≥ 0");
        return EsrStatus::InvalidArgument;
    }
    let ensemble = OverhauserEnsemble::gauss_hermite(sigma_oh_mhz, 31);
    match run_ramsey(
        None,
        delta_mhz,
        grid,
        final_phase_rad,
        &relax,
        &ensemble,
        None,
    ) {
        Ok(result) => {
            for (i, v) in result.p_down.iter().enumerate() {
                unsafe { *p_down_out.add(i) = *v };
            }
            EsrStatus::Ok
        }
        Err(e) => {
            set_error(e.to_string());
            EsrStatus::ComputeError
        }
    }
}
