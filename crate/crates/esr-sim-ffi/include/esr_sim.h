#pragma once

/* Generated with cbindgen:0.26.0 */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Call outcome; anything but `Ok` leaves a message for
 * [`esr_last_error_message`].
 */
typedef enum {
  ESR_STATUS_OK = 0,
  ESR_STATUS_NULL_POINTER = 1,
  ESR_STATUS_INVALID_ARGUMENT = 2,
  ESR_STATUS_COMPUTE_ERROR = 3,
  ESR_STATUS_UTF8_ERROR = 4,
} EsrStatus;

/**
 * Opaque nuclear-bath handle (species list).
 */
typedef struct EsrBath EsrBath;

/**
 * Opaque sampled spectral density handle.
 */
typedef struct EsrSpectralDensity EsrSpectralDensity;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Description of the most recent failure on the calling thread. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *esr_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *esr_version(void);

/**
 * Closed-form resonant Rabi population ρ↑↑(t) with depolarizing decay Γ₁.
 *
 * # Safety
 * `out` must be a valid writable pointer.
 */
EsrStatus esr_analytic_rabi(double omega_mhz, double gamma1_mhz, double t_ns, double *out);

/**
 * π-rotation fidelity ½(1 + e^{-1/Q}).
 *
 * # Safety
 * `out` must be a valid writable pointer.
 */
EsrStatus esr_pi_fidelity(double q, double *out);

/**
 * Q factor τ/t_π for a 1/e time τ (ns) at drive Ω (MHz).
 *
 * # Safety
 * `out` must be a valid writable pointer.
 */
EsrStatus esr_q_factor(double tau_ns, double omega_mhz, double *out);

/**
 * σ (MHz) from the Gaussian Ramsey envelope time T₂* (ns).
 *
 * # Safety
 * `out` must be a valid writable pointer.
 */
EsrStatus esr_sigma_from_t2star(double t2star_ns, double *out);

/**
 * T₂* (ns) from the Overhauser width σ (MHz).
 *
 * # Safety
 * `out` must be a valid writable pointer.
 */
EsrStatus esr_t2star_from_sigma(double sigma_mhz, double *out);

/**
 * Drive strength Ω = slope·P for microwave power P (µW).
 *
 * # Safety
 * `out` must be a valid writable pointer.
 */
EsrStatus esr_power_to_rabi(double power_uw, double slope_mhz_per_uw, double *out);

/**
 * Effective two-photon ESR Rabi frequency (MHz) through both Raman paths.
 *
 * # Safety
 * `out` must be a valid writable pointer.
 */
EsrStatus esr_effective_esr_rabi(double omega_l_mhz,
                                 double delta_ghz,
                                 double omega_h_ghz,
                                 double *out);

/**
 * New bath with the shipped illustrative In/As defaults. Never fails.
 */
EsrBath *esr_bath_default(void);

/**
 * New bath from a TOML document with one or more `[[species]]` tables
 * (fields: name, spin, count, a_sq_mhz2, bq_mean_mhz, bq_std_mhz,
 * theta_p_std_rad, omega_nuc_mhz). Returns NULL on parse or validation
 * errors.
 *
 * # Safety
 * `text` must be a valid NUL-terminated string.
 */
EsrBath *esr_bath_from_toml(const char *text);

/**
 * Release a bath handle (NULL is tolerated).
 *
 * # Safety
 * `bath` must be NULL or a pointer from `esr_bath_default`/`esr_bath_from_toml`.
 */
void esr_bath_free(EsrBath *bath);

/**
 * Semi-analytic spectral density of `bath` on a uniform grid of
 * `grid_points` frequencies over [0, grid_max_mhz]. Returns NULL on error.
 *
 * # Safety
 * `bath` must be a valid bath handle.
 */
EsrSpectralDensity *esr_bath_spectral_density(const EsrBath *bath,
                                              size_t grid_points,
                                              double grid_max_mhz);

/**
 * Number of grid points of a spectral-density handle.
 *
 * # Safety
 * `sd` must be a valid handle.
 */
size_t esr_spectral_density_len(const EsrSpectralDensity *sd);

/**
 * Copy the grid (MHz) and density values (MHz) into caller buffers of
 * length `len` (= `esr_spectral_density_len`).
 *
 * # Safety
 * `omega_out` and `d_out` must point to `len` writable f64 slots.
 */
EsrStatus esr_spectral_density_get(const EsrSpectralDensity *sd,
                                   double *omega_out,
                                   double *d_out,
                                   size_t len);

/**
 * Interpolated density value (MHz) at an ordinary frequency (MHz).
 *
 * # Safety
 * `sd` and `out` must be valid pointers.
 */
EsrStatus esr_spectral_density_value_at(const EsrSpectralDensity *sd,
                                        double omega_mhz,
                                        double *out);

/**
 * Release a spectral-density handle (NULL is tolerated).
 *
 * # Safety
 * `sd` must be NULL or a pointer from `esr_bath_spectral_density`.
 */
void esr_spectral_density_free(EsrSpectralDensity *sd);

/**
 * Converged self-consistent nuclear decay rate Γ̃_SCM (MHz) at drive Ω.
 * `iterations_out`/`converged_out` may be NULL when not wanted.
 *
 * # Safety
 * `sd` and `rate_out` must be valid pointers.
 */
EsrStatus esr_self_consistent_rate(const EsrSpectralDensity *sd,
                                   double omega_mhz,
                                   double sigma_oh_mhz,
                                   double gamma1_mhz,
                                   double gamma2_mhz,
                                   double *rate_out,
                                   uint32_t *iterations_out,
                                   uint8_t *converged_out);

/**
 * Overhauser-averaged Rabi trace: ρ↓↓ at the `n` requested times (ns,
 * sorted ascending) for a drive Ω, detuning δ, decay Γ₁ = alpha·Ω, pure
 * dephasing Γ₂ and Gaussian broadening σ_OH (31-node Gauss–Hermite).
 *
 * # Safety
 * `t_grid_ns` must point to `n` readable and `p_down_out` to `n` writable
 * f64 slots.
 */
EsrStatus esr_run_rabi(double omega_mhz,
                       double delta_mhz,
                       double alpha,
                       double gamma2_mhz,
                       double sigma_oh_mhz,
                       const double *t_grid_ns,
                       size_t n,
                       double *p_down_out);

/**
 * Rotating-frame Ramsey fringe with instantaneous π/2 pulses: ρ↓↓ at the
 * `n` requested delays (ns) with final-pulse phase φ.
 *
 * # Safety
 * `tau_grid_ns` must point to `n` readable and `p_down_out` to `n` writable
 * f64 slots.
 */
EsrStatus esr_run_ramsey(double delta_mhz,
                         double final_phase_rad,
                         double alpha,
                         double gamma2_mhz,
                         double sigma_oh_mhz,
                         const double *tau_grid_ns,
                         size_t n,
                         double *p_down_out);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus
