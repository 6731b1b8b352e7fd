//! Unit conventions used throughout the crate.
//!
//! Externally visible quantities follow the conventions of the public API and
//! of all file formats:
//!
//! * frequencies (Rabi frequency Ω, detunings δ and Δ, nuclear Zeeman
//!   splittings, spectral-density frequency axes, Overhauser widths σ) are
//!   ordinary frequencies in MHz,
//! * decay rates (Γ₁, Γ₂, spectral-density values, Lorentzian dampings) are
//!   e-folding rates in MHz, i.e. a rate of 1 MHz decays as `exp(-t/1 µs)`,
//! * times are in ns at the API surface (µs only where noted).
//!
//! Internally everything is converted at ingestion to a single system:
//! angular frequency in rad/µs for Hamiltonian coefficients (`ω = 2π·f_MHz`)
//! and 1/µs for dissipator rates (no 2π factor), with time in µs. With this
//! split, the π-pulse time is `t_π = 1/(2Ω)` for Ω in MHz, and a
//! drive-proportional decay `Γ₁ = α·Ω` yields the quality-factor bound
//! `Q = 4/(3α)`; both identities are exercised in the test suite.

use std::f64::consts::TAU;

/// Ordinary frequency in MHz → angular frequency in rad/µs.
#[inline]
pub fn mhz_to_angular(f_mhz: f64) -> f64 {
    TAU * f_mhz
}

/// Angular frequency in rad/µs → ordinary frequency in MHz.
#[inline]
pub fn angular_to_mhz(w: f64) -> f64 {
    w / TAU
}

/// Decay rate in MHz → e-folding rate in 1/µs. Rates carry no 2π.
#[inline]
pub fn rate_mhz_to_inv_us(r_mhz: f64) -> f64 {
    r_mhz
}

/// E-folding rate in 1/µs → rate in MHz.
#[inline]
pub fn rate_inv_us_to_mhz(r: f64) -> f64 {
    r
}

/// Time in ns → internal time in µs.
#[inline]
pub fn ns_to_us(t_ns: f64) -> f64 {
    1e-3 * t_ns
}

/// Internal time in µs → ns.
#[inline]
pub fn us_to_ns(t_us: f64) -> f64 {
    1e3 * t_us
}

/// π-pulse duration in ns for a drive of `omega_mhz` (ordinary frequency).
#[inline]
pub fn t_pi_ns(omega_mhz: f64) -> f64 {
    500.0 / omega_mhz
}
