//! Simulation toolkit for an optically driven two-level spin qubit coupled to
//! a nuclear-spin bath.
//!
//! The crate models the full experiment chain of a Raman-driven quantum-dot
//! electron spin:
//!
//! * [`spin`]: density-matrix representation and the master-equation
//!   integrator for the driven spin with drive-proportional decay Γ₁, pure
//!   dephasing Γ₂ and nuclear-induced dressed-state decay;
//! * [`sequence`]: pulse sequences and the canned experiments (Rabi, Ramsey,
//!   phase scans, spin locking) with quasi-static Overhauser averaging;
//! * [`bath`]: species-resolved nuclear spectral densities from quadrupolar
//!   strain, with a Monte-Carlo cross-check;
//! * [`relaxation`]: nuclear-induced electron decay rates: non-Markovian,
//!   Markovian, self-consistent Born-Markov, and Overhauser-averaged, plus the
//!   fixed-point iteration tying them together;
//! * [`analysis`]: visibility extraction, 1/e times, Q factors, π-fidelities
//!   and least-squares envelope fits;
//! * [`waveform`]: quadrature square-wave microwave synthesis, the linear
//!   EOM sideband model and the two-photon Raman coupling;
//! * [`config`]/[`output`]: TOML run configuration, CSV emission and run
//!   manifests for the CLI.
//!
//! Units at every public boundary: ordinary frequencies in MHz, decay rates
//! in MHz (1 MHz = 1/µs), times in ns, phases in rad; see [`units`].

// Guards of the form `!(x >= 0.0)` intentionally catch NaN as well as
// negative values; the suggested `x < 0.0` would let NaN through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod bath;
pub mod config;
pub mod fit;
pub mod output;
pub mod quad;
pub mod relaxation;
pub mod sequence;
pub mod spin;
pub mod units;
pub mod waveform;

pub use spin::{
    analytic_rabi, bloch_from_density, evolve, BlochVector, DensityMatrix, DressedAngle,
    DriveParams, Gamma1Model, NuclearRate, NuclearRateMode, RelaxationParams, SpinError,
    StepControl, Trajectory,
};
