//! Pulse sequences and the canned experiments: Rabi, rotating-frame Ramsey,
//! two-pulse phase scans and spin locking, all with quasi-static Overhauser
//! ensemble averaging.
//!
//! Every run starts from a perfectly initialized |↑⟩ and reads out the exact
//! |↓⟩ population (optionally after a mapping pulse); optical pumping and
//! photon counting are outside the model. Pulses are rectangular.

use rayon::prelude::*;

use crate::fit::fit_sinusoid;
use crate::quad::GaussHermite;
use crate::spin::{
    propagate_segment, DriveParams, NuclearRate, NuclearRateMode, RelaxationParams,
    SegmentGenerator, SpinError, StepControl,
};
use crate::units::t_pi_ns;
use rand::SeedableRng;
use rand_distr::Distribution;

/// Errors from sequence construction and execution.
#[derive(Debug, thiserror::Error)]
pub enum SequenceError {
    #[error("invalid sequence: {0}")]
    Invalid(String),
    #[error("segment {index}: {source}")]
    Segment { index: usize, source: SpinError },
    #[error("nuclear rate mode {mode:?} requires a rate source")]
    MissingRateSource { mode: NuclearRateMode },
}

/// One piecewise-constant control interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Segment {
    Drive {
        duration_ns: f64,
        omega_mhz: f64,
        phase_rad: f64,
        delta_mhz: f64,
    },
    /// Free evolution; the rotating-frame detuning still applies.
    Delay { duration_ns: f64, delta_mhz: f64 },
}

impl Segment {
    /// π pulse at `omega_mhz` (duration 1/(2Ω)).
    pub fn pi_pulse(omega_mhz: f64, phase_rad: f64, delta_mhz: f64) -> Self {
        Segment::Drive {
            duration_ns: t_pi_ns(omega_mhz),
            omega_mhz,
            phase_rad,
            delta_mhz,
        }
    }

    /// π/2 pulse at `omega_mhz` (duration 1/(4Ω)).
    pub fn half_pi_pulse(omega_mhz: f64, phase_rad: f64, delta_mhz: f64) -> Self {
        Segment::Drive {
            duration_ns: 0.5 * t_pi_ns(omega_mhz),
            omega_mhz,
            phase_rad,
            delta_mhz,
        }
    }

    pub fn duration_ns(&self) -> f64 {
        match *self {
            Segment::Drive { duration_ns, .. } | Segment::Delay { duration_ns, .. } => duration_ns,
        }
    }

    pub fn omega_mhz(&self) -> f64 {
        match *self {
            Segment::Drive { omega_mhz, .. } => omega_mhz,
            Segment::Delay { .. } => 0.0,
        }
    }

    pub fn phase_rad(&self) -> f64 {
        match *self {
            Segment::Drive { phase_rad, .. } => phase_rad,
            Segment::Delay { .. } => 0.0,
        }
    }

    pub fn delta_mhz(&self) -> f64 {
        match *self {
            Segment::Drive { delta_mhz, .. } | Segment::Delay { delta_mhz, .. } => delta_mhz,
        }
    }

    fn drive_params(&self, overhauser_mhz: f64) -> DriveParams {
        DriveParams::new(
            self.omega_mhz(),
            self.phase_rad(),
            self.delta_mhz(),
            overhauser_mhz,
        )
    }

    pub fn validate(&self) -> Result<(), SequenceError> {
        if !(self.duration_ns() >= 0.0 && self.duration_ns().is_finite()) {
            return Err(SequenceError::Invalid(format!(
                "segment duration must be ≥ 0 and finite, got {}",
                self.duration_ns()
            )));
        }
        if self.omega_mhz() < 0.0 {
            return Err(SequenceError::Invalid("segment omega must be ≥ 0".into()));
        }
        Ok(())
    }
}

/// What is measured at the end of a sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Readout {
    /// ρ↓↓ directly after the last segment.
    PopulationDown,
    /// ρ↓↓ after one extra mapping pulse (e.g. a π/2 reading a dressed basis).
    MappedPopulationDown(Segment),
}

/// An ordered list of segments plus the readout descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseSequence {
    pub segments: Vec<Segment>,
    pub readout: Readout,
}

impl PulseSequence {
    pub fn new(segments: Vec<Segment>) -> Self {
        PulseSequence {
            segments,
            readout: Readout::PopulationDown,
        }
    }

    pub fn total_duration_ns(&self) -> f64 {
        self.segments.iter().map(|s| s.duration_ns()).sum()
    }

    pub fn validate(&self) -> Result<(), SequenceError> {
        if self.segments.is_empty() {
            return Err(SequenceError::Invalid("sequence has no segments".into()));
        }
        for s in &self.segments {
            s.validate()?;
        }
        if let Readout::MappedPopulationDown(s) = &self.readout {
            s.validate()?;
        }
        if !self.total_duration_ns().is_finite() {
            return Err(SequenceError::Invalid("total duration not finite".into()));
        }
        Ok(())
    }
}

/// How the quasi-static Overhauser detuning Δ is averaged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EnsembleScheme {
    /// Deterministic Gauss–Hermite quadrature (spectrally exact for the
    /// Gaussian weight); the default with 31 nodes.
    GaussHermite { nodes: usize },
    /// Monte-Carlo draws with counter-based per-sample seeding.
    MonteCarlo { samples: usize, seed: u64 },
}

/// Gaussian Overhauser distribution of standard deviation σ_OH.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverhauserEnsemble {
    pub sigma_mhz: f64,
    pub scheme: EnsembleScheme,
}

impl OverhauserEnsemble {
    pub fn gauss_hermite(sigma_mhz: f64, nodes: usize) -> Self {
        OverhauserEnsemble {
            sigma_mhz,
            scheme: EnsembleScheme::GaussHermite { nodes },
        }
    }

    pub fn monte_carlo(sigma_mhz: f64, samples: usize, seed: u64) -> Self {
        OverhauserEnsemble {
            sigma_mhz,
            scheme: EnsembleScheme::MonteCarlo { samples, seed },
        }
    }

    /// A zero-width ensemble: one node at Δ = 0.
    pub fn none() -> Self {
        Self::gauss_hermite(0.0, 1)
    }

    pub fn validate(&self) -> Result<(), SequenceError> {
        if !(self.sigma_mhz >= 0.0 && self.sigma_mhz.is_finite()) {
            return Err(SequenceError::Invalid("sigma_oh must be ≥ 0".into()));
        }
        let n = match self.scheme {
            EnsembleScheme::GaussHermite { nodes } => nodes,
            EnsembleScheme::MonteCarlo { samples, .. } => samples,
        };
        if n == 0 {
            return Err(SequenceError::Invalid("ensemble needs ≥ 1 node".into()));
        }
        Ok(())
    }

    /// Nodes (Δ_k in MHz, weight w_k), Σw = 1. σ = 0 collapses to a single
    /// node at Δ = 0, so the ensemble average equals a single-shot run exactly.
    pub fn nodes(&self) -> Vec<(f64, f64)> {
        if self.sigma_mhz == 0.0 {
            return vec![(0.0, 1.0)];
        }
        match self.scheme {
            EnsembleScheme::GaussHermite { nodes } => {
                let gh = GaussHermite::new(nodes);
                let wsum: f64 = gh.weights.iter().sum();
                gh.nodes
                    .iter()
                    .zip(&gh.weights)
                    .map(|(&x, &w)| (std::f64::consts::SQRT_2 * self.sigma_mhz * x, w / wsum))
                    .collect()
            }
            EnsembleScheme::MonteCarlo { samples, seed } => {
                let w = 1.0 / samples as f64;
                let normal = rand_distr::StandardNormal;
                (0..samples)
                    .map(|k| {
                        // Counter-based seeding: sample k is independent of
                        // evaluation order and parallel chunking.
                        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                        rng.set_stream(k as u64);
                        let z: f64 = normal.sample(&mut rng);
                        (self.sigma_mhz * z, w)
                    })
                    .collect()
            }
        }
    }
}

/// Axis meaning of [`ExperimentResult::x`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisKind {
    TimeNs,
    PhaseRad,
}

/// Ensemble-averaged experiment output.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub x: Vec<f64>,
    pub x_kind: AxisKind,
    /// Mean ρ↓↓ per grid point.
    pub p_down: Vec<f64>,
    /// Weighted standard deviation across ensemble nodes (Monte-Carlo only).
    pub spread: Option<Vec<f64>>,
    /// Resolved run parameters, for CSV sidecars.
    pub meta: Vec<(String, String)>,
}

/// Provider of the nuclear-induced decay rate for a segment at a given
/// Overhauser node; wired up by the relaxation layer.
pub type NuclearRateSource<'a> = &'a (dyn Fn(&Segment, f64) -> NuclearRate + Sync);

struct ShotContext<'a> {
    relax: &'a RelaxationParams,
    nuclear: Option<NuclearRateSource<'a>>,
    step: StepControl,
}

impl<'a> ShotContext<'a> {
    fn new(
        relax: &'a RelaxationParams,
        nuclear: Option<NuclearRateSource<'a>>,
    ) -> Result<Self, SequenceError> {
        if relax.nuclear != NuclearRateMode::Off && nuclear.is_none() {
            return Err(SequenceError::MissingRateSource {
                mode: relax.nuclear,
            });
        }
        Ok(ShotContext {
            relax,
            nuclear,
            step: StepControl::default(),
        })
    }

    fn rate_for(&self, seg: &Segment, delta_oh_mhz: f64) -> NuclearRate {
        match (self.relax.nuclear, self.nuclear) {
            (NuclearRateMode::Off, _) | (_, None) => NuclearRate::Off,
            (_, Some(src)) => src(seg, delta_oh_mhz),
        }
    }

    /// Propagate through one segment, optionally sampling its interior.
    fn segment(
        &self,
        r: [f64; 3],
        seg: &Segment,
        index: usize,
        delta_oh_mhz: f64,
        snapshots_ns: &[f64],
    ) -> Result<(Vec<[f64; 3]>, [f64; 3]), SequenceError> {
        let drive = seg.drive_params(delta_oh_mhz);
        let gen = SegmentGenerator::new(&drive, self.relax);
        let nuclear = self.rate_for(seg, delta_oh_mhz);
        propagate_segment(
            r,
            &gen,
            &nuclear,
            seg.duration_ns(),
            snapshots_ns,
            &self.step,
        )
        .map_err(|source| SequenceError::Segment { index, source })
    }

    fn run_segments(
        &self,
        mut r: [f64; 3],
        segments: &[Segment],
        delta_oh_mhz: f64,
    ) -> Result<[f64; 3], SequenceError> {
        for (i, seg) in segments.iter().enumerate() {
            (_, r) = self.segment(r, seg, i, delta_oh_mhz, &[])?;
        }
        Ok(r)
    }

    fn readout(
        &self,
        r: [f64; 3],
        readout: &Readout,
        delta_oh_mhz: f64,
    ) -> Result<f64, SequenceError> {
        let r = match readout {
            Readout::PopulationDown => r,
            Readout::MappedPopulationDown(seg) => {
                self.segment(r, seg, usize::MAX, delta_oh_mhz, &[])?.1
            }
        };
        Ok(p_down(&r))
    }
}

#[inline]
fn p_down(r: &[f64; 3]) -> f64 {
    0.5 * (1.0 - r[2])
}

fn bloch_up() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

/// Exact rotation of a Bloch vector about the equatorial axis
/// (cos φ, sin φ, 0) by `angle`: the instantaneous-pulse limit of a
/// resonant drive segment.
pub fn rotate_equatorial(r: [f64; 3], phase_rad: f64, angle_rad: f64) -> [f64; 3] {
    let k = [phase_rad.cos(), phase_rad.sin(), 0.0];
    let (s, c) = angle_rad.sin_cos();
    let kxr = [
        k[1] * r[2] - k[2] * r[1],
        k[2] * r[0] - k[0] * r[2],
        k[0] * r[1] - k[1] * r[0],
    ];
    let kdr = k[0] * r[0] + k[1] * r[1] + k[2] * r[2];
    std::array::from_fn(|i| r[i] * c + kxr[i] * s + k[i] * kdr * (1.0 - c))
}

/// Weighted per-node results reduced in node-index order (bitwise
/// deterministic regardless of the rayon thread count).
fn ensemble_average_rows<F>(
    ensemble: &OverhauserEnsemble,
    n_cols: usize,
    per_node: F,
) -> Result<(Vec<f64>, Option<Vec<f64>>), SequenceError>
where
    F: Fn(f64) -> Result<Vec<f64>, SequenceError> + Sync,
{
    ensemble.validate()?;
    let nodes = ensemble.nodes();
    let rows: Vec<(f64, Vec<f64>)> = nodes
        .par_iter()
        .map(|&(delta, w)| per_node(delta).map(|row| (w, row)))
        .collect::<Result<_, _>>()?;
    let mut mean = vec![0.0; n_cols];
    for (w, row) in &rows {
        debug_assert_eq!(row.len(), n_cols);
        for (m, v) in mean.iter_mut().zip(row) {
            *m += w * v;
        }
    }
    let spread = match ensemble.scheme {
        EnsembleScheme::MonteCarlo { .. } if rows.len() > 1 => {
            let mut var = vec![0.0; n_cols];
            for (w, row) in &rows {
                for ((v, m), out) in row.iter().zip(&mean).zip(var.iter_mut()) {
                    *out += w * (v - m) * (v - m);
                }
            }
            Some(var.iter().map(|v| v.sqrt()).collect())
        }
        _ => None,
    };
    Ok((mean, spread))
}

fn validate_grid(grid: &[f64], name: &str) -> Result<(), SequenceError> {
    if grid.is_empty() {
        return Err(SequenceError::Invalid(format!("{name} grid is empty")));
    }
    if grid.windows(2).any(|w| w[1] < w[0]) || grid[0] < 0.0 && name != "phase" {
        return Err(SequenceError::Invalid(format!(
            "{name} grid must be sorted (times non-negative)"
        )));
    }
    Ok(())
}

/// Run an arbitrary sequence and return the ensemble-averaged readout
/// Σ_k w_k·ρ↓↓(Δ_k). Errors are annotated with the failing segment index.
pub fn run_sequence(
    seq: &PulseSequence,
    relax: &RelaxationParams,
    ensemble: &OverhauserEnsemble,
    nuclear: Option<NuclearRateSource>,
) -> Result<f64, SequenceError> {
    seq.validate()?;
    let ctx = ShotContext::new(relax, nuclear)?;
    let (mean, _) = ensemble_average_rows(ensemble, 1, |delta| {
        let r = ctx.run_segments(bloch_up(), &seq.segments, delta)?;
        Ok(vec![ctx.readout(r, &seq.readout, delta)?])
    })?;
    Ok(mean[0])
}

/// Rabi experiment: one drive segment, ρ↓↓ sampled on `t_grid_ns`.
pub fn run_rabi(
    omega_mhz: f64,
    delta_mhz: f64,
    t_grid_ns: &[f64],
    relax: &RelaxationParams,
    ensemble: &OverhauserEnsemble,
    nuclear: Option<NuclearRateSource>,
) -> Result<ExperimentResult, SequenceError> {
    validate_grid(t_grid_ns, "time")?;
    let ctx = ShotContext::new(relax, nuclear)?;
    let t_max = *t_grid_ns.last().unwrap();
    let seg = Segment::Drive {
        duration_ns: t_max,
        omega_mhz,
        phase_rad: 0.0,
        delta_mhz,
    };
    seg.validate()?;
    let (mean, spread) = ensemble_average_rows(ensemble, t_grid_ns.len(), |delta| {
        let (samples, _) = ctx.segment(bloch_up(), &seg, 0, delta, t_grid_ns)?;
        Ok(samples.iter().map(p_down).collect())
    })?;
    Ok(ExperimentResult {
        x: t_grid_ns.to_vec(),
        x_kind: AxisKind::TimeNs,
        p_down: mean,
        spread,
        meta: vec![
            ("experiment".into(), "rabi".into()),
            ("omega_mhz".into(), omega_mhz.to_string()),
            ("delta_mhz".into(), delta_mhz.to_string()),
            ("sigma_oh_mhz".into(), ensemble.sigma_mhz.to_string()),
        ],
    })
}

/// Rotating-frame Ramsey: π/2 – delay τ – π/2(φ_final), ρ↓↓ vs τ.
///
/// `omega_pulse_mhz = None` selects the instantaneous-pulse limit (exact π/2
/// rotations); `Some(Ω)` uses rectangular pulses of duration 1/(4Ω).
pub fn run_ramsey(
    omega_pulse_mhz: Option<f64>,
    delta_mhz: f64,
    tau_grid_ns: &[f64],
    final_phase_rad: f64,
    relax: &RelaxationParams,
    ensemble: &OverhauserEnsemble,
    nuclear: Option<NuclearRateSource>,
) -> Result<ExperimentResult, SequenceError> {
    validate_grid(tau_grid_ns, "time")?;
    let ctx = ShotContext::new(relax, nuclear)?;
    let tau_max = *tau_grid_ns.last().unwrap();
    let delay = Segment::Delay {
        duration_ns: tau_max,
        delta_mhz,
    };
    let half_pi = std::f64::consts::FRAC_PI_2;
    let (mean, spread) = ensemble_average_rows(ensemble, tau_grid_ns.len(), |delta| {
        let r0 = match omega_pulse_mhz {
            None => rotate_equatorial(bloch_up(), 0.0, half_pi),
            Some(om) => ctx.run_segments(
                bloch_up(),
                &[Segment::half_pi_pulse(om, 0.0, delta_mhz)],
                delta,
            )?,
        };
        let (samples, _) = ctx.segment(r0, &delay, 1, delta, tau_grid_ns)?;
        samples
            .iter()
            .map(|&r| {
                let rf = match omega_pulse_mhz {
                    None => rotate_equatorial(r, final_phase_rad, half_pi),
                    Some(om) => ctx.run_segments(
                        r,
                        &[Segment::half_pi_pulse(om, final_phase_rad, delta_mhz)],
                        delta,
                    )?,
                };
                Ok(p_down(&rf))
            })
            .collect()
    })?;
    Ok(ExperimentResult {
        x: tau_grid_ns.to_vec(),
        x_kind: AxisKind::TimeNs,
        p_down: mean,
        spread,
        meta: vec![
            ("experiment".into(), "ramsey".into()),
            (
                "omega_pulse_mhz".into(),
                omega_pulse_mhz.map_or("instantaneous".into(), |v| v.to_string()),
            ),
            ("final_phase_rad".into(), final_phase_rad.to_string()),
            ("sigma_oh_mhz".into(), ensemble.sigma_mhz.to_string()),
        ],
    })
}

/// Two immediately consecutive π/2 pulses with relative phase φ; ρ↓↓ vs φ.
pub fn run_phase_scan(
    omega_pulse_mhz: f64,
    delta_mhz: f64,
    phi_grid_rad: &[f64],
    relax: &RelaxationParams,
    ensemble: &OverhauserEnsemble,
    nuclear: Option<NuclearRateSource>,
) -> Result<ExperimentResult, SequenceError> {
    validate_grid(phi_grid_rad, "phase")?;
    let ctx = ShotContext::new(relax, nuclear)?;
    let (mean, spread) = ensemble_average_rows(ensemble, phi_grid_rad.len(), |delta| {
        let first = Segment::half_pi_pulse(omega_pulse_mhz, 0.0, delta_mhz);
        let r_mid = ctx.run_segments(bloch_up(), &[first], delta)?;
        phi_grid_rad
            .iter()
            .map(|&phi| {
                let second = Segment::half_pi_pulse(omega_pulse_mhz, phi, delta_mhz);
                let r = ctx.run_segments(r_mid, &[second], delta)?;
                Ok(p_down(&r))
            })
            .collect()
    })?;
    Ok(ExperimentResult {
        x: phi_grid_rad.to_vec(),
        x_kind: AxisKind::PhaseRad,
        p_down: mean,
        spread,
        meta: vec![
            ("experiment".into(), "phase-scan".into()),
            ("omega_pulse_mhz".into(), omega_pulse_mhz.to_string()),
            ("delta_mhz".into(), delta_mhz.to_string()),
            ("sigma_oh_mhz".into(), ensemble.sigma_mhz.to_string()),
        ],
    })
}

/// Spin-lock result: tomography visibility per lock time, with the raw
/// fringes kept for export.
#[derive(Debug, Clone)]
pub struct SpinLockResult {
    pub lock_times_ns: Vec<f64>,
    /// Fringe visibility 2A per lock time (ideal contrast is 1).
    pub visibility: Vec<f64>,
    /// False when the fringe amplitude fell below the fit noise floor.
    pub fringe_ok: Vec<bool>,
    pub phi_grid_rad: Vec<f64>,
    /// `fringes[i][j]` = ρ↓↓ at lock time i, tomography phase j.
    pub fringes: Vec<Vec<f64>>,
    pub meta: Vec<(String, String)>,
}

/// Spin locking (π/2 at phase 0, lock drive at phase π/2 for time T, then a
/// π/2 tomography pulse at phase φ). The visibility at each lock time is the
/// fitted fringe amplitude over `phi_grid_rad`, model A·sin(φ+φ₀)+B,
/// visibility = 2A.
pub fn run_spinlock(
    omega_lock_mhz: f64,
    lock_times_ns: &[f64],
    phi_grid_rad: &[f64],
    relax: &RelaxationParams,
    ensemble: &OverhauserEnsemble,
    nuclear: Option<NuclearRateSource>,
) -> Result<SpinLockResult, SequenceError> {
    validate_grid(lock_times_ns, "time")?;
    if phi_grid_rad.len() < 5 {
        return Err(SequenceError::Invalid(
            "tomography needs ≥ 5 phase points".into(),
        ));
    }
    let ctx = ShotContext::new(relax, nuclear)?;
    let n_t = lock_times_ns.len();
    let n_phi = phi_grid_rad.len();
    let lock = Segment::Drive {
        duration_ns: *lock_times_ns.last().unwrap(),
        omega_mhz: omega_lock_mhz,
        phase_rad: std::f64::consts::FRAC_PI_2,
        delta_mhz: 0.0,
    };
    let (flat, _) = ensemble_average_rows(ensemble, n_t * n_phi, |delta| {
        let first = Segment::half_pi_pulse(omega_lock_mhz, 0.0, 0.0);
        let r0 = ctx.run_segments(bloch_up(), &[first], delta)?;
        let (locked, _) = ctx.segment(r0, &lock, 1, delta, lock_times_ns)?;
        let mut row = Vec::with_capacity(n_t * n_phi);
        for &r in &locked {
            for &phi in phi_grid_rad {
                let tomo = Segment::half_pi_pulse(omega_lock_mhz, phi, 0.0);
                let rf = ctx.run_segments(r, &[tomo], delta)?;
                row.push(p_down(&rf));
            }
        }
        Ok(row)
    })?;

    let mut visibility = Vec::with_capacity(n_t);
    let mut fringe_ok = Vec::with_capacity(n_t);
    let mut fringes = Vec::with_capacity(n_t);
    for i in 0..n_t {
        let fringe = flat[i * n_phi..(i + 1) * n_phi].to_vec();
        let fit = fit_sinusoid(phi_grid_rad, &fringe)
            .ok_or_else(|| SequenceError::Invalid("tomography fringe fit failed".into()))?;
        visibility.push((2.0 * fit.amp).min(1.0));
        fringe_ok.push(fit.amp > 10.0 * fit.residual_rms.max(1e-12));
        fringes.push(fringe);
    }
    Ok(SpinLockResult {
        lock_times_ns: lock_times_ns.to_vec(),
        visibility,
        fringe_ok,
        phi_grid_rad: phi_grid_rad.to_vec(),
        fringes,
        meta: vec![
            ("experiment".into(), "spinlock".into()),
            ("omega_lock_mhz".into(), omega_lock_mhz.to_string()),
            ("sigma_oh_mhz".into(), ensemble.sigma_mhz.to_string()),
        ],
    })
}

/// Population in the locked (dressed) basis vs lock time: the spin-lock
/// sequence read out through a fixed-phase π/2 mapping pulse.
pub fn run_locked_population(
    omega_lock_mhz: f64,
    t_grid_ns: &[f64],
    readout_phase_rad: f64,
    relax: &RelaxationParams,
    ensemble: &OverhauserEnsemble,
    nuclear: Option<NuclearRateSource>,
) -> Result<ExperimentResult, SequenceError> {
    validate_grid(t_grid_ns, "time")?;
    let ctx = ShotContext::new(relax, nuclear)?;
    let lock = Segment::Drive {
        duration_ns: *t_grid_ns.last().unwrap(),
        omega_mhz: omega_lock_mhz,
        phase_rad: std::f64::consts::FRAC_PI_2,
        delta_mhz: 0.0,
    };
    let (mean, spread) = ensemble_average_rows(ensemble, t_grid_ns.len(), |delta| {
        let first = Segment::half_pi_pulse(omega_lock_mhz, 0.0, 0.0);
        let r0 = ctx.run_segments(bloch_up(), &[first], delta)?;
        let (locked, _) = ctx.segment(r0, &lock, 1, delta, t_grid_ns)?;
        locked
            .iter()
            .map(|&r| {
                let tomo = Segment::half_pi_pulse(omega_lock_mhz, readout_phase_rad, 0.0);
                let rf = ctx.run_segments(r, &[tomo], delta)?;
                Ok(p_down(&rf))
            })
            .collect()
    })?;
    Ok(ExperimentResult {
        x: t_grid_ns.to_vec(),
        x_kind: AxisKind::TimeNs,
        p_down: mean,
        spread,
        meta: vec![
            ("experiment".into(), "locked-population".into()),
            ("omega_lock_mhz".into(), omega_lock_mhz.to_string()),
            ("readout_phase_rad".into(), readout_phase_rad.to_string()),
        ],
    })
}

/// Uniform grid helper: `n` points from `a` to `b` inclusive.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2, "linspace needs at least 2 points");
    (0..n)
        .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
        .collect()
}
