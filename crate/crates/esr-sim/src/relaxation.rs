//! Nuclear-induced electron decay rates.
//!
//! Four rate levels are provided, all carrying the dressed-state prefactor
//! sin²χ/4:
//!
//! * [`gamma_nonmarkov`]: time-dependent rate
//!   `Γ(Ω′,t) = (sin²χ/4)(1/π)∫dω D(ω)·sin[(ω-Ω′)t]/(ω-Ω′)`;
//! * [`gamma_markov`]: its long-time limit `(sin²χ/4)·D(Ω′)`;
//! * [`gamma_scm`]: the self-consistent Born-Markov form, a Lorentzian
//!   convolution of D with damping width γ;
//! * [`gamma_scm_averaged`]: the Overhauser-averaged rate, a Gaussian
//!   average of `gamma_scm` over the detuning Δ with weight Ω²/(Ω²+Δ²).
//!
//! [`self_consistent_rate`] closes the loop: starting from
//! `γ = ¼D(Ω) + (3/2)Γ₁ + Γ₂` it iterates `γ ← Γ̃_SCM + (3/2)Γ₁ + Γ₂` until
//! the damping width and the averaged rate agree.

use rayon::prelude::*;

use crate::analysis::{one_over_e_time, q_factor, visibility_per_pi};
use crate::bath::{BathError, SpectralDensity};
use crate::quad::GaussHermite;
use crate::sequence::{linspace, run_rabi, NuclearRateSource, OverhauserEnsemble, Segment};
use crate::spin::{
    DressedAngle, Gamma1Model, NuclearRate, NuclearRateMode, RateTable, RelaxationParams,
};
use crate::units::{mhz_to_angular, ns_to_us, rate_mhz_to_inv_us, t_pi_ns};

#[derive(Debug, thiserror::Error)]
pub enum RelaxError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Bath(#[from] BathError),
    #[error("spectral grid too coarse for the sinc kernel: dω·t = {product:.3} rad exceeds π/2 (t = {t_ns} ns)")]
    GridTooCoarse { product: f64, t_ns: f64 },
    #[error("fixed-point iteration produced a non-finite rate after {iterations} iterations")]
    Diverged { iterations: usize },
    #[error("sequence error in q-curve pipeline: {0}")]
    Sequence(String),
    #[error("analysis error in q-curve pipeline: {0}")]
    Analysis(String),
}

/// Drive operating point for a rate evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateQuery {
    pub omega_mhz: f64,
    pub overhauser_mhz: f64,
}

impl RateQuery {
    pub fn omega_prime_mhz(&self) -> f64 {
        self.omega_mhz.hypot(self.overhauser_mhz)
    }

    pub fn chi(&self) -> DressedAngle {
        DressedAngle::from_drive(self.omega_mhz, self.overhauser_mhz)
    }
}

/// Non-Markovian rate Γ(Ω′,t) in MHz; `chi_rad` is the dressed mixing angle.
///
/// Trapezoid over the spectral grid with the removable ω = Ω′ node evaluated
/// analytically (kernel value t there). Errors when the grid cannot resolve
/// the sinc kernel at this t.
pub fn gamma_nonmarkov(
    d: &SpectralDensity,
    omega_prime_mhz: f64,
    chi_rad: f64,
    t_ns: f64,
) -> Result<f64, RelaxError> {
    if t_ns < 0.0 || !t_ns.is_finite() {
        return Err(RelaxError::Invalid("t must be ≥ 0 and finite".into()));
    }
    if t_ns == 0.0 {
        return Ok(0.0);
    }
    let t = ns_to_us(t_ns);
    let omega = d.omega_angular();
    let max_dw = omega.windows(2).map(|w| w[1] - w[0]).fold(0.0f64, f64::max);
    if max_dw * t > std::f64::consts::FRAC_PI_2 {
        return Err(RelaxError::GridTooCoarse {
            product: max_dw * t,
            t_ns,
        });
    }
    let wp = mhz_to_angular(omega_prime_mhz);
    let kernel = |w: f64| -> f64 {
        let x = w - wp;
        if x.abs() * t < 1e-8 {
            // sin(xt)/x → t(1 - (xt)²/6)
            t * (1.0 - (x * t) * (x * t) / 6.0)
        } else {
            (x * t).sin() / x
        }
    };
    let vals = d.values();
    let mut acc = 0.0;
    for i in 1..omega.len() {
        let f0 = vals[i - 1] * kernel(omega[i - 1]);
        let f1 = vals[i] * kernel(omega[i]);
        acc += 0.5 * (f0 + f1) * (omega[i] - omega[i - 1]);
    }
    let sin_chi = chi_rad.sin();
    Ok(sin_chi * sin_chi / 4.0 * acc / std::f64::consts::PI)
}

/// Markov-limit rate `(sin²χ/4)·D(Ω′)` in MHz. Errors when Ω′ lies outside
/// the tabulated grid.
pub fn gamma_markov(
    d: &SpectralDensity,
    omega_prime_mhz: f64,
    chi_rad: f64,
) -> Result<f64, RelaxError> {
    let sin_chi = chi_rad.sin();
    Ok(sin_chi * sin_chi / 4.0 * d.value_at_mhz(omega_prime_mhz)?)
}

/// Self-consistent Born-Markov rate: Lorentzian convolution of D with
/// damping width γ, exact for the piecewise-linear tabulated density.
pub fn gamma_scm(
    d: &SpectralDensity,
    omega_prime_mhz: f64,
    chi_rad: f64,
    gamma_damp_mhz: f64,
) -> Result<f64, RelaxError> {
    let (value, _) = gamma_scm_checked(d, omega_prime_mhz, chi_rad, gamma_damp_mhz)?;
    Ok(value)
}

/// As [`gamma_scm`], also reporting whether the ±40γ convolution window was
/// truncated by the grid edges.
pub fn gamma_scm_checked(
    d: &SpectralDensity,
    omega_prime_mhz: f64,
    chi_rad: f64,
    gamma_damp_mhz: f64,
) -> Result<(f64, bool), RelaxError> {
    if !(gamma_damp_mhz > 0.0) || !gamma_damp_mhz.is_finite() {
        return Err(RelaxError::Invalid("gamma_damp must be > 0".into()));
    }
    let wp = mhz_to_angular(omega_prime_mhz);
    let g = rate_mhz_to_inv_us(gamma_damp_mhz);
    let omega = d.omega_angular();
    let vals = d.values();
    let mut acc = 0.0;
    for i in 1..omega.len() {
        let (x1, x2) = (omega[i - 1], omega[i]);
        let (y1, y2) = (vals[i - 1], vals[i]);
        let b = (y2 - y1) / (x2 - x1);
        let a = y1 - b * x1;
        let (u1, u2) = (x1 - wp, x2 - wp);
        // ∫(a+bx)·(1/π)·γ/(γ²+(x-Ω′)²) dx over the segment.
        acc += (a + b * wp) * ((u2 / g).atan() - (u1 / g).atan())
            + 0.5 * b * g * ((g * g + u2 * u2).ln() - (g * g + u1 * u1).ln());
    }
    let truncated = wp - 40.0 * g < omega[0] || wp + 40.0 * g > *omega.last().unwrap();
    let sin_chi = chi_rad.sin();
    Ok((
        (sin_chi * sin_chi / 4.0 * acc / std::f64::consts::PI).max(0.0),
        truncated,
    ))
}

const GH_NODES_OVERHAUSER: usize = 41;

/// Overhauser-averaged self-consistent rate Γ̃_SCM(Ω): Gaussian average over
/// Δ of `gamma_scm` at Ω′(Δ) with the sin²χ = Ω²/(Ω²+Δ²) prefactor.
pub fn gamma_scm_averaged(
    d: &SpectralDensity,
    omega_mhz: f64,
    sigma_oh_mhz: f64,
    gamma_damp_mhz: f64,
) -> Result<f64, RelaxError> {
    if sigma_oh_mhz < 0.0 {
        return Err(RelaxError::Invalid("sigma_oh must be ≥ 0".into()));
    }
    if sigma_oh_mhz == 0.0 {
        return gamma_scm(d, omega_mhz, std::f64::consts::FRAC_PI_2, gamma_damp_mhz);
    }
    let gh = GaussHermite::new(GH_NODES_OVERHAUSER);
    let wsum: f64 = gh.weights.iter().sum();
    let mut acc = 0.0;
    for (&x, &w) in gh.nodes.iter().zip(&gh.weights) {
        let delta = std::f64::consts::SQRT_2 * sigma_oh_mhz * x;
        let q = RateQuery {
            omega_mhz,
            overhauser_mhz: delta,
        };
        acc += w / wsum * gamma_scm(d, q.omega_prime_mhz(), q.chi().chi, gamma_damp_mhz)?;
    }
    Ok(acc)
}

/// Fixed-point iteration record.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointReport {
    pub converged: bool,
    pub iterations: usize,
    /// Converged Overhauser-averaged nuclear rate Γ̃_SCM (MHz).
    pub rate_mhz: f64,
    /// Converged damping width γ = Γ̃_SCM + (3/2)Γ₁ + Γ₂ (MHz).
    pub gamma_damping_mhz: f64,
    /// Relative residual per iteration.
    pub residuals: Vec<f64>,
}

/// Solve the self-consistency loop for the nuclear rate at drive Ω.
///
/// Initialization `γ⁽⁰⁾ = ¼D(Ω) + (3/2)Γ₁ + Γ₂`, update
/// `γ ← Γ̃_SCM(γ) + (3/2)Γ₁ + Γ₂`, plain fixed point with 0.5-averaged
/// updates after the residual grows twice in a row.
pub fn self_consistent_rate(
    d: &SpectralDensity,
    omega_mhz: f64,
    sigma_oh_mhz: f64,
    gamma1_mhz: f64,
    gamma2_mhz: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(f64, FixedPointReport), RelaxError> {
    if !(tol > 0.0) {
        return Err(RelaxError::Invalid("tol must be > 0".into()));
    }
    if max_iter == 0 {
        return Err(RelaxError::Invalid("max_iter must be ≥ 1".into()));
    }
    let background = 1.5 * gamma1_mhz + gamma2_mhz;
    let d_at_omega = d.value_at_mhz(omega_mhz).unwrap_or(0.0);
    let mut gamma = (0.25 * d_at_omega + background).max(1e-12);
    let mut residuals = Vec::new();
    let mut rate = 0.0;
    let mut damped = false;
    let mut grew = 0u32;

    for iter in 1..=max_iter {
        rate = gamma_scm_averaged(d, omega_mhz, sigma_oh_mhz, gamma)?;
        if !rate.is_finite() {
            return Err(RelaxError::Diverged { iterations: iter });
        }
        let gamma_new = (rate + background).max(1e-12);
        let update = if damped {
            0.5 * (gamma_new + gamma)
        } else {
            gamma_new
        };
        let residual = (update - gamma).abs() / update.max(1e-12);
        if let Some(&prev) = residuals.last() {
            grew = if residual > prev { grew + 1 } else { 0 };
            if grew >= 2 {
                damped = true;
            }
        }
        residuals.push(residual);
        gamma = update;
        if residual < tol {
            let report = FixedPointReport {
                converged: true,
                iterations: iter,
                rate_mhz: rate,
                gamma_damping_mhz: gamma,
                residuals,
            };
            return Ok((rate, report));
        }
    }
    let report = FixedPointReport {
        converged: false,
        iterations: max_iter,
        rate_mhz: rate,
        gamma_damping_mhz: gamma,
        residuals,
    };
    Ok((rate, report))
}

pub const DEFAULT_FIXED_POINT_TOL: f64 = 1e-6;
pub const DEFAULT_FIXED_POINT_MAX_ITER: usize = 100;

/// One point of a rate sweep.
#[derive(Debug, Clone)]
pub struct RateCurvePoint {
    pub omega_mhz: f64,
    pub rate_mhz: f64,
    pub report: FixedPointReport,
}

/// Self-consistent nuclear rate vs drive strength; Γ₁ follows its model
/// (drive-proportional or fixed) per sweep point.
pub fn rate_curve(
    d: &SpectralDensity,
    omega_grid_mhz: &[f64],
    sigma_oh_mhz: f64,
    gamma1: Gamma1Model,
    gamma2_mhz: f64,
) -> Result<Vec<RateCurvePoint>, RelaxError> {
    omega_grid_mhz
        .par_iter()
        .map(|&omega| {
            let (rate, report) = self_consistent_rate(
                d,
                omega,
                sigma_oh_mhz,
                gamma1.rate_inv_us(omega),
                gamma2_mhz,
                DEFAULT_FIXED_POINT_TOL,
                DEFAULT_FIXED_POINT_MAX_ITER,
            )?;
            Ok(RateCurvePoint {
                omega_mhz: omega,
                rate_mhz: rate,
                report,
            })
        })
        .collect()
}

/// Build the per-segment, per-node nuclear rate closure for the sequence
/// runners: a constant (self-consistent Markov) rate per Overhauser node.
pub fn scm_node_rates<'a>(
    d: &'a SpectralDensity,
    gamma_damping_mhz: f64,
) -> impl Fn(&Segment, f64) -> NuclearRate + Sync + 'a {
    move |seg: &Segment, delta_oh_mhz: f64| {
        if seg.omega_mhz() == 0.0 {
            return NuclearRate::Off;
        }
        let q = RateQuery {
            omega_mhz: seg.omega_mhz(),
            overhauser_mhz: seg.delta_mhz() + delta_oh_mhz,
        };
        match gamma_scm(d, q.omega_prime_mhz(), q.chi().chi, gamma_damping_mhz) {
            Ok(rate) => NuclearRate::ConstantMhz(rate),
            Err(_) => NuclearRate::Off,
        }
    }
}

/// Non-Markovian variant: a tabulated Γ(Ω′,t) per node over the segment.
pub fn nonmarkov_node_rates<'a>(
    d: &'a SpectralDensity,
    t_max_ns: f64,
    n_samples: usize,
) -> impl Fn(&Segment, f64) -> NuclearRate + Sync + 'a {
    move |seg: &Segment, delta_oh_mhz: f64| {
        if seg.omega_mhz() == 0.0 {
            return NuclearRate::Off;
        }
        let q = RateQuery {
            omega_mhz: seg.omega_mhz(),
            overhauser_mhz: seg.delta_mhz() + delta_oh_mhz,
        };
        let wp = q.omega_prime_mhz();
        let chi = q.chi().chi;
        let table = RateTable::tabulate(
            |t_ns| gamma_nonmarkov(d, wp, chi, t_ns).unwrap_or(0.0),
            t_max_ns.max(1.0),
            n_samples.max(2),
        );
        match table {
            Ok(t) => NuclearRate::Table(t),
            Err(_) => NuclearRate::Off,
        }
    }
}

/// One point of the model Q(Ω) curve.
#[derive(Debug, Clone)]
pub struct QCurvePoint {
    pub omega_mhz: f64,
    pub q: f64,
    pub tau_1e_ns: f64,
    /// True when the visibility never reached 1/e within the simulated trace;
    /// `tau_1e_ns` (and `q`) are then lower bounds.
    pub censored: bool,
    /// Overhauser-averaged nuclear rate used at this point (MHz).
    pub nuclear_rate_mhz: f64,
    pub fixed_point: Option<FixedPointReport>,
}

/// Full model curve: time-domain Rabi traces with Γ₁ = α·Ω, Γ₂, Overhauser
/// broadening and (optionally) the self-consistent nuclear dissipator, reduced
/// to Q(Ω) and τ_1/e(Ω) through the visibility pipeline.
pub fn model_q_curve(
    omega_grid_mhz: &[f64],
    d: Option<&SpectralDensity>,
    alpha: f64,
    gamma2_mhz: f64,
    sigma_oh_mhz: f64,
    nuclear_mode: NuclearRateMode,
) -> Result<Vec<QCurvePoint>, RelaxError> {
    if nuclear_mode != NuclearRateMode::Off && d.is_none() {
        return Err(RelaxError::Invalid(
            "nuclear mode requires a spectral density".into(),
        ));
    }
    omega_grid_mhz
        .par_iter()
        .map(|&omega| q_point(omega, d, alpha, gamma2_mhz, sigma_oh_mhz, nuclear_mode))
        .collect()
}

fn q_point(
    omega_mhz: f64,
    d: Option<&SpectralDensity>,
    alpha: f64,
    gamma2_mhz: f64,
    sigma_oh_mhz: f64,
    nuclear_mode: NuclearRateMode,
) -> Result<QCurvePoint, RelaxError> {
    let gamma1 = alpha * omega_mhz;
    let (nuclear_rate, fixed_point) = match (nuclear_mode, d) {
        (NuclearRateMode::Off, _) | (_, None) => (0.0, None),
        (_, Some(dd)) => {
            let (rate, report) = self_consistent_rate(
                dd,
                omega_mhz,
                sigma_oh_mhz,
                gamma1,
                gamma2_mhz,
                DEFAULT_FIXED_POINT_TOL,
                DEFAULT_FIXED_POINT_MAX_ITER,
            )?;
            (rate, Some(report))
        }
    };

    // Trace long enough to catch the 1/e crossing of the slowest channel,
    // capped to keep low-Ω points tractable (inhomogeneous decay takes over
    // there long before the cap).
    let rate_est = (1.5 * gamma1 + 0.5 * gamma2_mhz + 1.5 * nuclear_rate).max(1e-3);
    let t_pi = t_pi_ns(omega_mhz);
    let t_max = (4000.0 / rate_est).clamp(60.0 * t_pi, 6000.0);
    let n = ((t_max / t_pi * 40.0) as usize).clamp(2000, 40_000);
    let t_grid = linspace(0.0, t_max, n);

    let relax = RelaxationParams {
        gamma1: Gamma1Model::Alpha(alpha),
        gamma2_mhz,
        nuclear: nuclear_mode,
    };
    let ensemble = OverhauserEnsemble::gauss_hermite(sigma_oh_mhz, 31);

    let trace = match (nuclear_mode, d, fixed_point.as_ref()) {
        (NuclearRateMode::SelfConsistentMarkov, Some(dd), Some(fp)) => {
            let src = scm_node_rates(dd, fp.gamma_damping_mhz);
            let src_ref: NuclearRateSource = &src;
            run_rabi(omega_mhz, 0.0, &t_grid, &relax, &ensemble, Some(src_ref))
        }
        (NuclearRateMode::NonMarkovian, Some(dd), _) => {
            let src = nonmarkov_node_rates(dd, t_max, 512);
            let src_ref: NuclearRateSource = &src;
            run_rabi(omega_mhz, 0.0, &t_grid, &relax, &ensemble, Some(src_ref))
        }
        _ => run_rabi(omega_mhz, 0.0, &t_grid, &relax, &ensemble, None),
    }
    .map_err(|e| RelaxError::Sequence(e.to_string()))?;

    let vis = visibility_per_pi(&trace.x, &trace.p_down, omega_mhz)
        .map_err(|e| RelaxError::Analysis(e.to_string()))?;
    let tau = one_over_e_time(&vis).map_err(|e| RelaxError::Analysis(e.to_string()))?;
    Ok(QCurvePoint {
        omega_mhz,
        q: q_factor(tau.tau_ns, omega_mhz),
        tau_1e_ns: tau.tau_ns,
        censored: tau.censored,
        nuclear_rate_mhz: nuclear_rate,
        fixed_point,
    })
}
