//! Metric extraction from simulated traces: per-π-period visibility, 1/e
//! decay times, Q factors, π-pulse fidelity, and the Gaussian/exponential
//! envelope fits.

use crate::fit::{levenberg_marquardt, LmResult};
use crate::units::t_pi_ns;

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("trace undersampled: {points_per_window} points per π-period, need ≥ {needed}")]
    Undersampled {
        points_per_window: usize,
        needed: usize,
    },
}

/// Rabi visibility per π-period window: max - min of the sampled trace over
/// each window of width t_π = 1/(2Ω).
#[derive(Debug, Clone)]
pub struct VisibilityTrace {
    pub window_centers_ns: Vec<f64>,
    pub visibility: Vec<f64>,
    pub window_width_ns: f64,
}

/// One fitted parameter with its 1σ uncertainty.
#[derive(Debug, Clone, Copy)]
pub struct FitParam {
    pub name: &'static str,
    pub value: f64,
    pub sigma: f64,
}

/// Generic fit report.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: Vec<FitParam>,
    pub residual_norm: f64,
    pub success: bool,
}

impl FitResult {
    pub fn value(&self, name: &str) -> Option<f64> {
        self.params.iter().find(|p| p.name == name).map(|p| p.value)
    }

    pub fn sigma(&self, name: &str) -> Option<f64> {
        self.params.iter().find(|p| p.name == name).map(|p| p.sigma)
    }
}

const MIN_POINTS_PER_WINDOW: usize = 20;

/// Per-window visibility of a Rabi trace sampled on `times_ns`.
///
/// Uses the per-window extremum of the sampled points directly (no
/// interpolation); the ≥ 20 points/window precondition keeps the resulting
/// bias below ~2e-3.
pub fn visibility_per_pi(
    times_ns: &[f64],
    p_down: &[f64],
    omega_mhz: f64,
) -> Result<VisibilityTrace, AnalysisError> {
    if times_ns.len() != p_down.len() || times_ns.is_empty() {
        return Err(AnalysisError::Invalid("mismatched or empty trace".into()));
    }
    if !(omega_mhz > 0.0) {
        return Err(AnalysisError::Invalid("omega must be > 0".into()));
    }
    let width = t_pi_ns(omega_mhz);
    let t0 = times_ns[0];
    let span = times_ns[times_ns.len() - 1] - t0;
    let n_windows = (span / width).floor() as usize;
    if n_windows == 0 {
        return Err(AnalysisError::Invalid(
            "trace shorter than one π-period".into(),
        ));
    }
    let per_window = times_ns.iter().filter(|&&t| t - t0 < width).count();
    if per_window < MIN_POINTS_PER_WINDOW {
        return Err(AnalysisError::Undersampled {
            points_per_window: per_window,
            needed: MIN_POINTS_PER_WINDOW,
        });
    }
    let mut centers = Vec::with_capacity(n_windows);
    let mut vis = Vec::with_capacity(n_windows);
    let mut idx = 0usize;
    for k in 0..n_windows {
        let hi = t0 + (k + 1) as f64 * width;
        let (mut vmax, mut vmin) = (f64::MIN, f64::MAX);
        let mut count = 0;
        while idx < times_ns.len() && times_ns[idx] < hi {
            vmax = vmax.max(p_down[idx]);
            vmin = vmin.min(p_down[idx]);
            idx += 1;
            count += 1;
        }
        if count == 0 {
            break;
        }
        centers.push(t0 + (k as f64 + 0.5) * width);
        vis.push(vmax - vmin);
    }
    Ok(VisibilityTrace {
        window_centers_ns: centers,
        visibility: vis,
        window_width_ns: width,
    })
}

/// 1/e decay time of a visibility trace.
#[derive(Debug, Clone, Copy)]
pub struct OneOverETime {
    pub tau_ns: f64,
    /// True when the visibility never crossed V(0)/e within the trace;
    /// `tau_ns` is then a lower bound (the last window center).
    pub censored: bool,
}

/// First crossing of V(0)/e, linearly interpolated between window centers.
/// On non-monotonic data the first crossing wins.
pub fn one_over_e_time(vis: &VisibilityTrace) -> Result<OneOverETime, AnalysisError> {
    if vis.visibility.is_empty() {
        return Err(AnalysisError::Invalid("empty visibility trace".into()));
    }
    let v0 = vis.visibility[0];
    if !(v0 > 0.0) {
        return Err(AnalysisError::Invalid(
            "initial visibility must be positive".into(),
        ));
    }
    let target = v0 / std::f64::consts::E;
    for k in 1..vis.visibility.len() {
        let (va, vb) = (vis.visibility[k - 1], vis.visibility[k]);
        if vb <= target {
            let (ta, tb) = (vis.window_centers_ns[k - 1], vis.window_centers_ns[k]);
            let frac = if va == vb {
                1.0
            } else {
                (va - target) / (va - vb)
            };
            return Ok(OneOverETime {
                tau_ns: ta + frac * (tb - ta),
                censored: false,
            });
        }
    }
    Ok(OneOverETime {
        tau_ns: *vis.window_centers_ns.last().unwrap(),
        censored: true,
    })
}

/// Q factor: 1/e time over the π-pulse time t_π = 1/(2Ω).
pub fn q_factor(tau_ns: f64, omega_mhz: f64) -> f64 {
    tau_ns / t_pi_ns(omega_mhz)
}

/// π-rotation fidelity f_π = ½(1 + e^{-1/Q}).
pub fn pi_fidelity(q: f64) -> f64 {
    0.5 * (1.0 + (-1.0 / q).exp())
}

/// σ (MHz) from the Gaussian Ramsey envelope time T₂* (ns): σ = 1/(√2·π·T₂*).
pub fn sigma_from_t2star(t2star_ns: f64) -> f64 {
    1e3 / (std::f64::consts::SQRT_2 * std::f64::consts::PI * t2star_ns)
}

/// T₂* (ns) from the Overhauser width σ (MHz); the relation is self-inverse.
pub fn t2star_from_sigma(sigma_mhz: f64) -> f64 {
    sigma_from_t2star(sigma_mhz)
}

/// Fit a rotating-frame Ramsey trace to ρ(t) = ρ₀/2·(1 ± e^{-(t/T₂*)²}).
///
/// The branch sign is taken from the data (fringe above or below ρ₀/2 at
/// short times). Parameters: `rho0`, `t2_star_ns`.
pub fn fit_ramsey_gaussian(times_ns: &[f64], p_down: &[f64]) -> Result<FitResult, AnalysisError> {
    if times_ns.len() != p_down.len() || times_ns.len() < 5 {
        return Err(AnalysisError::Invalid("need ≥ 5 samples".into()));
    }
    let mean = p_down.iter().sum::<f64>() / p_down.len() as f64;
    let ptp = p_down.iter().cloned().fold(f64::MIN, f64::max)
        - p_down.iter().cloned().fold(f64::MAX, f64::min);
    if ptp < 1e-9 {
        // Flat data carries no envelope information.
        return Ok(FitResult {
            params: vec![
                FitParam {
                    name: "rho0",
                    value: 2.0 * mean,
                    sigma: f64::NAN,
                },
                FitParam {
                    name: "t2_star_ns",
                    value: f64::NAN,
                    sigma: f64::NAN,
                },
            ],
            residual_norm: 0.0,
            success: false,
        });
    }
    let plus = p_down[0] >= mean;
    let sign = if plus { 1.0 } else { -1.0 };
    let rho0_guess = if plus {
        p_down[0].max(1e-6)
    } else {
        (2.0 * mean - p_down[0]).max(1e-6)
    };
    // First crossing of the 1/e envelope level gives the T₂* guess.
    let span = times_ns[times_ns.len() - 1] - times_ns[0];
    let target = 0.5 * rho0_guess * (1.0 + sign / std::f64::consts::E);
    let t2_guess = times_ns
        .iter()
        .zip(p_down)
        .find(|(_, &p)| if plus { p <= target } else { p >= target })
        .map(|(&t, _)| t.max(1e-3))
        .unwrap_or(0.5 * span);

    let model = move |t: f64, p: &[f64]| {
        let (rho0, t2) = (p[0], p[1]);
        0.5 * rho0 * (1.0 + sign * (-(t / t2) * (t / t2)).exp())
    };
    let out = levenberg_marquardt(model, times_ns, p_down, &[rho0_guess, t2_guess], 200);
    let success =
        fit_ok(&out, p_down.len(), ptp) && out.params[1] > 0.0 && out.params[1] < 50.0 * span;
    Ok(FitResult {
        params: vec![
            FitParam {
                name: "rho0",
                value: out.params[0],
                sigma: out.sigmas[0],
            },
            FitParam {
                name: "t2_star_ns",
                value: out.params[1].abs(),
                sigma: out.sigmas[1],
            },
        ],
        residual_norm: out.residual_norm,
        success,
    })
}

/// Fit `A·e^{-t/τ}` to a visibility decay. Parameters: `amplitude`, `tau_ns`.
pub fn fit_exponential(times_ns: &[f64], values: &[f64]) -> Result<FitResult, AnalysisError> {
    if times_ns.len() != values.len() || times_ns.len() < 3 {
        return Err(AnalysisError::Invalid("need ≥ 3 samples".into()));
    }
    let a_guess = values[0]
        .max(values.iter().cloned().fold(f64::MIN, f64::max))
        .max(1e-12);
    let ptp = values.iter().cloned().fold(f64::MIN, f64::max)
        - values.iter().cloned().fold(f64::MAX, f64::min);
    let span = times_ns[times_ns.len() - 1] - times_ns[0];
    if ptp < 1e-12 {
        return Ok(FitResult {
            params: vec![
                FitParam {
                    name: "amplitude",
                    value: a_guess,
                    sigma: f64::NAN,
                },
                FitParam {
                    name: "tau_ns",
                    value: f64::NAN,
                    sigma: f64::NAN,
                },
            ],
            residual_norm: 0.0,
            success: false,
        });
    }
    let target = a_guess / std::f64::consts::E;
    let tau_guess = times_ns
        .iter()
        .zip(values)
        .find(|(_, &v)| v <= target)
        .map(|(&t, _)| t.max(1e-3))
        .unwrap_or(0.5 * span);
    let model = |t: f64, p: &[f64]| p[0] * (-t / p[1]).exp();
    let out = levenberg_marquardt(model, times_ns, values, &[a_guess, tau_guess], 200);
    let success = fit_ok(&out, values.len(), ptp) && out.params[1] > 0.0;
    Ok(FitResult {
        params: vec![
            FitParam {
                name: "amplitude",
                value: out.params[0],
                sigma: out.sigmas[0],
            },
            FitParam {
                name: "tau_ns",
                value: out.params[1],
                sigma: out.sigmas[1],
            },
        ],
        residual_norm: out.residual_norm,
        success,
    })
}

fn fit_ok(out: &LmResult, n: usize, scale: f64) -> bool {
    out.converged && out.residual_norm / (n as f64).sqrt() < 0.25 * scale
}
