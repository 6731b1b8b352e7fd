//! Nuclear-spin bath: species-resolved spectral densities of the
//! strain-enabled nuclear transitions.
//!
//! The density is built from per-species distributions of the quadrupolar
//! coupling B_Q (Gaussian) and of the quadrupolar axis (uniform azimuth,
//! Gaussian polar angle θ′ about the growth axis, weighted by the solid-angle
//! measure sin θ′). Two routes are provided:
//!
//! * [`spectral_density`]: semi-analytic: the B_Q integral is eliminated
//!   against the transition-frequency delta functions, leaving one angular
//!   integral per (frequency, m) term;
//! * [`spectral_density_monte_carlo`]: direct sampling of nuclei, binning
//!   the delta-function transition lines onto the grid.
//!
//! The Δm = 1 lines sit at ω_nuc + (2m+1)·Δ_Q and the Δm = 2 lines at
//! 2ω_nuc + 4(m+1)·Δ_Q, with Δ_Q = B_Q(sin²θ - cos²θ/2), so the two features
//! broaden symmetrically around ω_nuc and 2ω_nuc.
//!
//! Shipped default species parameters are ILLUSTRATIVE: they are chosen so
//! the Hartmann–Hahn features fall in the intermediate drive window
//! (≈ 18–80 MHz) with experiment-scale decay rates, not fitted to any
//! particular device.

use rand::Rng;
use rand::SeedableRng;
use rayon::prelude::*;

use crate::quad::{gauss_legendre, integrate_adaptive};
use crate::units::mhz_to_angular;

#[derive(Debug, thiserror::Error)]
pub enum BathError {
    #[error("invalid species `{name}`: {reason}")]
    InvalidSpecies { name: String, reason: String },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("m = {m} out of range for I = {i}")]
    MOutOfRange { i: f64, m: f64 },
    #[error("frequency {omega_mhz} MHz outside the tabulated grid [{lo}, {hi}]")]
    OutsideGrid { omega_mhz: f64, lo: f64, hi: f64 },
}

/// Per-species bath parameters. Frequencies in MHz, angles in rad.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NuclearSpeciesConfig {
    pub name: String,
    /// Nuclear spin I (half-integer: 2I must be a positive integer).
    pub spin: f64,
    /// Number of nuclei of this species.
    pub count: f64,
    /// Mean-square hyperfine coupling ⟨A²⟩ (MHz²).
    pub a_sq_mhz2: f64,
    /// Quadrupolar coupling distribution (Gaussian).
    pub bq_mean_mhz: f64,
    pub bq_std_mhz: f64,
    /// Gaussian width of the quadrupolar-axis polar angle about the growth
    /// axis (rad).
    pub theta_p_std_rad: f64,
    /// Nuclear Zeeman splitting (MHz).
    pub omega_nuc_mhz: f64,
}

impl NuclearSpeciesConfig {
    pub fn validate(&self) -> Result<(), BathError> {
        let fail = |reason: &str| {
            Err(BathError::InvalidSpecies {
                name: self.name.clone(),
                reason: reason.into(),
            })
        };
        let two_i = 2.0 * self.spin;
        if !(two_i >= 1.0) || (two_i - two_i.round()).abs() > 1e-9 {
            return fail("spin must be a positive half-integer");
        }
        if !(self.count > 0.0) {
            return fail("count must be > 0");
        }
        if self.a_sq_mhz2 < 0.0 || self.bq_std_mhz < 0.0 || self.theta_p_std_rad < 0.0 {
            return fail("widths and ⟨A²⟩ must be ≥ 0");
        }
        if !(self.omega_nuc_mhz > 0.0) {
            return fail("omega_nuc must be > 0");
        }
        Ok(())
    }

    fn two_i(&self) -> i64 {
        (2.0 * self.spin).round() as i64
    }

    /// m values of the Δm = 1 sum (m = -I … I-1).
    fn m_values_d1(&self) -> Vec<f64> {
        let two_i = self.two_i();
        (-two_i..=two_i - 2)
            .step_by(2)
            .map(|t| t as f64 / 2.0)
            .collect()
    }

    /// m values of the Δm = 2 sum (m = -I … I-2).
    fn m_values_d2(&self) -> Vec<f64> {
        let two_i = self.two_i();
        (-two_i..=two_i - 4)
            .step_by(2)
            .map(|t| t as f64 / 2.0)
            .collect()
    }
}

/// Illustrative In/As defaults (see module docs).
pub fn default_species() -> Vec<NuclearSpeciesConfig> {
    vec![
        NuclearSpeciesConfig {
            name: "In115".into(),
            spin: 4.5,
            count: 17000.0,
            a_sq_mhz2: 0.036,
            bq_mean_mhz: 1.2,
            bq_std_mhz: 0.4,
            theta_p_std_rad: 0.35,
            omega_nuc_mhz: 33.0,
        },
        NuclearSpeciesConfig {
            name: "As75".into(),
            spin: 1.5,
            count: 17000.0,
            a_sq_mhz2: 0.075,
            bq_mean_mhz: 1.2,
            bq_std_mhz: 0.4,
            theta_p_std_rad: 0.35,
            omega_nuc_mhz: 21.0,
        },
    ]
}

/// Default frequency grid: 4096 uniform points on [0, 3·max ω_nuc].
pub fn default_grid_mhz(species: &[NuclearSpeciesConfig]) -> Vec<f64> {
    let wmax = species.iter().map(|s| s.omega_nuc_mhz).fold(1.0, f64::max);
    let n = 4096;
    (0..n)
        .map(|i| 3.0 * wmax * i as f64 / (n - 1) as f64)
        .collect()
}

/// `M₊(I, m) = √(I(I+1) - m(m+1))` for m ∈ {-I, …, I-1}.
pub fn m_plus(i: f64, m: f64) -> Result<f64, BathError> {
    let two_i = 2.0 * i;
    if !(two_i >= 1.0) || (two_i - two_i.round()).abs() > 1e-9 {
        return Err(BathError::Invalid(format!(
            "I must be a positive half-integer, got {i}"
        )));
    }
    let steps = m + i;
    if (steps - steps.round()).abs() > 1e-9 || m < -i - 1e-9 || m > i - 1.0 + 1e-9 {
        return Err(BathError::MOutOfRange { i, m });
    }
    Ok((i * (i + 1.0) - m * (m + 1.0)).max(0.0).sqrt())
}

/// Density of the quadrupolar angle θ ∈ [0, π] relative to the magnetic
/// field, obtained from the axially symmetric axis distribution by rotating
/// the axis into the xz-plane.
///
/// Evaluated through the substitution sin²θ′ = sin²θ + cos²θ·sin²ψ, which
/// removes the inverse-square-root endpoint singularity of the θ′ integral;
/// the remaining ψ integrand is smooth. A zero polar width degenerates to a
/// delta pair at θ ∈ {0, π} and is approximated by a 1e-4 rad Gaussian.
pub fn polar_angle_density(theta: f64, species: &NuclearSpeciesConfig) -> Result<f64, BathError> {
    Ok(PolarAngleDensity::new(species)?.eval(theta))
}

/// Reusable θ-density evaluator; amortizes the normalization integral and the
/// ψ quadrature rule over many evaluations.
pub struct PolarAngleDensity {
    table: PolarAngleTable,
}

impl PolarAngleDensity {
    pub fn new(species: &NuclearSpeciesConfig) -> Result<Self, BathError> {
        species.validate()?;
        Ok(PolarAngleDensity {
            table: PolarAngleTable::new(species, 64),
        })
    }

    /// Density value at θ ∈ [0, π] (clamped outside).
    pub fn eval(&self, theta: f64) -> f64 {
        self.table
            .eval_exact(theta.clamp(0.0, std::f64::consts::PI))
    }
}

/// Reusable evaluator of the θ density (cached normalization and ψ rule).
struct PolarAngleTable {
    std: f64,
    norm: f64,
    psi_nodes: Vec<f64>,
    psi_weights: Vec<f64>,
}

const DEGENERATE_POLAR_STD: f64 = 1e-4;

impl PolarAngleTable {
    fn new(species: &NuclearSpeciesConfig, n_psi: usize) -> Self {
        let std = if species.theta_p_std_rad == 0.0 {
            DEGENERATE_POLAR_STD
        } else {
            species.theta_p_std_rad
        };
        // Z = ∫₀^π exp(-θ′²/2s²) sin θ′ dθ′ (solid-angle normalization).
        let (norm, _) = integrate_adaptive(
            |tp: f64| (-0.5 * (tp / std) * (tp / std)).exp() * tp.sin(),
            0.0,
            std::f64::consts::PI,
            1e-12,
            1e-300,
            400,
        );
        let (psi_nodes, psi_weights) = gauss_legendre(n_psi);
        PolarAngleTable {
            std,
            norm,
            psi_nodes,
            psi_weights,
        }
    }

    fn eval_exact(&self, theta: f64) -> f64 {
        let cos_t = theta.cos();
        if cos_t == 0.0 {
            return 0.0;
        }
        let sin2_t = theta.sin() * theta.sin();
        let cos2_t = cos_t * cos_t;
        // ψ ∈ [0, π/2] mapped from [-1, 1].
        let half = 0.25 * std::f64::consts::PI;
        let mut acc = 0.0;
        for (&x, &w) in self.psi_nodes.iter().zip(&self.psi_weights) {
            let psi = half * (x + 1.0);
            let s = psi.sin();
            let sin_tp = (sin2_t + cos2_t * s * s).sqrt().min(1.0);
            let tp = sin_tp.asin();
            let g = (-0.5 * (tp / self.std) * (tp / self.std)).exp()
                + (-0.5
                    * ((std::f64::consts::PI - tp) / self.std)
                    * ((std::f64::consts::PI - tp) / self.std))
                    .exp();
            acc += w * g;
        }
        acc *= half;
        cos_t.abs() / std::f64::consts::PI * acc / self.norm
    }

    /// Dense lookup table for the hot loops of the spectral-density integrals.
    fn tabulate(&self, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| self.eval_exact(std::f64::consts::PI * i as f64 / (n - 1) as f64))
            .collect()
    }
}

fn interp_uniform(table: &[f64], x: f64, x_max: f64) -> f64 {
    let s = (x / x_max).clamp(0.0, 1.0) * (table.len() - 1) as f64;
    let i = (s.floor() as usize).min(table.len() - 2);
    let frac = s - i as f64;
    table[i] * (1.0 - frac) + table[i + 1] * frac
}

/// Draw one quadrupolar angle θ from the axis construction: θ′ from the
/// solid-angle-weighted Gaussian, φ′ uniform, then sin θ = sin θ′·cos φ′ with
/// the negative branch folded to (π/2, π].
pub fn sample_quadrupolar_polar_angle<R: Rng>(theta_p_std_rad: f64, rng: &mut R) -> f64 {
    let std = if theta_p_std_rad == 0.0 {
        DEGENERATE_POLAR_STD
    } else {
        theta_p_std_rad
    };
    // Rejection from a truncated Rayleigh proposal; acceptance sin θ′/θ′.
    let cap = 1.0 - (-0.5 * (std::f64::consts::PI / std) * (std::f64::consts::PI / std)).exp();
    let theta_p = loop {
        let u: f64 = rng.random();
        let tp = std * (-2.0 * (1.0 - u * cap).ln()).sqrt();
        let accept = if tp > 0.0 { tp.sin() / tp } else { 1.0 };
        if rng.random::<f64>() < accept {
            break tp;
        }
    };
    let phi_p: f64 = rng.random::<f64>() * std::f64::consts::TAU;
    let u = theta_p.sin() * phi_p.cos();
    if u >= 0.0 {
        u.asin()
    } else {
        std::f64::consts::PI + u.asin()
    }
}

/// Per-species Δm = 1 and Δm = 2 components (internal rate units, 1/µs).
#[derive(Debug, Clone)]
pub struct SpeciesDensity {
    pub name: String,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
}

/// Sampled spectral density D(ω) = Σ_s D_s⁽¹⁾(ω) + D_s⁽²⁾(ω).
///
/// The frequency grid is stored in internal angular units (rad/µs) and the
/// values as rates (1/µs ≡ MHz at the API boundary); accessors convert.
#[derive(Debug, Clone)]
pub struct SpectralDensity {
    omega: Vec<f64>,
    total: Vec<f64>,
    species: Vec<SpeciesDensity>,
    pub warnings: Vec<String>,
}

impl SpectralDensity {
    fn from_species(
        omega_mhz: &[f64],
        species: Vec<SpeciesDensity>,
        warnings: Vec<String>,
    ) -> Result<Self, BathError> {
        if omega_mhz.len() < 2 || omega_mhz.windows(2).any(|w| w[1] <= w[0]) {
            return Err(BathError::Invalid(
                "frequency grid must be strictly increasing with ≥ 2 points".into(),
            ));
        }
        let mut total = vec![0.0; omega_mhz.len()];
        for sp in &species {
            for (t, (d1, d2)) in total.iter_mut().zip(sp.d1.iter().zip(&sp.d2)) {
                *t += d1 + d2;
            }
        }
        Ok(SpectralDensity {
            omega: omega_mhz.iter().map(|&f| mhz_to_angular(f)).collect(),
            total,
            species,
            warnings,
        })
    }

    /// Build directly from external-unit arrays (used by tests and FFI).
    pub fn from_values_mhz(omega_mhz: &[f64], values_mhz: &[f64]) -> Result<Self, BathError> {
        if omega_mhz.len() != values_mhz.len() {
            return Err(BathError::Invalid("grid/value length mismatch".into()));
        }
        if values_mhz.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(BathError::Invalid("density values must be ≥ 0".into()));
        }
        let sp = SpeciesDensity {
            name: "total".into(),
            d1: values_mhz.to_vec(),
            d2: vec![0.0; values_mhz.len()],
        };
        Self::from_species(omega_mhz, vec![sp], Vec::new())
    }

    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }

    /// Frequency grid in MHz.
    pub fn omega_mhz(&self) -> Vec<f64> {
        self.omega
            .iter()
            .map(|&w| crate::units::angular_to_mhz(w))
            .collect()
    }

    /// Grid in internal angular units (rad/µs).
    pub fn omega_angular(&self) -> &[f64] {
        &self.omega
    }

    /// Total density values (rate units; 1/µs ≡ MHz).
    pub fn values(&self) -> &[f64] {
        &self.total
    }

    pub fn species(&self) -> &[SpeciesDensity] {
        &self.species
    }

    /// Linear interpolation of the total density at an angular frequency.
    pub fn value_at_angular(&self, w: f64) -> Result<f64, BathError> {
        let (lo, hi) = (self.omega[0], *self.omega.last().unwrap());
        if w < lo || w > hi {
            return Err(BathError::OutsideGrid {
                omega_mhz: crate::units::angular_to_mhz(w),
                lo: crate::units::angular_to_mhz(lo),
                hi: crate::units::angular_to_mhz(hi),
            });
        }
        let idx = match self.omega.binary_search_by(|x| x.partial_cmp(&w).unwrap()) {
            Ok(i) => return Ok(self.total[i]),
            Err(i) => i,
        };
        let (wa, wb) = (self.omega[idx - 1], self.omega[idx]);
        let f = (w - wa) / (wb - wa);
        Ok(self.total[idx - 1] * (1.0 - f) + self.total[idx] * f)
    }

    /// Linear interpolation at an ordinary frequency in MHz.
    pub fn value_at_mhz(&self, f_mhz: f64) -> Result<f64, BathError> {
        self.value_at_angular(mhz_to_angular(f_mhz))
    }

    /// Trapezoid integral ∫D dω over the grid (internal units).
    pub fn integrated(&self) -> f64 {
        trapezoid(&self.omega, &self.total)
    }
}

pub(crate) fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xw, yw)| 0.5 * (yw[0] + yw[1]) * (xw[1] - xw[0]))
        .sum()
}

const MAGIC_EPS: f64 = 1e-12;
const BQ_GAUSS_CUTOFF: f64 = 40.0;

/// θ-intervals on [0, π/2] where B* = s/X(θ) falls inside the B_Q window
/// [b_lo, b_hi], with X(θ) = sin²θ - cos²θ/2 ∈ [-1/2, 1].
///
/// X is monotone on [0, π/2], so each sign branch of B* contributes at most
/// one interval; the map back is sin²θ = (2X+1)/3.
fn support_theta_intervals(s: f64, b_lo: f64, b_hi: f64) -> Vec<(f64, f64)> {
    // Branch u = X > 0 reaches B ∈ [s, ∞) for s > 0 (mirrored for s < 0);
    // branch u < 0 reaches the opposite sign through B(-1/2) = -2s.
    let branches = if s > 0.0 {
        [(s, f64::INFINITY), (f64::NEG_INFINITY, -2.0 * s)]
    } else {
        [(f64::NEG_INFINITY, s), (-2.0 * s, f64::INFINITY)]
    };
    let theta_of_u = |u: f64| -> f64 { (((2.0 * u + 1.0) / 3.0).clamp(0.0, 1.0)).sqrt().asin() };
    let mut out = Vec::new();
    for (lo_b, hi_b) in branches {
        let lo = b_lo.max(lo_b);
        let hi = b_hi.min(hi_b);
        if !(lo < hi) {
            continue;
        }
        // 0 ∉ [lo, hi] by construction, so u = s/B is monotone here.
        let (u1, u2) = (s / lo, s / hi);
        let (ua, ub) = if u1 <= u2 { (u1, u2) } else { (u2, u1) };
        let (ua, ub) = (ua.max(-0.5), ub.min(1.0));
        if ua < ub {
            out.push((theta_of_u(ua), theta_of_u(ub)));
        }
    }
    out
}

/// Semi-analytic spectral density on `omega_grid_mhz` (Δm = 1 and Δm = 2
/// terms per species, quadrupolar-angle integral by adaptive Gauss–Kronrod).
pub fn spectral_density(
    species: &[NuclearSpeciesConfig],
    omega_grid_mhz: &[f64],
) -> Result<SpectralDensity, BathError> {
    if species.is_empty() {
        return Err(BathError::Invalid("need at least one species".into()));
    }
    for s in species {
        s.validate()?;
        if s.bq_std_mhz == 0.0 {
            return Err(BathError::InvalidSpecies {
                name: s.name.clone(),
                reason: "the semi-analytic route needs bq_std > 0 (use the Monte-Carlo oracle for delta-like B_Q)".into(),
            });
        }
    }
    let mut warnings = Vec::new();
    let needed = 2.5 * species.iter().map(|s| s.omega_nuc_mhz).fold(0.0, f64::max);
    if *omega_grid_mhz.last().unwrap_or(&0.0) < needed {
        warnings.push(format!(
            "grid ends at {} MHz, below 2.5·max(omega_nuc) = {needed} MHz; the Δm = 2 features may be truncated",
            omega_grid_mhz.last().unwrap_or(&0.0)
        ));
    }

    let per_species: Vec<SpeciesDensity> = species
        .iter()
        .map(|s| species_density(s, omega_grid_mhz))
        .collect();
    SpectralDensity::from_species(omega_grid_mhz, per_species, warnings)
}

fn species_density(s: &NuclearSpeciesConfig, grid_mhz: &[f64]) -> SpeciesDensity {
    let polar = PolarAngleTable::new(s, 64);
    let p1_table = polar.tabulate(2001);
    let w_nuc = mhz_to_angular(s.omega_nuc_mhz);
    let bq_mean = mhz_to_angular(s.bq_mean_mhz);
    let bq_std = mhz_to_angular(s.bq_std_mhz);
    let a_sq = mhz_to_angular(1.0).powi(2) * s.a_sq_mhz2;
    let i_s = s.spin;
    let pref = a_sq * s.count / (2.0 * i_s + 1.0);

    // (coefficient c, weight) pairs: Δm=1 lines at ω_nuc + c·Δ_Q with
    // c = 2m+1; Δm=2 lines at 2ω_nuc + c·Δ_Q with c = 4(m+1).
    let d1_terms: Vec<(f64, f64)> = s
        .m_values_d1()
        .iter()
        .filter_map(|&m| {
            let c = 2.0 * m + 1.0;
            if c == 0.0 {
                return None; // selection factor (2m+1)² kills this term
            }
            let w = (m_plus(i_s, m).unwrap() * c).powi(2);
            Some((c, w))
        })
        .collect();
    let d2_terms: Vec<(f64, f64)> = s
        .m_values_d2()
        .iter()
        .filter_map(|&m| {
            let c = 4.0 * (m + 1.0);
            if c == 0.0 {
                return None;
            }
            let w = (m_plus(i_s, m).unwrap() * m_plus(i_s, m + 1.0).unwrap()).powi(2);
            Some((c, w))
        })
        .collect();

    let (gl_nodes, gl_weights) = gauss_legendre(24);
    let eval = |center: f64, terms: &[(f64, f64)], half: bool, omega: f64| -> f64 {
        // ω̃ = 0 exactly hits the removable point of the line shape; nudge off.
        let mut wt = omega - center;
        let guard = 1e-9 * w_nuc;
        if wt.abs() < guard {
            wt = if wt < 0.0 { -guard } else { guard };
        }
        let mut acc = 0.0;
        for &(c, weight) in terms {
            let integrand = |theta: f64| -> f64 {
                let sin2 = theta.sin() * theta.sin();
                let x = sin2 - 0.5 * (1.0 - sin2);
                let cx = c * x;
                if cx.abs() < MAGIC_EPS {
                    return 0.0; // integrand vanishes at the magic angle
                }
                let b_star = wt / cx;
                let z = (b_star - bq_mean) / bq_std;
                if z.abs() > BQ_GAUSS_CUTOFF {
                    return 0.0;
                }
                let p2 = (-0.5 * z * z).exp() / (bq_std * (2.0 * std::f64::consts::PI).sqrt());
                let p1 = interp_uniform(&p1_table, theta, std::f64::consts::PI);
                let geom = if half {
                    // Δm = 2: (ω̃·cos²θ / (ω_nuc·c·X))²
                    (1.0 - sin2) * (1.0 - sin2)
                } else {
                    // Δm = 1: (ω̃·sin 2θ / (ω_nuc·c·X))², sin²2θ = 4 sin²θ cos²θ
                    4.0 * sin2 * (1.0 - sin2)
                };
                let ratio = wt / (w_nuc * cx);
                p1 * p2 * geom * ratio * ratio / cx.abs()
            };
            // The Gaussian p₂ confines the support to θ-intervals where
            // B* = ω̃/(c·X(θ)) stays inside the B_Q window. Subdivide the
            // window at fixed z-scores so each θ-interval carries a
            // comparable share of the Gaussian, then integrate each with a
            // fixed Legendre rule.
            const Z_SPLITS: [f64; 11] =
                [-8.0, -5.0, -3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0, 5.0, 8.0];
            let mut term = 0.0;
            for zw in Z_SPLITS.windows(2) {
                for (lo, hi) in support_theta_intervals(
                    wt / c,
                    bq_mean + zw[0] * bq_std,
                    bq_mean + zw[1] * bq_std,
                ) {
                    if hi - lo < 1e-15 {
                        continue;
                    }
                    let c_half = 0.5 * (hi - lo);
                    let mid = 0.5 * (hi + lo);
                    let mut panel = 0.0;
                    for (&xn, &wn) in gl_nodes.iter().zip(&gl_weights) {
                        panel += wn * integrand(mid + c_half * xn);
                    }
                    term += panel * c_half;
                }
            }
            acc += weight * term * 2.0; // θ ∈ [π/2, π] mirror
        }
        // Marginalizing the B_Q delta leaves (π/2)·p₂(B*)·|c·X|⁻¹ for both
        // components when the full line coefficient c is kept in the Jacobian.
        (std::f64::consts::PI / 2.0 * pref * acc).max(0.0)
    };

    let d1: Vec<f64> = grid_mhz
        .par_iter()
        .map(|&f| eval(w_nuc, &d1_terms, false, mhz_to_angular(f)))
        .collect();
    let d2: Vec<f64> = grid_mhz
        .par_iter()
        .map(|&f| eval(2.0 * w_nuc, &d2_terms, true, mhz_to_angular(f)))
        .collect();
    SpeciesDensity {
        name: s.name.clone(),
        d1,
        d2,
    }
}

/// Monte-Carlo evaluation of the same density: sample nuclei, place the
/// delta-function lines, bin onto the grid.
#[derive(Debug, Clone, Copy)]
pub struct MonteCarloOptions {
    pub nuclei_per_species: usize,
    pub seed: u64,
}

impl Default for MonteCarloOptions {
    fn default() -> Self {
        MonteCarloOptions {
            nuclei_per_species: 100_000,
            seed: 0x5eed,
        }
    }
}

/// Monte-Carlo spectral density plus the weight fraction that fell outside
/// the grid.
#[derive(Debug, Clone)]
pub struct MonteCarloDensity {
    pub density: SpectralDensity,
    pub dropped_weight_fraction: f64,
}

pub fn spectral_density_monte_carlo(
    species: &[NuclearSpeciesConfig],
    omega_grid_mhz: &[f64],
    opts: &MonteCarloOptions,
) -> Result<MonteCarloDensity, BathError> {
    if species.is_empty() {
        return Err(BathError::Invalid("need at least one species".into()));
    }
    if omega_grid_mhz.len() < 2 {
        return Err(BathError::Invalid("grid needs ≥ 2 points".into()));
    }
    if opts.nuclei_per_species == 0 {
        return Err(BathError::Invalid("need ≥ 1 nucleus per species".into()));
    }
    for s in species {
        s.validate()?;
    }
    let grid_ang: Vec<f64> = omega_grid_mhz.iter().map(|&f| mhz_to_angular(f)).collect();
    let mut total_weight = 0.0;
    let mut dropped = 0.0;
    let mut per_species = Vec::with_capacity(species.len());

    for (sp_idx, s) in species.iter().enumerate() {
        let w_nuc = mhz_to_angular(s.omega_nuc_mhz);
        let a_rms = (mhz_to_angular(1.0).powi(2) * s.a_sq_mhz2).sqrt();
        let i_s = s.spin;
        let n = opts.nuclei_per_species;
        let norm = s.count / n as f64 / (2.0 * i_s + 1.0) * std::f64::consts::PI / 2.0;
        let mut d1 = vec![0.0; grid_ang.len()];
        let mut d2 = vec![0.0; grid_ang.len()];

        for j in 0..n {
            // Counter-based per-nucleus stream: independent of any loop order.
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(opts.seed ^ (sp_idx as u64) << 48);
            rng.set_stream(j as u64);
            let bq = mhz_to_angular(s.bq_mean_mhz)
                + mhz_to_angular(s.bq_std_mhz)
                    * <rand_distr::StandardNormal as rand_distr::Distribution<f64>>::sample(
                        &rand_distr::StandardNormal,
                        &mut rng,
                    );
            let theta = sample_quadrupolar_polar_angle(s.theta_p_std_rad, &mut rng);
            let a_nc = a_rms * bq / w_nuc;
            let sin2 = theta.sin() * theta.sin();
            let x = sin2 - 0.5 * (1.0 - sin2);
            let delta_q = bq * x;
            let sin_2t_sq = 4.0 * sin2 * (1.0 - sin2);
            let cos2_sq = (1.0 - sin2) * (1.0 - sin2);

            for &m in &s.m_values_d1() {
                let c = 2.0 * m + 1.0;
                if c == 0.0 {
                    continue;
                }
                let weight = norm * a_nc * a_nc * sin_2t_sq * (m_plus(i_s, m).unwrap() * c).powi(2);
                total_weight += weight;
                dropped += bin_delta(&grid_ang, w_nuc + c * delta_q, weight, &mut d1);
            }
            for &m in &s.m_values_d2() {
                let c = 4.0 * (m + 1.0);
                if c == 0.0 {
                    continue;
                }
                let weight = norm
                    * a_nc
                    * a_nc
                    * cos2_sq
                    * (m_plus(i_s, m).unwrap() * m_plus(i_s, m + 1.0).unwrap()).powi(2);
                total_weight += weight;
                dropped += bin_delta(&grid_ang, 2.0 * w_nuc + c * delta_q, weight, &mut d2);
            }
        }
        per_species.push(SpeciesDensity {
            name: s.name.clone(),
            d1,
            d2,
        });
    }
    let density = SpectralDensity::from_species(omega_grid_mhz, per_species, Vec::new())?;
    Ok(MonteCarloDensity {
        density,
        dropped_weight_fraction: if total_weight > 0.0 {
            dropped / total_weight
        } else {
            0.0
        },
    })
}

/// Add one delta line as density on the (irregular) grid bins; returns the
/// dropped weight when the line falls outside the grid.
fn bin_delta(grid: &[f64], pos: f64, weight: f64, out: &mut [f64]) -> f64 {
    let n = grid.len();
    if pos < grid[0] || pos > grid[n - 1] {
        return weight;
    }
    let idx = match grid.binary_search_by(|x| x.partial_cmp(&pos).unwrap()) {
        Ok(i) => i,
        Err(i) => i - 1,
    }
    .min(n - 2);
    // Bin of point i covers [midpoint(i-1,i), midpoint(i,i+1)].
    let (a, b) = (grid[idx], grid[idx + 1]);
    let f = (pos - a) / (b - a);
    let target = if f < 0.5 { idx } else { idx + 1 };
    let lo = if target == 0 {
        grid[0]
    } else {
        0.5 * (grid[target - 1] + grid[target])
    };
    let hi = if target == n - 1 {
        grid[n - 1]
    } else {
        0.5 * (grid[target] + grid[target + 1])
    };
    out[target] += weight / (hi - lo);
    0.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_species(theta_std: f64) -> NuclearSpeciesConfig {
        NuclearSpeciesConfig {
            name: "test".into(),
            spin: 1.5,
            count: 1000.0,
            a_sq_mhz2: 0.25,
            bq_mean_mhz: 2.0,
            bq_std_mhz: 0.5,
            theta_p_std_rad: theta_std,
            omega_nuc_mhz: 30.0,
        }
    }

    #[test]
    fn m_plus_values() {
        assert!((m_plus(0.5, -0.5).unwrap() - 1.0).abs() < 1e-12);
        assert!((m_plus(1.5, 0.5).unwrap() - 3.0f64.sqrt()).abs() < 1e-12);
        assert!((m_plus(4.5, 3.5).unwrap() - 3.0).abs() < 1e-12);
        assert!(matches!(
            m_plus(1.5, 1.5),
            Err(BathError::MOutOfRange { .. })
        ));
        assert!(matches!(
            m_plus(1.5, -2.5),
            Err(BathError::MOutOfRange { .. })
        ));
        assert!(matches!(
            m_plus(1.5, 0.0),
            Err(BathError::MOutOfRange { .. })
        ));
    }

    #[test]
    fn selection_rule_kills_half_integer_central_term() {
        // For half-integer I the m = -1/2 term carries (2m+1)² = 0.
        let s = test_species(0.3);
        let kept: Vec<f64> = s
            .m_values_d1()
            .iter()
            .filter(|&&m| 2.0 * m + 1.0 != 0.0)
            .cloned()
            .collect();
        assert_eq!(s.m_values_d1().len(), 3);
        assert_eq!(kept.len(), 2); // m = -1/2 dropped
    }

    #[test]
    fn polar_density_normalizes() {
        for std in [0.05, 0.2, 0.5] {
            let s = test_species(std);
            let p = PolarAngleDensity::new(&s).unwrap();
            let (integral, _) = integrate_adaptive(
                |t| p.eval(t),
                0.0,
                std::f64::consts::FRAC_PI_2,
                1e-9,
                1e-12,
                600,
            );
            // Symmetric about π/2.
            assert!(
                (2.0 * integral - 1.0).abs() < 1e-6,
                "std={std}: ∫p = {}",
                2.0 * integral
            );
        }
    }

    #[test]
    fn polar_density_degenerate_concentrates_at_growth_axis() {
        let s = test_species(1e-3);
        let p = PolarAngleDensity::new(&s).unwrap();
        let (near0, _) = integrate_adaptive(|t| p.eval(t), 0.0, 0.05, 1e-9, 1e-12, 400);
        let (nearpi, _) = integrate_adaptive(
            |t| p.eval(t),
            std::f64::consts::PI - 0.05,
            std::f64::consts::PI,
            1e-9,
            1e-12,
            400,
        );
        assert!(
            near0 + nearpi > 0.95,
            "mass near θ ∈ {{0, π}}: {}",
            near0 + nearpi
        );
    }

    #[test]
    fn polar_density_matches_monte_carlo_histogram() {
        let s = test_species(0.3);
        let n = 200_000usize;
        let bins = 50usize;
        let mut counts = vec![0usize; bins];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(314159);
        for _ in 0..n {
            let theta = sample_quadrupolar_polar_angle(s.theta_p_std_rad, &mut rng);
            let b = ((theta / std::f64::consts::PI) * bins as f64) as usize;
            counts[b.min(bins - 1)] += 1;
        }
        let width = std::f64::consts::PI / bins as f64;
        let p = PolarAngleDensity::new(&s).unwrap();
        for (b, &count) in counts.iter().enumerate() {
            let (p_bin, _) = integrate_adaptive(
                |t| p.eval(t),
                b as f64 * width,
                (b + 1) as f64 * width,
                1e-9,
                1e-13,
                200,
            );
            let expect = n as f64 * p_bin;
            let sigma = (n as f64 * p_bin * (1.0 - p_bin)).sqrt().max(1.0);
            assert!(
                (count as f64 - expect).abs() <= 3.0 * sigma,
                "bin {b}: count {count}, expected {expect:.1} ± {sigma:.1}"
            );
        }
    }

    #[test]
    fn density_scales_linearly_in_count_and_a_sq() {
        let grid: Vec<f64> = (0..256).map(|i| 90.0 * i as f64 / 255.0).collect();
        let s = test_species(0.3);
        let base = spectral_density(std::slice::from_ref(&s), &grid).unwrap();
        let mut doubled = s.clone();
        doubled.count *= 2.0;
        let d2 = spectral_density(&[doubled], &grid).unwrap();
        let mut asq = s.clone();
        asq.a_sq_mhz2 *= 3.0;
        let d3 = spectral_density(&[asq], &grid).unwrap();
        for i in 0..grid.len() {
            if base.values()[i] > 1e-300 {
                assert!((d2.values()[i] / base.values()[i] - 2.0).abs() < 1e-9);
                assert!((d3.values()[i] / base.values()[i] - 3.0).abs() < 1e-9);
            } else {
                assert!(d2.values()[i] < 1e-250 && d3.values()[i] < 1e-250);
            }
        }
    }

    #[test]
    fn two_species_density_is_additive() {
        let grid: Vec<f64> = (0..200).map(|i| 95.0 * i as f64 / 199.0).collect();
        let a = test_species(0.3);
        let mut b = test_species(0.25);
        b.name = "other".into();
        b.omega_nuc_mhz = 24.0;
        b.spin = 4.5;
        let da = spectral_density(std::slice::from_ref(&a), &grid).unwrap();
        let db = spectral_density(std::slice::from_ref(&b), &grid).unwrap();
        let dab = spectral_density(&[a, b], &grid).unwrap();
        for i in 0..grid.len() {
            let sum = da.values()[i] + db.values()[i];
            assert!((dab.values()[i] - sum).abs() <= 1e-12 * sum.max(1e-30));
        }
    }

    /// Analytic total line weights W₁, W₂ of one species from the raw
    /// delta-sum: ⟨A²⟩N/(2I+1)·⟨B²⟩/ω_nuc²·(π/2)·⟨angular⟩·Σ[M...]², with the
    /// angular moments computed by direct 2-D quadrature over (θ′, φ′),
    /// independent of the transformed one-angle density.
    fn analytic_line_weights(s: &NuclearSpeciesConfig) -> (f64, f64) {
        // Angular moments by direct 2-D quadrature over (θ′, φ′):
        // sin²θ = sin²θ′ cos²φ′ with θ′ ~ solid-angle Gaussian.
        let std = s.theta_p_std_rad;
        let gauss = |tp: f64| (-0.5 * (tp / std) * (tp / std)).exp() * tp.sin();
        let (z, _) = integrate_adaptive(gauss, 0.0, std::f64::consts::PI, 1e-12, 1e-300, 400);
        let moment = |f: &dyn Fn(f64) -> f64| -> f64 {
            let (v, _) = integrate_adaptive(
                |tp: f64| {
                    let (inner, _) = integrate_adaptive(
                        |phi: f64| {
                            let s2 = (tp.sin() * phi.cos()).powi(2);
                            f(s2)
                        },
                        0.0,
                        std::f64::consts::TAU,
                        1e-10,
                        1e-13,
                        200,
                    );
                    gauss(tp) * inner / std::f64::consts::TAU
                },
                0.0,
                std::f64::consts::PI,
                1e-10,
                1e-300,
                400,
            );
            v / z
        };
        let sin2_2t = moment(&|s2| 4.0 * s2 * (1.0 - s2));
        let cos4 = moment(&|s2| (1.0 - s2) * (1.0 - s2));

        let w_nuc = mhz_to_angular(s.omega_nuc_mhz);
        let bq_sq = mhz_to_angular(s.bq_mean_mhz).powi(2) + mhz_to_angular(s.bq_std_mhz).powi(2);
        let a_sq = mhz_to_angular(1.0).powi(2) * s.a_sq_mhz2;
        let pref = a_sq * s.count / (2.0 * s.spin + 1.0) * bq_sq / (w_nuc * w_nuc);
        let sum1: f64 = s
            .m_values_d1()
            .iter()
            .map(|&m| (m_plus(s.spin, m).unwrap() * (2.0 * m + 1.0)).powi(2))
            .sum();
        let sum2: f64 = s
            .m_values_d2()
            .iter()
            .map(|&m| (m_plus(s.spin, m).unwrap() * m_plus(s.spin, m + 1.0).unwrap()).powi(2))
            .sum();
        let w1_expect = std::f64::consts::PI / 2.0 * pref * sin2_2t * sum1;
        let w2_expect = std::f64::consts::PI / 2.0 * pref * cos4 * sum2;
        (w1_expect, w2_expect)
    }

    fn confined_weight(grid_ang: &[f64], values: &[f64], center: f64, dist: f64) -> f64 {
        let mut inside = 0.0;
        for (i, w) in grid_ang.windows(2).enumerate() {
            if (0.5 * (w[0] + w[1]) - center).abs() < dist {
                inside += 0.5 * (values[i] + values[i + 1]) * (w[1] - w[0]);
            }
        }
        inside
    }

    #[test]
    fn delta_limit_concentrates_lines_with_full_weight() {
        // Vanishing quadrupolar coupling and spread: every delta line lands
        // within a bin of ω_nuc / 2ω_nuc and the binned density carries the
        // full analytic weight.
        let s = NuclearSpeciesConfig {
            name: "delta".into(),
            spin: 1.5,
            count: 1000.0,
            a_sq_mhz2: 0.25,
            bq_mean_mhz: 1e-3,
            bq_std_mhz: 2e-4,
            theta_p_std_rad: 0.3,
            omega_nuc_mhz: 30.0,
        };
        let grid: Vec<f64> = (0..2048).map(|i| 90.0 * i as f64 / 2047.0).collect();
        let mc = spectral_density_monte_carlo(
            std::slice::from_ref(&s),
            &grid,
            &MonteCarloOptions {
                nuclei_per_species: 60_000,
                seed: 5,
            },
        )
        .unwrap();
        assert_eq!(mc.dropped_weight_fraction, 0.0);
        let sp = &mc.density.species()[0];
        let (w1_expect, w2_expect) = analytic_line_weights(&s);
        let grid_ang: Vec<f64> = grid.iter().map(|&f| mhz_to_angular(f)).collect();
        let w_nuc = mhz_to_angular(s.omega_nuc_mhz);
        let w1 = trapezoid(&grid_ang, &sp.d1);
        let w2 = trapezoid(&grid_ang, &sp.d2);
        assert!(
            (w1 - w1_expect).abs() < 0.03 * w1_expect,
            "{w1} vs {w1_expect}"
        );
        assert!(
            (w2 - w2_expect).abs() < 0.03 * w2_expect,
            "{w2} vs {w2_expect}"
        );
        // All support within ±2 bins of the line centers.
        let dw = grid_ang[1] - grid_ang[0];
        assert!(confined_weight(&grid_ang, &sp.d1, w_nuc, 2.0 * dw) > 0.99 * w1);
        assert!(confined_weight(&grid_ang, &sp.d2, 2.0 * w_nuc, 2.0 * dw) > 0.99 * w2);
    }

    #[test]
    fn narrow_lines_resolved_by_semi_analytic_route() {
        // A narrow (but grid-resolvable) B_Q distribution: the semi-analytic
        // density collapses onto the line centers with the analytic weight.
        let s = NuclearSpeciesConfig {
            name: "narrow".into(),
            spin: 1.5,
            count: 1000.0,
            a_sq_mhz2: 0.25,
            bq_mean_mhz: 0.05,
            bq_std_mhz: 0.012,
            theta_p_std_rad: 0.3,
            omega_nuc_mhz: 30.0,
        };
        let grid: Vec<f64> = (0..4096).map(|i| 90.0 * i as f64 / 4095.0).collect();
        let d = spectral_density(std::slice::from_ref(&s), &grid).unwrap();
        let sp = &d.species()[0];
        let (w1_expect, w2_expect) = analytic_line_weights(&s);
        let grid_ang: Vec<f64> = grid.iter().map(|&f| mhz_to_angular(f)).collect();
        let w_nuc = mhz_to_angular(s.omega_nuc_mhz);
        let w1 = trapezoid(&grid_ang, &sp.d1);
        let w2 = trapezoid(&grid_ang, &sp.d2);
        assert!(
            (w1 - w1_expect).abs() < 0.05 * w1_expect,
            "{w1} vs {w1_expect}"
        );
        assert!(
            (w2 - w2_expect).abs() < 0.05 * w2_expect,
            "{w2} vs {w2_expect}"
        );
        let window = mhz_to_angular(0.4);
        assert!(confined_weight(&grid_ang, &sp.d1, w_nuc, window) > 0.98 * w1);
        assert!(confined_weight(&grid_ang, &sp.d2, 2.0 * w_nuc, window) > 0.98 * w2);
    }

    #[test]
    fn monte_carlo_agrees_with_semi_analytic() {
        // Reduced sampling here; the acceptance suite runs the full check.
        let species = default_species();
        let grid: Vec<f64> = (0..1024).map(|i| 93.0 * i as f64 / 1023.0).collect();
        let semi = spectral_density(&species, &grid).unwrap();
        let mc = spectral_density_monte_carlo(
            &species,
            &grid,
            &MonteCarloOptions {
                nuclei_per_species: 30_000,
                seed: 99,
            },
        )
        .unwrap();
        assert!(mc.dropped_weight_fraction < 5e-3);
        let grid_ang: Vec<f64> = grid.iter().map(|&f| mhz_to_angular(f)).collect();
        let diff: Vec<f64> = semi
            .values()
            .iter()
            .zip(mc.density.values())
            .map(|(a, b)| (a - b).abs())
            .collect();
        let l1_diff = trapezoid(&grid_ang, &diff);
        let l1 = semi.integrated();
        assert!(l1 > 0.0);
        assert!(
            l1_diff / l1 < 0.05,
            "relative L1 difference {}",
            l1_diff / l1
        );
        // Joint sum rule.
        let mc_total = mc.density.integrated();
        assert!(
            (mc_total - l1).abs() < 0.02 * l1,
            "sum rule: MC {mc_total} vs semi-analytic {l1}"
        );
    }

    #[test]
    fn interpolation_and_grid_errors() {
        let d = SpectralDensity::from_values_mhz(&[0.0, 1.0, 2.0], &[0.0, 2.0, 0.0]).unwrap();
        assert!((d.value_at_mhz(0.5).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(
            d.value_at_mhz(3.0),
            Err(BathError::OutsideGrid { .. })
        ));
        assert!(SpectralDensity::from_values_mhz(&[0.0, 1.0], &[-0.1, 0.0]).is_err());
    }

    #[test]
    fn grid_coverage_warning() {
        let s = test_species(0.3);
        let grid: Vec<f64> = (0..64).map(|i| 40.0 * i as f64 / 63.0).collect();
        let d = spectral_density(&[s], &grid).unwrap();
        assert!(!d.warnings.is_empty());
    }
}
