//! Microwave synthesis and the electro-optic sideband model.
//!
//! The AWG chain builds a phase-programmable microwave tone from two square
//! waves mixed in quadrature (four samples per period, the minimum carrying
//! phase information); the EOM then multiplies the optical field by the
//! microwave voltage, producing the two Raman sidebands. Phase convention
//! throughout: a waveform of programmed phase φ is `cos(ωt - φ)`, so the
//! quadrature amplitudes obey tan φ = A₁/A₂.

use num_complex::Complex64;

#[derive(Debug, thiserror::Error)]
pub enum WaveformError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("sample grids differ: {0}")]
    GridMismatch(String),
    #[error("single-photon detuning {delta_ghz} GHz does not clear the hole Zeeman splitting {omega_h_ghz} GHz: Raman resonance crossed")]
    ResonanceCrossing { delta_ghz: f64, omega_h_ghz: f64 },
}

/// Hardware samples per microwave period.
pub const HARDWARE_SAMPLES_PER_PERIOD: usize = 4;

/// Calibrated drive strength per microwave power, MHz/µW.
pub const DEFAULT_RABI_PER_UW_MHZ: f64 = 13.4;

/// Real-valued microwave record with its synthesis parameters.
#[derive(Debug, Clone)]
pub struct MicrowaveWaveform {
    /// Nominal frequency ω_μw (MHz).
    pub freq_mhz: f64,
    /// Programmed phase Δφ_μw (rad), reduced to [0, 2π).
    pub phase_rad: f64,
    /// Channel amplitudes A₁ (sine-like) and A₂ (cosine-like).
    pub amp1: f64,
    pub amp2: f64,
    pub samples_per_period: usize,
    pub samples: Vec<f64>,
}

impl MicrowaveWaveform {
    /// Sample spacing in ns.
    pub fn dt_ns(&self) -> f64 {
        1e3 / (self.freq_mhz * self.samples_per_period as f64)
    }

    /// Fundamental Fourier component: (amplitude, phase) with the waveform
    /// modeled as `amplitude·cos(ωt - phase)`. Exact for midpoint-sampled
    /// synthesis (the half-sample offset is corrected analytically).
    pub fn fundamental(&self) -> (f64, f64) {
        let n = self.samples.len();
        let periods = n / self.samples_per_period;
        let mut x = Complex64::ZERO;
        for (k, &s) in self.samples.iter().enumerate() {
            let ang = -std::f64::consts::TAU * (periods * k) as f64 / n as f64;
            x += s * Complex64::new(ang.cos(), ang.sin());
        }
        let amplitude = 2.0 * x.norm() / n as f64;
        let phase = (std::f64::consts::PI / self.samples_per_period as f64 - x.arg())
            .rem_euclid(std::f64::consts::TAU);
        (amplitude, phase)
    }

    /// Fundamental amplitude rescaled to the continuous-time square-wave
    /// coefficient (the sampled bin is biased by the exact factor
    /// `π / (N·sin(π/N))` for N samples per period).
    pub fn fundamental_amplitude_continuous(&self) -> f64 {
        let n = self.samples_per_period as f64;
        let (amp, _) = self.fundamental();
        amp * n * (std::f64::consts::PI / n).sin() / std::f64::consts::PI
    }

    /// Pure sampled tone `amp·cos(ωt - phase)` (midpoint sampling).
    pub fn sine(
        amp: f64,
        freq_mhz: f64,
        phase_rad: f64,
        samples_per_period: usize,
        n_periods: usize,
    ) -> Result<Self, WaveformError> {
        check_sampling(freq_mhz, samples_per_period, n_periods)?;
        let n = samples_per_period * n_periods;
        let samples = (0..n)
            .map(|k| {
                let theta = std::f64::consts::TAU * (k as f64 + 0.5) / samples_per_period as f64;
                amp * (theta - phase_rad).cos()
            })
            .collect();
        Ok(MicrowaveWaveform {
            freq_mhz,
            phase_rad: phase_rad.rem_euclid(std::f64::consts::TAU),
            amp1: amp * phase_rad.sin(),
            amp2: amp * phase_rad.cos(),
            samples_per_period,
            samples,
        })
    }
}

fn check_sampling(
    freq_mhz: f64,
    samples_per_period: usize,
    n_periods: usize,
) -> Result<(), WaveformError> {
    if !(freq_mhz > 0.0) {
        return Err(WaveformError::Invalid("frequency must be > 0".into()));
    }
    if samples_per_period < 4 {
        return Err(WaveformError::Invalid(
            "need ≥ 4 samples per period to carry phase".into(),
        ));
    }
    if n_periods == 0 {
        return Err(WaveformError::Invalid("need ≥ 1 period".into()));
    }
    Ok(())
}

/// Two square waves offset by a quarter period, amplitudes a1/a2, summed:
/// the fundamental is a tone of phase arctan(a1/a2). Four samples per period
/// (the hardware digitization).
pub fn synth_quadrature(
    a1: f64,
    a2: f64,
    omega_uw_mhz: f64,
    n_periods: usize,
) -> Result<MicrowaveWaveform, WaveformError> {
    synth_quadrature_sampled(a1, a2, omega_uw_mhz, n_periods, HARDWARE_SAMPLES_PER_PERIOD)
}

/// As [`synth_quadrature`] with explicit oversampling (used to compare the
/// digitized fundamental against the continuous square-wave coefficient).
pub fn synth_quadrature_sampled(
    a1: f64,
    a2: f64,
    omega_uw_mhz: f64,
    n_periods: usize,
    samples_per_period: usize,
) -> Result<MicrowaveWaveform, WaveformError> {
    if a1 < 0.0 || a2 < 0.0 || (a1 == 0.0 && a2 == 0.0) {
        return Err(WaveformError::Invalid(
            "amplitudes must be ≥ 0 and not both zero".into(),
        ));
    }
    check_sampling(omega_uw_mhz, samples_per_period, n_periods)?;
    let n = samples_per_period * n_periods;
    let samples = (0..n)
        .map(|k| {
            let theta = std::f64::consts::TAU * (k as f64 + 0.5) / samples_per_period as f64;
            a1 * sign(theta.sin()) + a2 * sign(theta.cos())
        })
        .collect();
    Ok(MicrowaveWaveform {
        freq_mhz: omega_uw_mhz,
        phase_rad: a1.atan2(a2),
        amp1: a1,
        amp2: a2,
        samples_per_period,
        samples,
    })
}

#[inline]
fn sign(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Optical field as a complex envelope about a symbolic carrier; absolute
/// optical frequencies never enter the numerics.
#[derive(Debug, Clone)]
pub struct OpticalField {
    /// Carrier frequency, bookkeeping only (GHz).
    pub carrier_ghz: f64,
    pub dt_ns: f64,
    pub envelope: Vec<Complex64>,
}

impl OpticalField {
    /// Constant (CW) envelope.
    pub fn cw(amplitude: f64, carrier_ghz: f64, dt_ns: f64, n: usize) -> Self {
        OpticalField {
            carrier_ghz,
            dt_ns,
            envelope: vec![Complex64::new(amplitude, 0.0); n],
        }
    }

    /// Mean power |E|².
    pub fn power(&self) -> f64 {
        self.envelope.iter().map(|e| e.norm_sqr()).sum::<f64>() / self.envelope.len() as f64
    }
}

/// Linear EOM model: `E_out(t) = V_in(t) × E_in(t)` pointwise (valid for
/// |V_in| ≪ |V_π|, small modulation around the transmission minimum).
pub fn modulate(
    field: &OpticalField,
    v_in: &MicrowaveWaveform,
) -> Result<OpticalField, WaveformError> {
    if field.envelope.len() != v_in.samples.len() {
        return Err(WaveformError::GridMismatch(format!(
            "{} optical vs {} microwave samples",
            field.envelope.len(),
            v_in.samples.len()
        )));
    }
    let dt_v = v_in.dt_ns();
    if (field.dt_ns - dt_v).abs() > 1e-9 * dt_v {
        return Err(WaveformError::GridMismatch(format!(
            "dt {} ns vs {} ns",
            field.dt_ns, dt_v
        )));
    }
    Ok(OpticalField {
        carrier_ghz: field.carrier_ghz,
        dt_ns: field.dt_ns,
        envelope: field
            .envelope
            .iter()
            .zip(&v_in.samples)
            .map(|(e, v)| e * v)
            .collect(),
    })
}

/// One spectral peak of an optical envelope, offset relative to the carrier.
#[derive(Debug, Clone, Copy)]
pub struct SidebandPeak {
    pub offset_mhz: f64,
    pub magnitude: f64,
    pub phase_rad: f64,
}

/// Sideband analysis result; `leakage_ok` is false when more than 1e-6 of the
/// total power sits outside the identified peaks (non-integer periods in the
/// record, usually).
#[derive(Debug, Clone)]
pub struct SidebandSpectrum {
    pub peaks: Vec<SidebandPeak>,
    pub leakage_ok: bool,
}

/// Discrete spectrum of the envelope, peaks sorted by magnitude (descending);
/// phases are reported in the carrier frame. The record should hold ≥ 16
/// periods of the lowest modulation frequency for adequate resolution.
pub fn sideband_spectrum(field: &OpticalField) -> Result<SidebandSpectrum, WaveformError> {
    let n = field.envelope.len();
    if n < 16 {
        return Err(WaveformError::Invalid("need ≥ 16 samples".into()));
    }
    let spectrum = dft(&field.envelope);
    let mags: Vec<f64> = spectrum.iter().map(|x| x.norm() / n as f64).collect();
    let max_mag = mags.iter().cloned().fold(0.0, f64::max);
    if max_mag == 0.0 {
        return Ok(SidebandSpectrum {
            peaks: Vec::new(),
            leakage_ok: true,
        });
    }
    // Cyclic local maxima above a relative floor.
    let mut peaks = Vec::new();
    let mut peak_power = 0.0;
    for k in 0..n {
        let prev = mags[(k + n - 1) % n];
        let next = mags[(k + 1) % n];
        if mags[k] >= prev && mags[k] > next && mags[k] > 1e-9 * max_mag {
            let signed = if k <= n / 2 {
                k as f64
            } else {
                k as f64 - n as f64
            };
            // bin → MHz: 1/(N·dt_ns) cycles/ns = 1e3/(N·dt) MHz
            let offset_mhz = signed * 1e3 / (n as f64 * field.dt_ns);
            peaks.push(SidebandPeak {
                offset_mhz,
                magnitude: mags[k],
                phase_rad: spectrum[k].arg(),
            });
            peak_power += mags[k] * mags[k];
        }
    }
    peaks.sort_by(|a, b| b.magnitude.partial_cmp(&a.magnitude).unwrap());
    let total_power: f64 = mags.iter().map(|m| m * m).sum();
    let leakage_ok = peak_power >= (1.0 - 1e-6) * total_power;
    Ok(SidebandSpectrum { peaks, leakage_ok })
}

fn dft(x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len();
    let w = -std::f64::consts::TAU / n as f64;
    (0..n)
        .map(|k| {
            let mut acc = Complex64::ZERO;
            for (j, &xj) in x.iter().enumerate() {
                let ang = w * ((k * j) % n) as f64;
                acc += xj * Complex64::new(ang.cos(), ang.sin());
            }
            acc
        })
        .collect()
}

/// Raman-drive operating point.
#[derive(Debug, Clone, Copy)]
pub struct RamanParams {
    /// Optical Rabi frequency Ω_L (MHz).
    pub omega_l_mhz: f64,
    /// Single-photon detuning Δ from the excited-state doublet center (GHz).
    pub delta_ghz: f64,
    /// Hole Zeeman splitting ω_h (GHz).
    pub omega_h_ghz: f64,
    /// Electron Zeeman splitting ω_e (GHz).
    pub omega_e_ghz: f64,
}

impl RamanParams {
    /// Adiabaticity warnings: the two-photon treatment needs (Ω_L/Δ)² ≪ 1.
    pub fn warnings(&self) -> Vec<String> {
        let ratio = self.omega_l_mhz / (self.delta_ghz * 1e3);
        let mut out = Vec::new();
        if ratio * ratio > 1e-2 {
            out.push(format!(
                "(Ω_L/Δ)² = {:.2e} exceeds 1e-2: adiabatic elimination marginal",
                ratio * ratio
            ));
        }
        out
    }

    /// Two-photon detuning δ = ω_e - 2ω_μw (MHz).
    pub fn two_photon_detuning_mhz(&self, omega_uw_mhz: f64) -> f64 {
        self.omega_e_ghz * 1e3 - 2.0 * omega_uw_mhz
    }
}

/// Effective two-photon (ESR) Rabi frequency: the two Raman paths through the
/// trion doublet add,
/// `Ω = Ω_L²/(2(Δ+ω_h/2)) + Ω_L²/(2(Δ-ω_h/2))`,
/// reducing to Ω_L²/Δ for ω_h ≪ Δ. Requires Δ > ω_h/2.
pub fn effective_esr_rabi(params: &RamanParams) -> Result<f64, WaveformError> {
    let delta_mhz = params.delta_ghz * 1e3;
    let half_wh_mhz = 0.5 * params.omega_h_ghz.abs() * 1e3;
    if delta_mhz <= half_wh_mhz {
        return Err(WaveformError::ResonanceCrossing {
            delta_ghz: params.delta_ghz,
            omega_h_ghz: params.omega_h_ghz,
        });
    }
    let ol2 = params.omega_l_mhz * params.omega_l_mhz;
    Ok(0.5 * ol2 / (delta_mhz + half_wh_mhz) + 0.5 * ol2 / (delta_mhz - half_wh_mhz))
}

/// Drive strength from microwave power with the default calibration slope.
pub fn power_to_rabi(power_uw: f64) -> f64 {
    power_to_rabi_with_slope(power_uw, DEFAULT_RABI_PER_UW_MHZ)
}

pub fn power_to_rabi_with_slope(power_uw: f64, slope_mhz_per_uw: f64) -> f64 {
    slope_mhz_per_uw * power_uw
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadrature_phase_is_arctan_ratio() {
        for (a1, a2, expect) in [
            (0.0, 1.0, 0.0),
            (1.0, 1.0, std::f64::consts::FRAC_PI_4),
            (1.0, 3.0f64.sqrt(), std::f64::consts::FRAC_PI_6),
        ] {
            let w = synth_quadrature(a1, a2, 12_250.0, 8).unwrap();
            let (_, phase) = w.fundamental();
            let dist = (phase - expect + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU)
                - std::f64::consts::PI;
            assert!(
                dist.abs() < 1e-9,
                "a1={a1}, a2={a2}: phase {phase} vs {expect}"
            );
        }
        assert!(synth_quadrature(0.0, 0.0, 12_250.0, 4).is_err());
    }

    #[test]
    fn quadrature_fundamental_amplitude() {
        // Continuous square-wave fundamental carries 4/π of the amplitude.
        for spp in [4, 16, 64] {
            for (a1, a2) in [(1.0, 0.0), (0.7, 1.1), (1.0, 1.0)] {
                let w = synth_quadrature_sampled(a1, a2, 12_250.0, 16, spp).unwrap();
                let expect = 4.0 / std::f64::consts::PI * a1.hypot(a2);
                let amp = w.fundamental_amplitude_continuous();
                assert!(
                    (amp - expect).abs() < 1e-9 * expect,
                    "spp={spp}: {amp} vs {expect}"
                );
            }
        }
    }

    #[test]
    fn pure_sine_modulation_gives_two_sidebands() {
        let f = 12_250.0;
        let v = MicrowaveWaveform::sine(0.3, f, 0.0, 32, 64).unwrap();
        let field = OpticalField::cw(1.0, 309_300.0, v.dt_ns(), v.samples.len());
        let out = modulate(&field, &v).unwrap();
        let spec = sideband_spectrum(&out).unwrap();
        assert!(spec.leakage_ok);
        assert!(spec.peaks.len() >= 2);
        let (upper, lower) = (&spec.peaks[0], &spec.peaks[1]);
        assert!((upper.magnitude - lower.magnitude).abs() < 1e-12);
        assert!((upper.offset_mhz.abs() - f).abs() < 1e-6);
        assert!((lower.offset_mhz.abs() - f).abs() < 1e-6);
        assert!(upper.offset_mhz * lower.offset_mhz < 0.0, "opposite sides");
        // Carrier suppressed: no peak at zero offset.
        assert!(spec
            .peaks
            .iter()
            .all(|p| p.offset_mhz.abs() > 1.0 || p.magnitude < 1e-12));
        // Each sideband carries amplitude/2.
        assert!((upper.magnitude - 0.15).abs() < 1e-12);
    }

    #[test]
    fn square_wave_modulation_has_third_harmonics() {
        let f = 12_250.0;
        let v = synth_quadrature_sampled(1.0, 0.0, f, 64, 32).unwrap();
        let field = OpticalField::cw(1.0, 309_300.0, v.dt_ns(), v.samples.len());
        let out = modulate(&field, &v).unwrap();
        let spec = sideband_spectrum(&out).unwrap();
        let find = |target: f64| {
            spec.peaks
                .iter()
                .find(|p| (p.offset_mhz - target).abs() < 1.0)
                .map(|p| p.magnitude)
                .unwrap_or(0.0)
        };
        let fundamental = find(f) + find(-f);
        let third = find(3.0 * f) + find(-3.0 * f);
        assert!(fundamental > 0.0 && third > 0.0);
        // Relative magnitude 1/3 (sampling bias < 0.5% at 32/period).
        assert!(
            (third / fundamental - 1.0 / 3.0).abs() < 0.005,
            "ratio {}",
            third / fundamental
        );
    }

    /// Relative phase between the two sidebands (lower minus upper), the
    /// quantity that doubles the programmed microwave phase.
    fn relative_sideband_phase(phase_uw: f64) -> f64 {
        let f = 12_250.0;
        let v = MicrowaveWaveform::sine(0.2, f, phase_uw, 16, 32).unwrap();
        let field = OpticalField::cw(1.0, 309_300.0, v.dt_ns(), v.samples.len());
        let out = modulate(&field, &v).unwrap();
        let spec = sideband_spectrum(&out).unwrap();
        let upper = spec
            .peaks
            .iter()
            .find(|p| (p.offset_mhz - f).abs() < 1.0)
            .unwrap();
        let lower = spec
            .peaks
            .iter()
            .find(|p| (p.offset_mhz + f).abs() < 1.0)
            .unwrap();
        lower.phase_rad - upper.phase_rad
    }

    #[test]
    fn phase_step_doubles_on_sidebands() {
        let base = relative_sideband_phase(0.0);
        for step in [0.3, 1.2, 2.9] {
            let shifted = relative_sideband_phase(step);
            let change = (shifted - base).rem_euclid(std::f64::consts::TAU);
            let expect = (2.0 * step).rem_euclid(std::f64::consts::TAU);
            assert!(
                (change - expect).abs() < 1e-6,
                "step {step}: change {change} vs {expect}"
            );
        }
    }

    #[test]
    fn spectrum_satisfies_parseval() {
        let v = synth_quadrature_sampled(0.8, 0.45, 12_250.0, 16, 16).unwrap();
        let field = OpticalField::cw(1.0, 309_300.0, v.dt_ns(), v.samples.len());
        let out = modulate(&field, &v).unwrap();
        let spectrum = dft(&out.envelope);
        let n = out.envelope.len() as f64;
        let freq_power: f64 = spectrum.iter().map(|x| x.norm_sqr()).sum::<f64>() / (n * n);
        let time_power = out.power();
        assert!((freq_power - time_power).abs() < 1e-9 * time_power);
    }

    #[test]
    fn leakage_flagged_on_non_integer_periods() {
        // Chop half a period off the record: spectral leakage everywhere.
        let v = MicrowaveWaveform::sine(0.5, 12_250.0, 0.3, 16, 8).unwrap();
        let n = v.samples.len() - 8;
        let field = OpticalField::cw(1.0, 309_300.0, v.dt_ns(), n);
        let chopped = MicrowaveWaveform {
            samples: v.samples[..n].to_vec(),
            ..v
        };
        let out = modulate(&field, &chopped).unwrap();
        let spec = sideband_spectrum(&out).unwrap();
        assert!(!spec.leakage_ok);
    }

    #[test]
    fn modulate_rejects_mismatched_grids() {
        let v = MicrowaveWaveform::sine(1.0, 12_250.0, 0.0, 16, 8).unwrap();
        let field = OpticalField::cw(1.0, 309_300.0, v.dt_ns(), v.samples.len() + 1);
        assert!(matches!(
            modulate(&field, &v),
            Err(WaveformError::GridMismatch(_))
        ));
    }

    #[test]
    fn effective_rabi_limits() {
        let p = RamanParams {
            omega_l_mhz: 8_000.0,
            delta_ghz: 700.0,
            omega_h_ghz: 0.0,
            omega_e_ghz: 24.5,
        };
        let exact = effective_esr_rabi(&p).unwrap();
        let simple = p.omega_l_mhz * p.omega_l_mhz / (p.delta_ghz * 1e3);
        assert!((exact - simple).abs() < 1e-12 * simple);

        let p7 = RamanParams {
            omega_h_ghz: 7.0,
            ..p
        };
        let v = effective_esr_rabi(&p7).unwrap();
        assert!(
            (v - simple).abs() / simple < 1e-4,
            "deviation {}",
            (v - simple) / simple
        );
        let pm = RamanParams {
            omega_h_ghz: -7.0,
            ..p
        };
        assert_eq!(v, effective_esr_rabi(&pm).unwrap());

        let bad = RamanParams {
            omega_h_ghz: 1500.0,
            ..p
        };
        assert!(matches!(
            effective_esr_rabi(&bad),
            Err(WaveformError::ResonanceCrossing { .. })
        ));
        assert!(p.warnings().is_empty());
        let hot = RamanParams {
            omega_l_mhz: 100_000.0,
            ..p
        };
        assert!(!hot.warnings().is_empty());
    }

    #[test]
    fn power_calibration() {
        assert_eq!(power_to_rabi(0.0), 0.0);
        assert_eq!(power_to_rabi(1.0), 13.4);
        let max = power_to_rabi(11.5);
        assert!((max - 154.1).abs() < 1e-9);
    }
}
