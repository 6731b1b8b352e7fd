//! Run configuration: TOML schema, validation, defaults and shipped presets.
//!
//! The file is a hierarchical key→value document; unknown keys are rejected.
//! Units are carried in the key names (`_mhz`, `_ns`, `_rad`, `_uw`).
//! [`RunConfig::resolve`] fills every absent field with its default and
//! records the provenance of each applied default; the resolved document is
//! what gets hashed into run manifests and CSV headers.

use serde::{Deserialize, Serialize};

use crate::bath::NuclearSpeciesConfig;
use crate::spin::NuclearRateMode;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config key `{key}`: {reason}")]
    Key { key: &'static str, reason: String },
    #[error("unknown preset `{0}` (available: {1})")]
    UnknownPreset(String, String),
}

fn key_err(key: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Key {
        key,
        reason: reason.into(),
    }
}

/// Which pipeline to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Rabi,
    Ramsey,
    PhaseScan,
    Spinlock,
    SpectralDensity,
    RateCurve,
    QCurve,
    Waveform,
    Oracle,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::Rabi => "rabi",
            ExperimentKind::Ramsey => "ramsey",
            ExperimentKind::PhaseScan => "phase-scan",
            ExperimentKind::Spinlock => "spinlock",
            ExperimentKind::SpectralDensity => "spectral-density",
            ExperimentKind::RateCurve => "rate-curve",
            ExperimentKind::QCurve => "q-curve",
            ExperimentKind::Waveform => "waveform",
            ExperimentKind::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub kind: ExperimentKind,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DriveSection {
    pub omega_mhz: Option<f64>,
    pub delta_mhz: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    /// Time span for time-resolved experiments.
    pub t_max_ns: Option<f64>,
    pub points: Option<usize>,
    /// Phase span for phase scans and tomography.
    pub phi_max_rad: Option<f64>,
    /// Drive sweep range for rate-curve / q-curve.
    pub omega_min_mhz: Option<f64>,
    pub omega_max_mhz: Option<f64>,
    pub omega_points: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RelaxationSection {
    /// Drive-proportional decay Γ₁ = α·Ω (mutually exclusive with
    /// `gamma1_mhz`).
    pub alpha: Option<f64>,
    pub gamma1_mhz: Option<f64>,
    pub gamma2_mhz: Option<f64>,
    /// off | non-markovian | self-consistent-markov
    pub nuclear_rate_mode: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleSection {
    pub sigma_oh_mhz: Option<f64>,
    /// gauss-hermite | monte-carlo
    pub scheme: Option<String>,
    pub nodes: Option<usize>,
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct BathSection {
    pub species: Option<Vec<NuclearSpeciesConfig>>,
    pub grid_points: Option<usize>,
    pub grid_max_mhz: Option<f64>,
    /// Monte-Carlo oracle sampling.
    pub mc_nuclei_per_species: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RamseySection {
    /// Pulse Rabi frequency; absent = instantaneous π/2 rotations.
    pub omega_pulse_mhz: Option<f64>,
    pub final_phase_rad: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SpinlockSection {
    pub omega_lock_mhz: Option<f64>,
    pub lock_points: Option<usize>,
    pub tomography_points: Option<usize>,
    /// When set, also emit the locked-basis population trace read out through
    /// a π/2 pulse at this phase.
    pub population_readout_phase_rad: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct WaveformSection {
    pub a1: Option<f64>,
    pub a2: Option<f64>,
    pub freq_mhz: Option<f64>,
    pub n_periods: Option<usize>,
    pub samples_per_period: Option<usize>,
    /// Optional power calibration printout Ω = slope·P.
    pub power_uw: Option<f64>,
    pub power_slope_mhz_per_uw: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: Option<String>,
}

/// Full run configuration. Every field except `experiment.kind` is optional
/// in the file; [`RunConfig::resolve`] fills the defaults.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub drive: DriveSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub relaxation: RelaxationSection,
    #[serde(default)]
    pub ensemble: EnsembleSection,
    #[serde(default)]
    pub bath: BathSection,
    #[serde(default)]
    pub ramsey: RamseySection,
    #[serde(default)]
    pub spinlock: SpinlockSection,
    #[serde(default)]
    pub waveform: WaveformSection,
    #[serde(default)]
    pub output: OutputSection,
}

/// Parse a TOML document into a raw (unresolved) configuration.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let cfg: RunConfig = toml::from_str(text)?;
    Ok(cfg)
}

impl RunConfig {
    /// Minimal config for one experiment kind; everything else defaulted.
    pub fn new(kind: ExperimentKind) -> Self {
        RunConfig {
            experiment: ExperimentSection { kind, seed: None },
            drive: DriveSection::default(),
            grid: GridSection::default(),
            relaxation: RelaxationSection::default(),
            ensemble: EnsembleSection::default(),
            bath: BathSection::default(),
            ramsey: RamseySection::default(),
            spinlock: SpinlockSection::default(),
            waveform: WaveformSection::default(),
            output: OutputSection::default(),
        }
    }

    /// Fill every absent field with its default, validate, and record which
    /// defaults were applied (`key = value (default)` lines).
    pub fn resolve(&self) -> Result<(RunConfig, Vec<String>), ConfigError> {
        let mut cfg = self.clone();
        let mut applied = Vec::new();
        macro_rules! fill {
            ($slot:expr, $key:literal, $value:expr) => {
                if $slot.is_none() {
                    let v = $value;
                    applied.push(format!("{} = {:?} (default)", $key, &v));
                    $slot = Some(v);
                }
            };
        }
        fill!(cfg.experiment.seed, "experiment.seed", 0u64);
        fill!(cfg.drive.omega_mhz, "drive.omega_mhz", 95.0);
        fill!(cfg.drive.delta_mhz, "drive.delta_mhz", 0.0);
        fill!(cfg.grid.t_max_ns, "grid.t_max_ns", 790.0);
        fill!(cfg.grid.points, "grid.points", 3951);
        fill!(
            cfg.grid.phi_max_rad,
            "grid.phi_max_rad",
            2.0 * std::f64::consts::TAU
        );
        fill!(cfg.grid.omega_min_mhz, "grid.omega_min_mhz", 5.0);
        fill!(cfg.grid.omega_max_mhz, "grid.omega_max_mhz", 160.0);
        fill!(cfg.grid.omega_points, "grid.omega_points", 40);
        if cfg.relaxation.alpha.is_none() && cfg.relaxation.gamma1_mhz.is_none() {
            applied.push("relaxation.alpha = 0.027 (default)".into());
            cfg.relaxation.alpha = Some(2.7e-2);
        }
        fill!(
            cfg.relaxation.gamma2_mhz,
            "relaxation.gamma2_mhz",
            1.0 / 2.8
        );
        fill!(
            cfg.relaxation.nuclear_rate_mode,
            "relaxation.nuclear_rate_mode",
            "off".to_string()
        );
        fill!(cfg.ensemble.sigma_oh_mhz, "ensemble.sigma_oh_mhz", 4.8);
        fill!(
            cfg.ensemble.scheme,
            "ensemble.scheme",
            "gauss-hermite".to_string()
        );
        fill!(cfg.ensemble.nodes, "ensemble.nodes", 31);
        fill!(cfg.ensemble.samples, "ensemble.samples", 100_000);
        fill!(
            cfg.bath.species,
            "bath.species",
            crate::bath::default_species()
        );
        fill!(cfg.bath.grid_points, "bath.grid_points", 4096);
        if cfg.bath.grid_max_mhz.is_none() {
            let wmax = cfg
                .bath
                .species
                .as_ref()
                .unwrap()
                .iter()
                .map(|s| s.omega_nuc_mhz)
                .fold(1.0, f64::max);
            applied.push(format!(
                "bath.grid_max_mhz = {} (default: 3·max ω_nuc)",
                3.0 * wmax
            ));
            cfg.bath.grid_max_mhz = Some(3.0 * wmax);
        }
        fill!(
            cfg.bath.mc_nuclei_per_species,
            "bath.mc_nuclei_per_species",
            100_000
        );
        fill!(cfg.ramsey.final_phase_rad, "ramsey.final_phase_rad", 0.0);
        fill!(cfg.spinlock.omega_lock_mhz, "spinlock.omega_lock_mhz", 16.0);
        fill!(cfg.spinlock.lock_points, "spinlock.lock_points", 13);
        fill!(
            cfg.spinlock.tomography_points,
            "spinlock.tomography_points",
            33
        );
        fill!(cfg.waveform.a1, "waveform.a1", 1.0);
        fill!(cfg.waveform.a2, "waveform.a2", 1.0);
        fill!(cfg.waveform.freq_mhz, "waveform.freq_mhz", 12_250.0);
        fill!(cfg.waveform.n_periods, "waveform.n_periods", 16);
        fill!(
            cfg.waveform.samples_per_period,
            "waveform.samples_per_period",
            crate::waveform::HARDWARE_SAMPLES_PER_PERIOD
        );
        fill!(
            cfg.waveform.power_slope_mhz_per_uw,
            "waveform.power_slope_mhz_per_uw",
            crate::waveform::DEFAULT_RABI_PER_UW_MHZ
        );
        fill!(cfg.output.dir, "output.dir", "out".to_string());
        cfg.validate()?;
        Ok((cfg, applied))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let nonneg = |v: Option<f64>, key: &'static str| -> Result<(), ConfigError> {
            if let Some(x) = v {
                if !(x >= 0.0) || !x.is_finite() {
                    return Err(key_err(key, format!("must be ≥ 0 and finite, got {x}")));
                }
            }
            Ok(())
        };
        nonneg(self.drive.omega_mhz, "drive.omega_mhz")?;
        nonneg(self.grid.t_max_ns, "grid.t_max_ns")?;
        nonneg(self.relaxation.alpha, "relaxation.alpha")?;
        nonneg(self.relaxation.gamma1_mhz, "relaxation.gamma1_mhz")?;
        nonneg(self.relaxation.gamma2_mhz, "relaxation.gamma2_mhz")?;
        nonneg(self.ensemble.sigma_oh_mhz, "ensemble.sigma_oh_mhz")?;
        nonneg(self.spinlock.omega_lock_mhz, "spinlock.omega_lock_mhz")?;
        nonneg(self.waveform.a1, "waveform.a1")?;
        nonneg(self.waveform.a2, "waveform.a2")?;
        if self.relaxation.alpha.is_some() && self.relaxation.gamma1_mhz.is_some() {
            return Err(key_err(
                "relaxation.alpha",
                "exactly one of alpha / gamma1_mhz may be set",
            ));
        }
        if let Some(mode) = &self.relaxation.nuclear_rate_mode {
            parse_nuclear_mode(mode)?;
        }
        if let Some(scheme) = &self.ensemble.scheme {
            if scheme != "gauss-hermite" && scheme != "monte-carlo" {
                return Err(key_err(
                    "ensemble.scheme",
                    format!("must be gauss-hermite or monte-carlo, got `{scheme}`"),
                ));
            }
        }
        if let Some(n) = self.grid.points {
            if n < 2 {
                return Err(key_err("grid.points", "need ≥ 2 points"));
            }
        }
        if let Some(species) = &self.bath.species {
            for s in species {
                s.validate()
                    .map_err(|e| key_err("bath.species", e.to_string()))?;
            }
        }
        Ok(())
    }

    /// Canonical TOML of the (resolved) config; input to the config hash.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Relaxation parameters in library form.
    pub fn relaxation_params(&self) -> Result<crate::spin::RelaxationParams, ConfigError> {
        let gamma1 = match (self.relaxation.alpha, self.relaxation.gamma1_mhz) {
            (Some(a), None) => crate::spin::Gamma1Model::Alpha(a),
            (None, Some(g)) => crate::spin::Gamma1Model::FixedMhz(g),
            (None, None) => crate::spin::Gamma1Model::FixedMhz(0.0),
            (Some(_), Some(_)) => {
                return Err(key_err(
                    "relaxation.alpha",
                    "exactly one of alpha / gamma1_mhz may be set",
                ))
            }
        };
        let nuclear = parse_nuclear_mode(
            self.relaxation
                .nuclear_rate_mode
                .as_deref()
                .unwrap_or("off"),
        )?;
        Ok(crate::spin::RelaxationParams {
            gamma1,
            gamma2_mhz: self.relaxation.gamma2_mhz.unwrap_or(0.0),
            nuclear,
        })
    }

    /// Overhauser ensemble in library form.
    pub fn ensemble(&self) -> crate::sequence::OverhauserEnsemble {
        let sigma = self.ensemble.sigma_oh_mhz.unwrap_or(0.0);
        match self.ensemble.scheme.as_deref() {
            Some("monte-carlo") => crate::sequence::OverhauserEnsemble::monte_carlo(
                sigma,
                self.ensemble.samples.unwrap_or(100_000),
                self.experiment.seed.unwrap_or(0),
            ),
            _ => crate::sequence::OverhauserEnsemble::gauss_hermite(
                sigma,
                self.ensemble.nodes.unwrap_or(31),
            ),
        }
    }
}

fn parse_nuclear_mode(s: &str) -> Result<NuclearRateMode, ConfigError> {
    match s {
        "off" => Ok(NuclearRateMode::Off),
        "non-markovian" => Ok(NuclearRateMode::NonMarkovian),
        "self-consistent-markov" => Ok(NuclearRateMode::SelfConsistentMarkov),
        other => Err(key_err(
            "relaxation.nuclear_rate_mode",
            format!("must be off | non-markovian | self-consistent-markov, got `{other}`"),
        )),
    }
}

/// Shipped presets, one per reproduced figure panel.
pub const PRESETS: &[(&str, &str)] = &[
    ("fig1b", include_str!("../presets/fig1b.toml")),
    ("fig2a", include_str!("../presets/fig2a.toml")),
    ("fig2b", include_str!("../presets/fig2b.toml")),
    ("fig3b", include_str!("../presets/fig3b.toml")),
    ("fig3c", include_str!("../presets/fig3c.toml")),
    ("fig4b", include_str!("../presets/fig4b.toml")),
    ("fig4c", include_str!("../presets/fig4c.toml")),
];

pub fn preset(name: &str) -> Result<RunConfig, ConfigError> {
    for (n, text) in PRESETS {
        if *n == name {
            return parse_config(text);
        }
    }
    Err(ConfigError::UnknownPreset(
        name.to_string(),
        PRESETS
            .iter()
            .map(|(n, _)| *n)
            .collect::<Vec<_>>()
            .join(", "),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_experiment_section_is_named() {
        let err = parse_config("[drive]\nomega_mhz = 10.0\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("experiment"), "{msg}");
    }

    #[test]
    fn negative_sigma_rejected() {
        let cfg = parse_config("[experiment]\nkind = \"rabi\"\n[ensemble]\nsigma_oh_mhz = -1.0\n")
            .unwrap();
        let err = cfg.resolve().unwrap_err();
        assert!(err.to_string().contains("sigma_oh_mhz"), "{err}");
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = parse_config("[experiment]\nkind = \"rabi\"\nbogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn exclusive_gamma1_models() {
        let cfg = parse_config(
            "[experiment]\nkind = \"rabi\"\n[relaxation]\nalpha = 0.027\ngamma1_mhz = 1.0\n",
        )
        .unwrap();
        assert!(cfg.resolve().is_err());
    }

    #[test]
    fn presets_parse_and_roundtrip_bit_identically() {
        for (name, text) in PRESETS {
            let cfg = parse_config(text).unwrap_or_else(|e| panic!("{name}: {e}"));
            let (resolved, _) = cfg.resolve().unwrap_or_else(|e| panic!("{name}: {e}"));
            let once = resolved.to_toml();
            let (resolved2, _) = parse_config(&once).unwrap().resolve().unwrap();
            let twice = resolved2.to_toml();
            assert_eq!(once, twice, "preset {name} does not round-trip");
            assert_eq!(resolved, resolved2);
        }
    }

    #[test]
    fn defaults_recorded() {
        let cfg = RunConfig::new(ExperimentKind::Rabi);
        let (resolved, applied) = cfg.resolve().unwrap();
        assert!(resolved.drive.omega_mhz.is_some());
        assert!(applied.iter().any(|l| l.contains("drive.omega_mhz")));
        // A provided value is not reported as defaulted.
        let mut cfg = RunConfig::new(ExperimentKind::Rabi);
        cfg.drive.omega_mhz = Some(42.0);
        let (_, applied) = cfg.resolve().unwrap();
        assert!(!applied.iter().any(|l| l.contains("drive.omega_mhz")));
    }
}
