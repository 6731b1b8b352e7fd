//! Command-line front end: one subcommand per experiment, configuration from
//! shipped presets or TOML files, with CLI flags overriding file keys.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use esr_sim::config::{parse_config, preset, ExperimentKind, RunConfig, PRESETS};
use esr_sim::output::run;

#[derive(Parser)]
#[command(
    name = "esr-sim",
    version,
    about = "Optically driven spin-qubit simulator: Rabi/Ramsey/phase tomography/spin locking, nuclear-bath decoherence rates and microwave-to-optical waveform synthesis",
    after_help = "Units at the boundary: frequencies in MHz (ordinary), decay rates in MHz (1 MHz = 1/\u{3bc}s), times in ns, phases in rad, powers in \u{3bc}W."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct CommonArgs {
    /// TOML configuration file.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Shipped preset name (see `esr-sim presets`).
    #[arg(long)]
    preset: Option<String>,
    /// Output directory (overrides output.dir).
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// RNG seed for Monte-Carlo ensembles and oracles.
    #[arg(long)]
    seed: Option<u64>,

    /// Drive (Rabi) frequency.
    #[arg(long)]
    omega_mhz: Option<f64>,
    /// Two-photon detuning.
    #[arg(long)]
    delta_mhz: Option<f64>,
    /// Drive-proportional decay Γ1 = alpha·Ω.
    #[arg(long)]
    alpha: Option<f64>,
    /// Fixed Γ1 (alternative to --alpha).
    #[arg(long)]
    gamma1_mhz: Option<f64>,
    /// Pure dephasing rate Γ2.
    #[arg(long)]
    gamma2_mhz: Option<f64>,
    /// Overhauser standard deviation.
    #[arg(long)]
    sigma_oh_mhz: Option<f64>,
    /// off | non-markovian | self-consistent-markov
    #[arg(long)]
    nuclear_rate_mode: Option<String>,
    /// gauss-hermite | monte-carlo
    #[arg(long)]
    ensemble_scheme: Option<String>,
    /// Gauss–Hermite node count.
    #[arg(long)]
    ensemble_nodes: Option<usize>,
    /// Monte-Carlo sample count.
    #[arg(long)]
    ensemble_samples: Option<usize>,

    /// Time span of time-resolved experiments.
    #[arg(long)]
    t_max_ns: Option<f64>,
    /// Grid points (time or phase axis).
    #[arg(long)]
    points: Option<usize>,
    /// Phase span of phase scans.
    #[arg(long)]
    phi_max_rad: Option<f64>,
    /// Drive sweep range for rate-curve / q-curve.
    #[arg(long)]
    omega_min_mhz: Option<f64>,
    #[arg(long)]
    omega_max_mhz: Option<f64>,
    #[arg(long)]
    omega_points: Option<usize>,

    /// Ramsey pulse Rabi frequency (omit for instantaneous pulses).
    #[arg(long)]
    omega_pulse_mhz: Option<f64>,
    /// Ramsey final-pulse phase.
    #[arg(long)]
    final_phase_rad: Option<f64>,
    /// Spin-lock drive frequency.
    #[arg(long)]
    omega_lock_mhz: Option<f64>,
    /// Spin-lock time points.
    #[arg(long)]
    lock_points: Option<usize>,
    /// Tomography phase points per lock time.
    #[arg(long)]
    tomography_points: Option<usize>,

    /// Quadrature channel amplitudes.
    #[arg(long)]
    a1: Option<f64>,
    #[arg(long)]
    a2: Option<f64>,
    /// Microwave frequency.
    #[arg(long)]
    freq_mhz: Option<f64>,
    #[arg(long)]
    n_periods: Option<usize>,
    #[arg(long)]
    samples_per_period: Option<usize>,
    /// Microwave power for the Ω(P) calibration printout.
    #[arg(long)]
    power_uw: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Rabi oscillations: ρ↓↓ vs drive duration.
    Rabi(CommonArgs),
    /// Rotating-frame Ramsey interferometry.
    Ramsey(CommonArgs),
    /// Two-pulse relative-phase scan (azimuthal tomography).
    PhaseScan(CommonArgs),
    /// Spin locking with xy tomography per lock time.
    Spinlock(CommonArgs),
    /// Nuclear spectral density of the configured bath.
    SpectralDensity(CommonArgs),
    /// Self-consistent nuclear decay rate vs drive strength.
    RateCurve(CommonArgs),
    /// Full model Q(Ω) curve.
    QCurve(CommonArgs),
    /// Quadrature microwave synthesis and EOM sidebands.
    Waveform(CommonArgs),
    /// Monte-Carlo / quadrature cross-checks (CI gate).
    Oracle(CommonArgs),
    /// Run a config or preset with its own experiment kind.
    Run(CommonArgs),
    /// List shipped presets, or print one.
    Presets {
        /// Preset to print.
        name: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn execute(command: Command) -> Result<(), Box<dyn std::error::Error>> {
    let (kind, args) = match command {
        Command::Presets { name } => {
            match name {
                None => {
                    for (n, _) in PRESETS {
                        println!("{n}");
                    }
                }
                Some(n) => {
                    let text = PRESETS
                        .iter()
                        .find(|(name, _)| *name == n)
                        .map(|(_, t)| *t)
                        .ok_or_else(|| format!("unknown preset `{n}`"))?;
                    print!("{text}");
                }
            }
            return Ok(());
        }
        Command::Rabi(a) => (Some(ExperimentKind::Rabi), a),
        Command::Ramsey(a) => (Some(ExperimentKind::Ramsey), a),
        Command::PhaseScan(a) => (Some(ExperimentKind::PhaseScan), a),
        Command::Spinlock(a) => (Some(ExperimentKind::Spinlock), a),
        Command::SpectralDensity(a) => (Some(ExperimentKind::SpectralDensity), a),
        Command::RateCurve(a) => (Some(ExperimentKind::RateCurve), a),
        Command::QCurve(a) => (Some(ExperimentKind::QCurve), a),
        Command::Waveform(a) => (Some(ExperimentKind::Waveform), a),
        Command::Oracle(a) => (Some(ExperimentKind::Oracle), a),
        Command::Run(a) => (None, a),
    };

    let mut cfg = load_base(&args, kind)?;
    if let Some(kind) = kind {
        if cfg.experiment.kind != kind {
            return Err(format!(
                "configuration is for `{}` but the `{}` subcommand was invoked; use `esr-sim run` to honor the file",
                cfg.experiment.kind.as_str(),
                kind.as_str()
            )
            .into());
        }
    }
    apply_overrides(&mut cfg, &args);

    let outcome = run(&cfg, args.out.as_deref())?;
    for line in &outcome.summary {
        println!("{line}");
    }
    println!(
        "wrote {} file(s) to {} (manifest: {})",
        outcome.files.len(),
        outcome.outdir.display(),
        outcome.manifest.display()
    );
    Ok(())
}

fn load_base(
    args: &CommonArgs,
    kind: Option<ExperimentKind>,
) -> Result<RunConfig, Box<dyn std::error::Error>> {
    let mut cfg = if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        parse_config(&text)?
    } else if let Some(name) = &args.preset {
        preset(name)?
    } else {
        RunConfig::new(kind.ok_or("`run` needs --config or --preset")?)
    };
    // A subcommand invoked without any file fixes the kind itself.
    if args.config.is_none() && args.preset.is_none() {
        if let Some(kind) = kind {
            cfg.experiment.kind = kind;
        }
    }
    Ok(cfg)
}

fn apply_overrides(cfg: &mut RunConfig, a: &CommonArgs) {
    macro_rules! over {
        ($slot:expr, $val:expr) => {
            if let Some(v) = &$val {
                $slot = Some(v.clone());
            }
        };
    }
    over!(cfg.experiment.seed, a.seed);
    over!(cfg.drive.omega_mhz, a.omega_mhz);
    over!(cfg.drive.delta_mhz, a.delta_mhz);
    if a.alpha.is_some() {
        cfg.relaxation.alpha = a.alpha;
        cfg.relaxation.gamma1_mhz = None;
    }
    if a.gamma1_mhz.is_some() {
        cfg.relaxation.gamma1_mhz = a.gamma1_mhz;
        cfg.relaxation.alpha = None;
    }
    over!(cfg.relaxation.gamma2_mhz, a.gamma2_mhz);
    over!(cfg.relaxation.nuclear_rate_mode, a.nuclear_rate_mode);
    over!(cfg.ensemble.sigma_oh_mhz, a.sigma_oh_mhz);
    over!(cfg.ensemble.scheme, a.ensemble_scheme);
    over!(cfg.ensemble.nodes, a.ensemble_nodes);
    over!(cfg.ensemble.samples, a.ensemble_samples);
    over!(cfg.grid.t_max_ns, a.t_max_ns);
    over!(cfg.grid.points, a.points);
    over!(cfg.grid.phi_max_rad, a.phi_max_rad);
    over!(cfg.grid.omega_min_mhz, a.omega_min_mhz);
    over!(cfg.grid.omega_max_mhz, a.omega_max_mhz);
    over!(cfg.grid.omega_points, a.omega_points);
    over!(cfg.ramsey.omega_pulse_mhz, a.omega_pulse_mhz);
    over!(cfg.ramsey.final_phase_rad, a.final_phase_rad);
    over!(cfg.spinlock.omega_lock_mhz, a.omega_lock_mhz);
    over!(cfg.spinlock.lock_points, a.lock_points);
    over!(cfg.spinlock.tomography_points, a.tomography_points);
    over!(cfg.waveform.a1, a.a1);
    over!(cfg.waveform.a2, a.a2);
    over!(cfg.waveform.freq_mhz, a.freq_mhz);
    over!(cfg.waveform.n_periods, a.n_periods);
    over!(cfg.waveform.samples_per_period, a.samples_per_period);
    over!(cfg.waveform.power_uw, a.power_uw);
}
