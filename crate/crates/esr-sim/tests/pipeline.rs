//! Cross-module integration: file-level determinism, ensemble-scheme
//! agreement, sequence-level physics properties and a CLI smoke test.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use esr_sim::analysis::{one_over_e_time, visibility_per_pi};
use esr_sim::config::{parse_config, preset, ExperimentKind, RunConfig};
use esr_sim::output::run;
use esr_sim::sequence::{
    linspace, run_locked_population, run_rabi, run_ramsey, run_sequence, run_spinlock,
    OverhauserEnsemble, PulseSequence, Segment,
};
use esr_sim::spin::{Gamma1Model, NuclearRateMode, RelaxationParams};
use esr_sim::units::t_pi_ns;

fn relax_alpha() -> RelaxationParams {
    RelaxationParams {
        gamma1: Gamma1Model::Alpha(2.7e-2),
        gamma2_mhz: 1.0 / 2.8,
        nuclear: NuclearRateMode::Off,
    }
}

/// Map of output file name → bytes, with the timing line stripped from the
/// manifest.
fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().to_string();
        let mut bytes = fs::read(&path).unwrap();
        if name == "manifest.txt" {
            let text = String::from_utf8(bytes).unwrap();
            bytes = text
                .lines()
                .filter(|l| !l.starts_with("wall_clock_ms"))
                .collect::<Vec<_>>()
                .join("\n")
                .into_bytes();
        }
        out.insert(name, bytes);
    }
    out
}

#[test]
fn outputs_byte_identical_across_runs_and_thread_counts() {
    let mut cfg = parse_config(
        "[experiment]\nkind = \"rabi\"\nseed = 3\n\
         [drive]\nomega_mhz = 40.0\n\
         [grid]\nt_max_ns = 300.0\npoints = 600\n\
         [ensemble]\nsigma_oh_mhz = 4.8\nscheme = \"monte-carlo\"\nsamples = 4000\n",
    )
    .unwrap();
    cfg.relaxation.alpha = Some(2.7e-2);

    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let d3 = tempfile::tempdir().unwrap();
    run(&cfg, Some(d1.path())).unwrap();
    run(&cfg, Some(d2.path())).unwrap();
    // Single-threaded pool: reductions must not depend on parallelism.
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| run(&cfg, Some(d3.path())).unwrap());

    let (a, b, c) = (
        snapshot(d1.path()),
        snapshot(d2.path()),
        snapshot(d3.path()),
    );
    assert_eq!(a, b, "repeated run differs");
    assert_eq!(a, c, "thread count changed the outputs");
    assert!(a.contains_key("rabi.csv") && a.contains_key("manifest.txt"));
    // Every CSV carries the config hash and unit convention in its header.
    let csv = String::from_utf8(a["rabi.csv"].clone()).unwrap();
    assert!(csv.starts_with("# esr-sim v"));
    assert!(csv.contains("# config_hash = "));
    assert!(csv.contains("units:"));
    let manifest = String::from_utf8(a["manifest.txt"].clone()).unwrap();
    assert!(manifest.contains("tool_version = "));
    assert!(manifest.contains("output.rabi.csv = "));
}

#[test]
fn gauss_hermite_and_monte_carlo_agree_across_experiments() {
    let relax = relax_alpha();
    let sigma = 4.8;
    let gh = OverhauserEnsemble::gauss_hermite(sigma, 31);
    let mc = OverhauserEnsemble::monte_carlo(sigma, 100_000, 17);

    // Rabi population at a π pulse.
    let grid = [t_pi_ns(10.0)];
    let r_gh = run_rabi(10.0, 0.0, &grid, &relax, &gh, None).unwrap();
    let r_mc = run_rabi(10.0, 0.0, &grid, &relax, &mc, None).unwrap();
    assert!(
        (r_gh.p_down[0] - r_mc.p_down[0]).abs() < 2e-3,
        "rabi: {} vs {}",
        r_gh.p_down[0],
        r_mc.p_down[0]
    );

    // Ramsey fringe at a dephasing-sensitive delay.
    let taus = [40.0];
    let m_gh = run_ramsey(None, 0.0, &taus, 0.0, &relax, &gh, None).unwrap();
    let m_mc = run_ramsey(None, 0.0, &taus, 0.0, &relax, &mc, None).unwrap();
    assert!(
        (m_gh.p_down[0] - m_mc.p_down[0]).abs() < 2e-3,
        "ramsey: {} vs {}",
        m_gh.p_down[0],
        m_mc.p_down[0]
    );

    // Spin-lock visibility after 200 ns.
    let phis = linspace(0.0, 2.0 * std::f64::consts::TAU, 17);
    let mc_small = OverhauserEnsemble::monte_carlo(sigma, 100_000, 29);
    let l_gh = run_spinlock(16.0, &[200.0], &phis, &relax, &gh, None).unwrap();
    let l_mc = run_spinlock(16.0, &[200.0], &phis, &relax, &mc_small, None).unwrap();
    assert!(
        (l_gh.visibility[0] - l_mc.visibility[0]).abs() < 2e-3,
        "spinlock: {} vs {}",
        l_gh.visibility[0],
        l_mc.visibility[0]
    );
}

#[test]
fn monte_carlo_scheme_is_order_independent() {
    // Counter-based seeding: node k draws the same Δ regardless of how many
    // samples precede it.
    let a = OverhauserEnsemble::monte_carlo(4.8, 100, 5).nodes();
    let b = OverhauserEnsemble::monte_carlo(4.8, 1000, 5).nodes();
    for k in 0..100 {
        assert_eq!(
            a[k].0.to_bits(),
            b[k].0.to_bits(),
            "sample {k} depends on count"
        );
    }
}

#[test]
fn spin_lock_beats_rabi_visibility_under_broadening() {
    // The gapped (locked) state outlives the driven oscillation at equal Ω
    // and equal total time whenever quasi-static broadening dominates.
    let relax = RelaxationParams::none();
    let ens = OverhauserEnsemble::gauss_hermite(4.8, 31);
    let phis = linspace(0.0, 2.0 * std::f64::consts::TAU, 25);
    for omega in [8.0, 11.0, 16.0] {
        let lock_times = [150.0, 400.0, 700.0];
        let lock = run_spinlock(omega, &lock_times, &phis, &relax, &ens, None).unwrap();
        let t_grid = linspace(0.0, 800.0, 4001);
        let rabi = run_rabi(omega, 0.0, &t_grid, &relax, &ens, None).unwrap();
        let vis = visibility_per_pi(&rabi.x, &rabi.p_down, omega).unwrap();
        for (i, &t) in lock_times.iter().enumerate() {
            let rabi_vis_at_t = vis
                .window_centers_ns
                .iter()
                .zip(&vis.visibility)
                .min_by(|a, b| (a.0 - t).abs().partial_cmp(&(b.0 - t).abs()).unwrap())
                .map(|(_, &v)| v)
                .unwrap();
            assert!(
                lock.visibility[i] >= rabi_vis_at_t,
                "Ω={omega}, T={t}: lock {} < rabi {}",
                lock.visibility[i],
                rabi_vis_at_t
            );
        }
    }
}

#[test]
fn locked_population_shows_residual_oscillations_at_drive_frequency() {
    // Detuning errors leave a small unlocked Bloch component precessing at
    // ≈ Ω during the first few hundred ns.
    let omega = 11.0;
    let t_grid = linspace(0.0, 600.0, 1201);
    let pop = run_locked_population(
        omega,
        &t_grid,
        0.0,
        &RelaxationParams::none(),
        &OverhauserEnsemble::gauss_hermite(4.8, 31),
        None,
    )
    .unwrap();
    // Detrend with a one-period moving average.
    let period_ns = 1e3 / omega;
    let dt = t_grid[1] - t_grid[0];
    let half = (0.5 * period_ns / dt) as usize;
    let n = pop.p_down.len();
    let mut residual = Vec::with_capacity(n);
    for i in 0..n {
        let lo = i.saturating_sub(half);
        let hi = (i + half + 1).min(n);
        let mean = pop.p_down[lo..hi].iter().sum::<f64>() / (hi - lo) as f64;
        residual.push(pop.p_down[i] - mean);
    }
    let inner = &residual[half..n - half];
    let amp = inner.iter().cloned().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(amp > 2e-3, "no residual oscillation visible: {amp}");
    // Zero-crossing count → oscillation frequency near Ω.
    let crossings = inner.windows(2).filter(|w| w[0] * w[1] < 0.0).count();
    let span_ns = dt * (inner.len() - 1) as f64;
    let f_est = crossings as f64 / 2.0 / (span_ns * 1e-3);
    assert!(
        (f_est - omega).abs() < 0.25 * omega,
        "residual oscillates at {f_est} MHz, expected ≈ {omega}"
    );
}

#[test]
fn low_power_pi_fidelities_match_broadened_model() {
    let ens = OverhauserEnsemble::gauss_hermite(4.8, 31);
    let fidelity = |omega: f64| {
        let grid = linspace(0.0, t_pi_ns(omega), 41);
        let r = run_rabi(omega, 0.0, &grid, &RelaxationParams::none(), &ens, None).unwrap();
        *r.p_down.last().unwrap()
    };
    let f10 = fidelity(10.0);
    assert!((f10 - 0.8).abs() < 0.05, "f_π(10 MHz) = {f10}");
    let f5 = fidelity(5.0);
    assert!((f5 - 0.6).abs() < 0.08, "f_π(5 MHz) = {f5}");
}

#[test]
fn rabi_envelope_decay_matches_gamma1_model() {
    // 1/e time of the visibility equals (3Γ₁/2)⁻¹ within 3% at high power.
    let omega = 95.0;
    let t_grid = linspace(0.0, 790.0, 7901);
    let trace = run_rabi(
        omega,
        0.0,
        &t_grid,
        &RelaxationParams {
            gamma1: Gamma1Model::Alpha(2.7e-2),
            gamma2_mhz: 0.0,
            nuclear: NuclearRateMode::Off,
        },
        &OverhauserEnsemble::none(),
        None,
    )
    .unwrap();
    let vis = visibility_per_pi(&trace.x, &trace.p_down, omega).unwrap();
    let tau = one_over_e_time(&vis).unwrap();
    assert!(!tau.censored);
    let expect = 1e3 / (1.5 * 2.7e-2 * omega);
    assert!(
        (tau.tau_ns - expect).abs() < 0.03 * expect,
        "τ = {} vs {expect}",
        tau.tau_ns
    );
}

#[test]
fn sequence_module_matches_paper_pulse_identities() {
    // π/2+π/2 composition identities through the generic sequence runner.
    let relax = RelaxationParams::none();
    let ens = OverhauserEnsemble::none();
    let seq_add = PulseSequence::new(vec![
        Segment::half_pi_pulse(50.0, 0.0, 0.0),
        Segment::half_pi_pulse(50.0, 0.0, 0.0),
    ]);
    assert!((run_sequence(&seq_add, &relax, &ens, None).unwrap() - 1.0).abs() < 1e-8);
    let seq_cancel = PulseSequence::new(vec![
        Segment::half_pi_pulse(50.0, 0.0, 0.0),
        Segment::half_pi_pulse(50.0, std::f64::consts::PI, 0.0),
    ]);
    assert!(run_sequence(&seq_cancel, &relax, &ens, None).unwrap() < 1e-8);
}

#[test]
fn cli_binary_runs_presets_and_is_deterministic() {
    let bin = env!("CARGO_BIN_EXE_esr-sim");
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    for dir in [&d1, &d2] {
        let status = std::process::Command::new(bin)
            .args([
                "rabi",
                "--omega-mhz",
                "50",
                "--t-max-ns",
                "200",
                "--points",
                "500",
                "--seed",
                "9",
                "--out",
            ])
            .arg(dir.path())
            .status()
            .unwrap();
        assert!(status.success());
    }
    assert_eq!(snapshot(d1.path()), snapshot(d2.path()));

    // A preset mismatch is refused with a clear error.
    let out = std::process::Command::new(bin)
        .args(["rabi", "--preset", "fig2b"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("spectral-density"));
}

#[test]
fn oracle_pipeline_passes_with_reduced_sampling() {
    let mut cfg = RunConfig::new(ExperimentKind::Oracle);
    cfg.experiment.seed = Some(11);
    cfg.bath.mc_nuclei_per_species = Some(30_000);
    cfg.bath.grid_points = Some(1024);
    cfg.ensemble.samples = Some(100_000);
    let dir = tempfile::tempdir().unwrap();
    let outcome = run(&cfg, Some(dir.path())).unwrap();
    assert!(outcome.summary.iter().all(|l| l.starts_with("PASS")));
    let report = fs::read_to_string(dir.path().join("oracle_report.txt")).unwrap();
    assert!(report.lines().count() >= 5);
}

#[test]
fn shipped_presets_produce_expected_headline_numbers() {
    // fig3c reproduces the T₂* ↔ σ pair.
    let cfg = preset("fig3c").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let outcome = run(&cfg, Some(dir.path())).unwrap();
    let line = outcome
        .summary
        .iter()
        .find(|l| l.contains("T2*"))
        .expect("ramsey summary");
    let t2: f64 = line
        .split('=')
        .nth(1)
        .unwrap()
        .trim()
        .split(' ')
        .next()
        .unwrap()
        .parse()
        .unwrap();
    assert!((t2 - 46.9).abs() < 0.5, "preset fig3c: T2* = {t2}");
}
