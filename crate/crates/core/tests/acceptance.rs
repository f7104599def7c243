//! Acceptance gate. Each test prints one `PASS`/`FAIL` line (to the real
//! stderr, so it shows without `--nocapture`) and then asserts.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Write;
use std::path::Path;
use std::process::Command;

use rayon::prelude::*;

use mows_lab::angle::circular_diff;
use mows_lab::dynamics::{measure_frequency, simulate, SimConfig};
use mows_lab::error::Error;
use mows_lab::fitting::{fit_ringdown, FitOptions};
use mows_lab::magnetometry::{calibrate, decompose_sweep, sweep_forward, CalibrationKnowns, DecomposeOptions};
use mows_lab::model::{
    field_sensitivity, frequency_shift, resonance_frequency, DeviceParams, MagneticEnvironment, NoiseSpec,
};
use mows_lab::signal::{effective_distance, first_harmonic_amplitude, synthesize, AmplitudeMode, MagnetometerConfig, RingdownParams};

fn verdict(n: u32, ok: bool, detail: &str) {
    let line = format!("{} criterion {n:>2}: {detail}\n", if ok { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(ok, "criterion {n}: {detail}");
}

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

fn dev() -> DeviceParams {
    DeviceParams::paper_device()
}

#[test]
fn criterion_01_sensitivity_identity() {
    let d = dev();
    // β(0) = f₀₀·m/(2k_M) at the quoted f₀₀ = 112.5 Hz, and at the device's own f₀₀
    let quoted = 112.5 * d.moment / (2.0 * d.k_m);
    let device = field_sensitivity(0.0, &d).unwrap();
    let ok = rel(quoted, 3680.0) <= 0.005 && rel(device, 3680.0) <= 0.005;
    verdict(
        1,
        ok,
        &format!("beta(0) = {:.4} Hz/mT (f00 = 112.5), {:.4} Hz/mT (f00 = {:.3}); target 3.68 +- 0.5%", quoted * 1e-3, device * 1e-3, d.natural_frequency()),
    );
}

#[test]
fn criterion_02_property_identification() {
    let d = dev();
    let fields: Vec<f64> = (-5..=5).filter(|i| *i != 0).map(|i| i as f64 * 1e-6).collect();
    let cfg = MagnetometerConfig::paper_setup();
    // end to end: synthesize and fit a ringdown at each field, f₀₀ from the B = 0 fit
    let fit_f = |b: f64| {
        let truth = RingdownParams {
            theta_t_max: d.theta_max,
            frequency: d.natural_frequency() + frequency_shift(&d, d.moment * b, 0.0).unwrap(),
            phase: 0.3,
            damping: d.damping,
            dc_offset: 0.0,
        };
        let rec = synthesize(&d, &cfg, 0.0, &truth, 60.0 / 112.5, &NoiseSpec::default(), 0).unwrap();
        fit_ringdown(&rec, &FitOptions::default()).unwrap().params.frequency
    };
    let f00 = fit_f(0.0);
    let points: Vec<(f64, f64)> = fields.par_iter().map(|&b| (b, fit_f(b) - f00)).collect();
    let cal = calibrate(
        &points,
        CalibrationKnowns {
            moment: d.moment,
            f00,
            mass: d.mass,
        },
    )
    .unwrap();
    let ok = rel(cal.k_m, 1.36e-5) <= 0.01 && rel(cal.inertia, 2.72e-11) <= 0.01 && rel(cal.lever, 1.94e-3) <= 0.01;
    verdict(
        2,
        ok,
        &format!(
            "k_M = {:.5e} N m, J = {:.5e} kg m2, l = {:.4} mm (targets 1.36e-5, 2.72e-11, 1.94 mm, 1%)",
            cal.k_m,
            cal.inertia,
            cal.lever * 1e3
        ),
    );
}

#[test]
fn criterion_03_effective_distance() {
    let r = effective_distance(0.06, 0.03);
    verdict(3, (r - 0.0675).abs() <= 1e-4, &format!("r_eff = {:.4} cm (target 6.75 +- 0.01 cm)", r * 100.0));
}

#[test]
fn criterion_04_ode_matches_closed_form() {
    let d = dev();
    let f00 = d.natural_frequency();
    let sim = |env: MagneticEnvironment| {
        let traj = simulate(&d, &env, &SimConfig::default()).unwrap();
        measure_frequency(&traj).unwrap().frequency
    };
    let mut worst: f64 = 0.0;
    let mut signs_ok = true;
    for b_mt in [-5.0, -2.0, -1.0, 0.0, 1.0, 2.0, 5.0] {
        let b = b_mt * 1e-3;
        let closed = f00 + frequency_shift(&d, d.moment * b, 0.0).unwrap();
        worst = worst.max((sim(MagneticEnvironment::uniform_field(b, 0.0)) - closed).abs());
    }
    let f_zero = sim(MagneticEnvironment::default());
    for g_mt in [-50.0, -20.0, 20.0, 50.0] {
        let g = g_mt * 1e-3;
        let closed = frequency_shift(&d, 0.0, d.lever * d.moment * g).unwrap();
        let simulated = sim(MagneticEnvironment::uniform_gradient(g, 0.0)) - f_zero;
        signs_ok &= simulated.signum() == closed.signum();
        worst = worst.max((simulated - closed).abs());
        // the absolute frequency as well
        let f_abs = resonance_frequency(d.k_m + d.lever * d.moment * g, d.inertia, d.damping).unwrap();
        worst = worst.max((sim(MagneticEnvironment::uniform_gradient(g, 0.0)) - f_abs).abs());
    }
    verdict(
        4,
        worst <= 5e-3 && signs_ok,
        &format!("max |f_sim - f_closed| = {:.3} mHz over B and G cases (limit 5 mHz), gradient signs agree: {signs_ok}", worst * 1e3),
    );
}

#[test]
fn criterion_05_nonlinear_regime() {
    let d = dev();
    let plus = frequency_shift(&d, d.moment * 5e-3, 0.0).unwrap();
    let minus = frequency_shift(&d, d.moment * -5e-3, 0.0).unwrap();
    let plus_ok = rel(plus, 17.8) <= 0.005;
    let minus_ok = rel(minus, -21.9) <= 0.005;

    // cancellation: oscillates just above -15.28 mT, not at or below it
    let b_c = -d.k_m / d.moment;
    let above = frequency_shift(&d, d.moment * (b_c + 1e-4), 0.0).is_ok();
    let at = matches!(frequency_shift(&d, d.moment * b_c, 0.0), Err(Error::NonOscillatory { .. }));
    let below = matches!(frequency_shift(&d, d.moment * (b_c - 1e-4), 0.0), Err(Error::NonOscillatory { .. }));
    let cancel_ok = above && at && below && (b_c + 15.28e-3).abs() <= 0.1e-3;

    verdict(
        5,
        plus_ok && minus_ok && cancel_ok,
        &format!(
            "df(+5 mT) = {plus:.3} Hz (target 17.8 +- 0.5%: {}), df(-5 mT) = {minus:.3} Hz (target -21.9 +- 0.5%: {}), cancellation at {:.3} mT (target -15.28 +- 0.1: {})",
            if plus_ok { "ok" } else { "off" },
            if minus_ok { "ok" } else { "off" },
            b_c * 1e3,
            if cancel_ok { "ok" } else { "off" },
        ),
    );
}

#[test]
fn criterion_06_fit_round_trip() {
    let d = dev();
    let cfg = MagnetometerConfig::paper_setup();
    let truth = RingdownParams {
        theta_t_max: d.theta_max,
        frequency: 112.5,
        phase: 0.7,
        damping: 1.8,
        dc_offset: 2e-8,
    };
    let mut worst: f64 = 0.0;
    for deg in [0.0f64, 30.0, 60.0, 150.0, 180.0] {
        let th = deg.to_radians();
        let rec = synthesize(&d, &cfg, th, &truth, 60.0 / 112.5, &NoiseSpec::default(), 0).unwrap();
        let p = fit_ringdown(&rec, &FitOptions::default()).unwrap().params;
        let theta_err = if th == 0.0 { circular_diff(p.theta0, th).abs() } else { circular_diff(p.theta0, th).abs() / th };
        for e in [
            rel(p.frequency, truth.frequency),
            rel(p.damping, truth.damping),
            theta_err,
            rel(p.theta_t_max, truth.theta_t_max),
            rel(p.dc_offset, truth.dc_offset),
        ] {
            worst = worst.max(e);
        }
    }
    verdict(6, worst <= 1e-6, &format!("worst relative error over f, delta, theta0, theta_max, B_DC = {worst:.2e} (limit 1e-6)"));
}

#[test]
fn criterion_07_fit_precision_monte_carlo() {
    let d = dev();
    let cfg = MagnetometerConfig::paper_setup();
    let kappa = cfg.kappa(d.moment);
    let truth = RingdownParams {
        theta_t_max: d.theta_max,
        frequency: 112.5,
        phase: 0.3,
        damping: d.damping,
        dc_offset: 0.0,
    };
    // first-harmonic amplitude at θ₀ = 0 over the noise std of s_final is 20;
    // s_final carries the noise of two independent sensors
    let amplitude = kappa * first_harmonic_amplitude(0.0, truth.theta_t_max, AmplitudeMode::Exact);
    let noise = NoiseSpec {
        independent_std: amplitude / 20.0 / 2f64.sqrt(),
        common_mode_std: 0.0,
    };
    let duration = 60.0 / truth.frequency;
    let runs: Vec<(f64, f64, f64)> = (0..100u64)
        .into_par_iter()
        .map(|seed| {
            let a = synthesize(&d, &cfg, 0.0, &truth, duration, &noise, seed).unwrap();
            let b = synthesize(&d, &cfg, FRAC_PI_2, &truth, duration, &noise, seed).unwrap();
            let fa = fit_ringdown(&a, &FitOptions::default()).unwrap();
            let fb = fit_ringdown(&b, &FitOptions::default()).unwrap();
            ((fa.params.frequency - truth.frequency).abs(), fa.r_squared, fb.r_squared)
        })
        .collect();
    let mut err: Vec<f64> = runs.iter().map(|r| r.0).collect();
    err.sort_by(|a, b| a.total_cmp(b));
    let median = 0.5 * (err[49] + err[50]);
    let wins = runs.iter().filter(|r| r.1 > r.2).count();
    verdict(
        7,
        median <= 1e-3 && wins >= 95,
        &format!("median |f_hat - f| = {:.3} mHz (limit 1 mHz); R2(0 deg) > R2(90 deg) in {wins}/100 seeds (need 95)", median * 1e3),
    );
}

#[test]
fn criterion_08_amplitude_formulas() {
    let tm = 15f64.to_radians();
    let ratio = |m| first_harmonic_amplitude(0.0, tm, m) / first_harmonic_amplitude(FRAC_PI_2, tm, m);
    let approx = ratio(AmplitudeMode::PaperApprox);
    let exact = ratio(AmplitudeMode::Exact);
    verdict(
        8,
        (approx - 7.6).abs() <= 0.1 && (exact - 15.2).abs() <= 0.1,
        &format!("0/90 deg amplitude ratio: approximation {approx:.3} (target 7.6 +- 0.1), exact {exact:.3} (target 15.2 +- 0.1)"),
    );
}

#[test]
fn criterion_09_decomposition_round_trip() {
    let d = dev();
    let grid: Vec<f64> = (0..24).map(|i| 2.0 * PI * i as f64 / 24.0).collect();
    let run = |env: MagneticEnvironment| {
        decompose_sweep(&sweep_forward(&d, &env, &grid, true).unwrap(), &d, DecomposeOptions::default()).unwrap()
    };
    let both = run(MagneticEnvironment {
        field: 100e-6,
        field_angle: 30f64.to_radians(),
        gradient: 20e-3,
        gradient_angle: 120f64.to_radians(),
        ..MagneticEnvironment::default()
    });
    let b_ang = circular_diff(both.b_angle, 30f64.to_radians()).abs().to_degrees();
    let g_ang = circular_diff(2.0 * both.g_angle, 240f64.to_radians()).abs().to_degrees() / 2.0;
    let combined = rel(both.b_est, 100e-6) <= 0.01 && rel(both.g_est, 20e-3) <= 0.01 && b_ang <= 0.5 && g_ang <= 0.5;
    let field = run(MagneticEnvironment::uniform_field(100e-6, 30f64.to_radians()));
    let grad = run(MagneticEnvironment::uniform_gradient(20e-3, 120f64.to_radians()));
    let r_field = field.p2 / field.p1;
    let r_grad = grad.p1 / grad.p2;
    verdict(
        9,
        combined && r_field <= 1e-3 && r_grad <= 1e-3,
        &format!(
            "B = {:.3} uT @ {:.3} deg, G = {:.3} mT/m @ {:.3} deg; pure field P2/P1 = {r_field:.1e}; pure gradient P1/P2 = {r_grad:.1e}",
            both.b_est * 1e6,
            both.b_angle.to_degrees(),
            both.g_est * 1e3,
            both.g_angle.to_degrees()
        ),
    );
}

fn run_cli(args: &[&str], jobs_env: Option<&str>) {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mows-lab"));
    cmd.args(args).env_remove("MOWS_LAB_JOBS");
    if let Some(j) = jobs_env {
        cmd.env("MOWS_LAB_JOBS", j);
    }
    let out = cmd.output().expect("spawn mows-lab");
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn criterion_10_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let base = tmp.path().to_path_buf();
    let cfg = base.join("noisy.json");
    // the bundled scenario with sensor noise, so the seed matters
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/paper-device.json"))
        .unwrap()
        .replace("\"independent_std_tesla\": 0.0", "\"independent_std_tesla\": 3e-9")
        .replace("\"common_mode_std_tesla\": 0.0", "\"common_mode_std_tesla\": 1e-8");
    std::fs::write(&cfg, text).unwrap();
    let cfg = cfg.to_str().unwrap().to_string();

    let mut snaps = Vec::new();
    for (i, jobs) in [Some("1"), Some("4"), None].into_iter().enumerate() {
        let out = base.join(format!("run{i}"));
        let out = out.to_str().unwrap();
        let mut sim = vec!["simulate", "--config", &cfg, "--out", out, "--seed", "11"];
        let mut fit = vec!["fit", "--config", &cfg, "--out", out, "--seed", "11"];
        // flag for the first two runs, environment fallback for the last
        let env = if i == 2 { Some("3") } else { None };
        if let Some(j) = jobs {
            sim.extend(["--jobs", j]);
            fit.extend(["--jobs", j]);
        }
        run_cli(&sim, env);
        run_cli(&fit, env);
        snaps.push(snapshot(Path::new(out)));
    }
    let n_files = snaps[0].len();
    let identical = snaps.windows(2).all(|w| w[0] == w[1]);
    let other = base.join("other_seed");
    let other = other.to_str().unwrap();
    run_cli(&["simulate", "--config", &cfg, "--out", other, "--seed", "12"], None);
    let differs = snapshot(Path::new(other))
        .iter()
        .find(|(n, _)| n == "record_0.csv")
        .map(|(_, b)| b)
        != snaps[0].iter().find(|(n, _)| n == "record_0.csv").map(|(_, b)| b);
    verdict(
        10,
        identical && differs && n_files >= 9,
        &format!("{n_files} artifacts byte-identical for --jobs 1, --jobs 4 and MOWS_LAB_JOBS=3: {identical}; a different seed changes the records: {differs}"),
    );
}
