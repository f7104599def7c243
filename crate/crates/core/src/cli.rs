//! The `mows-lab` command line: scenario-driven batch workflows.
//!
//! Every subcommand reads a scenario file and writes its artifacts to the
//! output directory. Work is spread over a thread pool sized by `--jobs`
//! (or `MOWS_LAB_JOBS`); results are collected in input order, so the files
//! do not depend on the number of threads.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::dynamics::{measure_frequency, simulate as integrate, SimConfig, Trajectory};
use crate::error::{Error, Result};
use crate::fitting::{fit_ringdown, mean_std, FitOptions, Param, RingdownFit};
use crate::magnetometry::{
    calibrate as calibrate_points, decompose_sweep, read_sweep_csv, write_calibration_csv, write_sweep_csv,
    CalibrationKnowns, CalibrationPoint,
    DecomposeOptions, SweepPoint,
};
use crate::model::{
    field_sensitivity, frequency_shift, gradient_sensitivity_limit, linear_frequency_shift, MagneticEnvironment,
};
use crate::scenario::Scenario;
use crate::signal::{first_harmonic_amplitude, record_seed, synthesize, RecordMeta, RingdownParams, RingdownRecord};

#[derive(Debug, Parser)]
#[command(name = "mows-lab", version, about = "Simulate, fit and invert magneto-oscillatory sensor ringdowns")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate a free ringdown (trajectory.csv) and synthesize n_repeats
    /// magnetometer records (record_<i>.csv, record.json).
    Simulate(CommonArgs),
    /// Fit every record_<i>.csv and write fit.txt / fit.json.
    Fit(InputArgs),
    /// Synthesize and fit n_repeats records per sweep angle; write sweep.csv.
    Sweep(CommonArgs),
    /// Split sweep.csv into field and gradient parts; write decompose.txt / decompose.json.
    Decompose(InputArgs),
    /// Fit records at the calibration fields and identify β, k_M, J and l.
    Calibrate(CommonArgs),
    /// Closed-form device summary: f₀₀, β(0), γ, cancellation field.
    Props(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Scenario file (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads [default: all cores].
    #[arg(long, env = "MOWS_LAB_JOBS")]
    pub jobs: Option<usize>,
    /// Overrides acquisition.seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// File or directory to read instead of the output directory.
    #[arg(long)]
    pub input: Option<PathBuf>,
}

/// Outcome of a subcommand: files written and a short report for the terminal.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub artifacts: Vec<PathBuf>,
    pub summary: String,
}

pub fn run(cli: Cli) -> Result<Outcome> {
    let (common, input) = match &cli.command {
        Command::Simulate(c) | Command::Sweep(c) | Command::Calibrate(c) | Command::Props(c) => (c, None),
        Command::Fit(a) | Command::Decompose(a) => (&a.common, a.input.as_deref()),
    };
    let mut scenario = Scenario::load(&common.config)?;
    if let Some(seed) = common.seed {
        scenario.acquisition.seed = seed;
    }
    std::fs::create_dir_all(&common.out).map_err(|e| Error::io(format!("creating {}", common.out.display()), e))?;

    let threads = match common.jobs {
        Some(0) => return Err(Error::invalid("jobs", "must be >= 1")),
        Some(n) => n,
        None => 0,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let out = common.out.as_path();
    pool.install(|| match &cli.command {
        Command::Simulate(_) => simulate(&scenario, out),
        Command::Fit(_) => fit(&scenario, out, input),
        Command::Sweep(_) => sweep(&scenario, out),
        Command::Decompose(_) => decompose(&scenario, out, input),
        Command::Calibrate(_) => calibrate(&scenario, out),
        Command::Props(_) => props(&scenario, out),
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(format!("creating {}", path.display()), e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| Error::Config(e.to_string()))?;
    s.push('\n');
    write_text(path, &s)
}

fn finish<W: Write>(mut w: W, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn kv(pairs: &[(&str, String)]) -> String {
    let mut s = String::new();
    for (k, v) in pairs {
        let _ = writeln!(s, "{k}={v}");
    }
    s
}

/// Frequency shift the scenario predicts at a rest orientation.
fn predicted_shift(s: &Scenario, env: &MagneticEnvironment, theta0: f64) -> Result<f64> {
    let k = env.springs(&s.device, theta0);
    if s.modes.linear {
        Ok(linear_frequency_shift(&s.device, k.k_b, k.k_g))
    } else {
        frequency_shift(&s.device, k.k_b, k.k_g)
    }
}

fn ringdown_truth(s: &Scenario, env: &MagneticEnvironment, theta0: f64) -> Result<RingdownParams> {
    Ok(RingdownParams {
        theta_t_max: s.device.theta_max,
        frequency: s.device.natural_frequency() + predicted_shift(s, env, theta0)?,
        phase: s.acquisition.phase,
        damping: s.device.damping,
        dc_offset: env.dc_offset,
    })
}

fn fit_options(s: &Scenario) -> FitOptions {
    FitOptions {
        freeze: if s.modes.fit_kappa { vec![] } else { vec![Param::Kappa] },
        ..FitOptions::default()
    }
}

fn meta(s: &Scenario, theta0: f64) -> RecordMeta {
    RecordMeta {
        config: s.magnetometers,
        device: s.device,
        theta0,
    }
}

/// Synthesizes and fits one record per `(environment, θ₀, seed index)` job,
/// in parallel, returning fitted frequencies in job order.
fn fit_jobs(s: &Scenario, jobs: &[(MagneticEnvironment, f64, u64)]) -> Result<Vec<f64>> {
    let opts = fit_options(s);
    jobs.par_iter()
        .map(|(env, theta0, idx)| {
            let truth = ringdown_truth(s, env, *theta0)?;
            let rec = synthesize(
                &s.device,
                &s.magnetometers,
                *theta0,
                &truth,
                s.acquisition.duration,
                &env.noise,
                record_seed(s.acquisition.seed, *idx),
            )?;
            Ok(fit_ringdown(&rec, &opts)?.params.frequency)
        })
        .collect()
}

fn ode_trajectory(s: &Scenario) -> Result<Trajectory> {
    let base = SimConfig {
        theta0: s.acquisition.theta0,
        drive: None,
        theta_init: s.device.theta_max,
        duration: s.acquisition.duration,
        dt: 1.0 / s.magnetometers.sample_rate,
        clamp: true,
        ..SimConfig::default()
    };
    match integrate(&s.device, &s.environment, &base) {
        Err(Error::Resolution { dt, max_dt }) => {
            let k = (dt / max_dt).ceil();
            integrate(&s.device, &s.environment, &SimConfig { dt: dt / k, ..base })
        }
        other => other,
    }
}

fn simulate(s: &Scenario, out: &Path) -> Result<Outcome> {
    let mut artifacts = Vec::new();
    let theta0 = s.acquisition.theta0;
    let truth = ringdown_truth(s, &s.environment, theta0)?;

    let traj = ode_trajectory(s)?;
    let path = out.join("trajectory.csv");
    let mut w = create(&path)?;
    traj.write_csv(&mut w).map_err(|e| Error::io(path.display().to_string(), e))?;
    finish(w, &path)?;
    artifacts.push(path);

    let seeds: Vec<u64> = (0..s.acquisition.n_repeats as u64)
        .map(|i| record_seed(s.acquisition.seed, i))
        .collect();
    let records: Vec<RingdownRecord> = seeds
        .par_iter()
        .map(|&seed| {
            synthesize(
                &s.device,
                &s.magnetometers,
                theta0,
                &truth,
                s.acquisition.duration,
                &s.environment.noise,
                seed,
            )
        })
        .collect::<Result<_>>()?;
    for (i, rec) in records.iter().enumerate() {
        let path = out.join(format!("record_{i}.csv"));
        let mut w = create(&path)?;
        rec.write_csv(&mut w).map_err(|e| Error::io(path.display().to_string(), e))?;
        finish(w, &path)?;
        artifacts.push(path);
    }
    let path = out.join("record.json");
    write_json(
        &path,
        &json!({
            "meta": meta(s, theta0),
            "truth": truth,
            "seeds": seeds,
        }),
    )?;
    artifacts.push(path);

    let ode_f = measure_frequency(&traj).ok();
    let mut pairs = vec![
        ("f00_hz", s.device.natural_frequency().to_string()),
        ("f_signal_hz", truth.frequency.to_string()),
        ("records", records.len().to_string()),
        ("samples_per_record", records.first().map_or(0, |r| r.len()).to_string()),
        ("trajectory_samples", traj.len().to_string()),
    ];
    if let Some(e) = ode_f {
        pairs.push(("trajectory_f_hz", e.frequency.to_string()));
    }
    let summary = kv(&pairs);
    let path = out.join("simulate.txt");
    write_text(&path, &summary)?;
    artifacts.push(path);
    Ok(Outcome { artifacts, summary })
}

/// `record_<i>.csv` files in a directory, ordered by index.
fn record_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut found: Vec<(u64, PathBuf)> = Vec::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(format!("listing {}", dir.display()), e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(format!("listing {}", dir.display()), e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(idx) = name
            .strip_prefix("record_")
            .and_then(|r| r.strip_suffix(".csv"))
            .and_then(|r| r.parse::<u64>().ok())
        {
            found.push((idx, entry.path()));
        }
    }
    found.sort();
    Ok(found.into_iter().map(|(_, p)| p).collect())
}

fn fit_json(name: &str, fit: &RingdownFit) -> Value {
    let p = &fit.params;
    let names: Vec<&str> = fit.free.iter().map(|q| q.name()).collect();
    let cov: Vec<Vec<f64>> = (0..fit.covariance.nrows())
        .map(|i| fit.covariance.row(i).iter().copied().collect())
        .collect();
    json!({
        "record": name,
        "kappa_tesla": p.kappa,
        "theta0_rad": p.theta0,
        "theta_t_max_rad": p.theta_t_max,
        "f_hz": p.frequency,
        "phi_rad": p.phase,
        "delta_per_second": p.damping,
        "b_dc_tesla": p.dc_offset,
        "covariance": { "parameters": names, "matrix": cov },
        "r_squared": fit.r_squared,
        "residual_norm_tesla": fit.residual_norm,
        "samples_used": fit.samples_used,
        "iterations": fit.iterations,
        "converged": fit.converged,
        "termination": fit.termination.as_str(),
        "warnings": fit.warnings,
    })
}

fn fit(s: &Scenario, out: &Path, input: Option<&Path>) -> Result<Outcome> {
    let source = input.unwrap_or(out);
    let files = if source.is_dir() {
        record_files(source)?
    } else {
        vec![source.to_path_buf()]
    };
    if files.is_empty() {
        return Err(Error::Config(format!(
            "no record_<i>.csv files in {}; run `simulate` first or pass --input",
            source.display()
        )));
    }
    let opts = fit_options(s);
    let m = meta(s, s.acquisition.theta0);
    let results: Vec<(String, Result<RingdownFit>)> = files
        .par_iter()
        .map(|path| {
            let name = path.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
            let res = File::open(path)
                .map_err(|e| Error::io(format!("opening {}", path.display()), e))
                .and_then(|f| RingdownRecord::read_csv(BufReader::new(f), m, &path.display().to_string()))
                .and_then(|rec| fit_ringdown(&rec, &opts));
            (name, res)
        })
        .collect();

    let mut text = String::new();
    let mut fits_json = Vec::new();
    let mut freqs = Vec::new();
    for (name, res) in &results {
        let _ = writeln!(text, "record={name}");
        match res {
            Ok(f) => {
                text.push_str(&f.report());
                fits_json.push(fit_json(name, f));
                freqs.push(f.params.frequency);
            }
            Err(e) => {
                let _ = writeln!(text, "error={e}");
                fits_json.push(json!({ "record": name, "error": e.to_string() }));
            }
        }
    }
    if freqs.is_empty() {
        let first = results.iter().find_map(|(n, r)| r.as_ref().err().map(|e| format!("{n}: {e}")));
        return Err(Error::Config(format!("no record could be fitted ({})", first.unwrap_or_default())));
    }
    let (mean, std) = mean_std(&freqs);
    let summary = kv(&[
        ("records", results.len().to_string()),
        ("fitted", freqs.len().to_string()),
        ("f_mean_hz", mean.to_string()),
        ("f_std_hz", std.to_string()),
    ]);
    text.push_str(&summary);

    let txt = out.join("fit.txt");
    write_text(&txt, &text)?;
    let js = out.join("fit.json");
    write_json(
        &js,
        &json!({
            "fits": fits_json,
            "f_mean_hz": mean,
            "f_std_hz": std,
            "fitted": freqs.len(),
        }),
    )?;
    Ok(Outcome {
        artifacts: vec![txt, js],
        summary,
    })
}

fn sweep(s: &Scenario, out: &Path) -> Result<Outcome> {
    let grid = s
        .sweep
        .as_ref()
        .ok_or_else(|| Error::Config("scenario has no `sweep` section".into()))?;
    let n_rep = s.acquisition.n_repeats;
    let jobs: Vec<(MagneticEnvironment, f64, u64)> = grid
        .iter()
        .enumerate()
        .flat_map(|(i, &th)| (0..n_rep).map(move |r| (i, th, r)))
        .map(|(i, th, r)| (s.environment, th, (i * n_rep + r) as u64))
        .collect();
    let freqs = fit_jobs(s, &jobs)?;
    let f00 = s.device.natural_frequency();
    let points: Vec<SweepPoint> = grid
        .iter()
        .zip(freqs.chunks(n_rep))
        .map(|(&theta0, f)| {
            let (mean, std) = mean_std(f);
            SweepPoint {
                theta0,
                delta_f: mean - f00,
                sigma_f: std,
            }
        })
        .collect();
    let path = out.join("sweep.csv");
    let mut w = create(&path)?;
    write_sweep_csv(&points, &mut w).map_err(|e| Error::io(path.display().to_string(), e))?;
    finish(w, &path)?;
    let (lo, hi) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.delta_f), hi.max(p.delta_f)));
    let summary = kv(&[
        ("points", points.len().to_string()),
        ("fits", freqs.len().to_string()),
        ("delta_f_min_hz", lo.to_string()),
        ("delta_f_max_hz", hi.to_string()),
    ]);
    Ok(Outcome {
        artifacts: vec![path],
        summary,
    })
}

fn decompose(s: &Scenario, out: &Path, input: Option<&Path>) -> Result<Outcome> {
    let path = match input {
        Some(p) if p.is_dir() => p.join("sweep.csv"),
        Some(p) => p.to_path_buf(),
        None => out.join("sweep.csv"),
    };
    let f = File::open(&path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let points = read_sweep_csv(BufReader::new(f), &path.display().to_string())?;
    let dec = decompose_sweep(
        &points,
        &s.device,
        DecomposeOptions {
            offset: s.modes.sweep_offset,
        },
    )?;
    let summary = dec.report();
    let txt = out.join("decompose.txt");
    write_text(&txt, &summary)?;
    let js = out.join("decompose.json");
    write_json(&js, &serde_json::to_value(&dec).map_err(|e| Error::Config(e.to_string()))?)?;
    Ok(Outcome {
        artifacts: vec![txt, js],
        summary,
    })
}

fn calibrate(s: &Scenario, out: &Path) -> Result<Outcome> {
    let applied = s
        .calibration
        .as_ref()
        .ok_or_else(|| Error::Config("scenario has no `calibration` section".into()))?;
    let theta0 = s.acquisition.theta0;
    let mut fields = vec![0.0];
    fields.extend(applied.iter().copied().filter(|b| *b != 0.0));
    let n_rep = s.acquisition.n_repeats;
    // the applied field points along the rest moment
    let jobs: Vec<(MagneticEnvironment, f64, u64)> = fields
        .iter()
        .enumerate()
        .flat_map(|(i, &b)| {
            (0..n_rep).map(move |r| {
                let env = MagneticEnvironment {
                    field: b,
                    field_angle: theta0,
                    ..s.environment
                };
                (env, theta0, (i * n_rep + r) as u64)
            })
        })
        .collect();
    let freqs = fit_jobs(s, &jobs)?;
    let stats: Vec<(f64, f64)> = freqs.chunks(n_rep).map(mean_std).collect();
    let f00 = stats[0].0;
    let points: Vec<(f64, f64)> = fields.iter().zip(&stats).skip(1).map(|(b, st)| (*b, st.0 - f00)).collect();
    let cal = calibrate_points(
        &points,
        CalibrationKnowns {
            moment: s.device.moment,
            f00,
            mass: s.device.mass,
        },
    )?;

    let rows: Vec<CalibrationPoint> = fields
        .iter()
        .zip(&stats)
        .map(|(b, st)| CalibrationPoint {
            field: *b,
            delta_f: st.0 - f00,
            sigma_f: st.1,
        })
        .collect();
    let csv = out.join("calibration.csv");
    let mut w = create(&csv)?;
    write_calibration_csv(&rows, &mut w).map_err(|e| Error::io(csv.display().to_string(), e))?;
    finish(w, &csv)?;

    let mut summary = format!("f00_fitted_hz={f00}\n");
    summary.push_str(&cal.report());
    let txt = out.join("calibrate.txt");
    write_text(&txt, &summary)?;
    let js = out.join("calibrate.json");
    write_json(
        &js,
        &json!({
            "f00_fitted_hz": f00,
            "beta_hz_per_tesla": cal.beta,
            "intercept_hz": cal.intercept,
            "k_m_newton_meter": cal.k_m,
            "inertia_kg_m2": cal.inertia,
            "lever_meter": cal.lever,
        }),
    )?;
    Ok(Outcome {
        artifacts: vec![csv, txt, js],
        summary,
    })
}

fn props(s: &Scenario, out: &Path) -> Result<Outcome> {
    let d = &s.device;
    let m = &s.magnetometers;
    let amp0 = first_harmonic_amplitude(0.0, d.theta_max, s.modes.amplitude);
    let amp90 = first_harmonic_amplitude(std::f64::consts::FRAC_PI_2, d.theta_max, s.modes.amplitude);
    let values = [
        ("f00_hz", d.natural_frequency()),
        ("beta0_hz_per_tesla", field_sensitivity(0.0, d)?),
        ("gamma_hz_m_per_tesla", gradient_sensitivity_limit(d)),
        ("cancellation_field_tesla", d.cancellation_field()),
        ("lever_meter", d.lever),
        ("effective_distance_meter", m.effective_distance()),
        ("kappa_tesla", m.kappa(d.moment)),
        ("amplitude_ratio_0_to_90", amp0 / amp90),
    ];
    let pairs: Vec<(&str, String)> = values.iter().map(|(k, v)| (*k, v.to_string())).collect();
    let summary = kv(&pairs);
    let txt = out.join("props.txt");
    write_text(&txt, &summary)?;
    let js = out.join("props.json");
    let obj: serde_json::Map<String, Value> = values.iter().map(|(k, v)| (k.to_string(), json!(v))).collect();
    write_json(&js, &Value::Object(obj))?;
    Ok(Outcome {
        artifacts: vec![txt, js],
        summary,
    })
}
