//! Ringdown fitting: parameter estimation for the sensor signal model.

pub mod guess;
pub mod lm;

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::angle::{circular_diff, wrap_pi, wrap_two_pi};
use crate::error::{Error, Result};
use crate::signal::{ringdown_model, RingdownRecord};

pub use guess::initial_guess;
pub use lm::{lm_minimize, LmOptions, LmReport, Termination};

use guess::axis_response;

/// One fit parameter of the ringdown model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Param {
    Kappa,
    Theta0,
    ThetaTMax,
    Frequency,
    Phase,
    Damping,
    DcOffset,
}

impl Param {
    pub const ALL: [Param; 7] = [
        Param::Kappa,
        Param::Theta0,
        Param::ThetaTMax,
        Param::Frequency,
        Param::Phase,
        Param::Damping,
        Param::DcOffset,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Param::Kappa => "kappa",
            Param::Theta0 => "theta0",
            Param::ThetaTMax => "theta_t_max",
            Param::Frequency => "f",
            Param::Phase => "phi",
            Param::Damping => "delta",
            Param::DcOffset => "b_dc",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Full parameter set of the signal model. Units: T, rad, rad, Hz, rad, 1/s, T.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RingdownParamSet {
    pub kappa: f64,
    pub theta0: f64,
    pub theta_t_max: f64,
    pub frequency: f64,
    pub phase: f64,
    pub damping: f64,
    pub dc_offset: f64,
}

impl RingdownParamSet {
    pub fn to_array(&self) -> [f64; 7] {
        [
            self.kappa,
            self.theta0,
            self.theta_t_max,
            self.frequency,
            self.phase,
            self.damping,
            self.dc_offset,
        ]
    }

    pub fn from_array(v: [f64; 7]) -> Self {
        RingdownParamSet {
            kappa: v[0],
            theta0: v[1],
            theta_t_max: v[2],
            frequency: v[3],
            phase: v[4],
            damping: v[5],
            dc_offset: v[6],
        }
    }

    pub fn get(&self, p: Param) -> f64 {
        self.to_array()[p.index()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    /// Parameters held at their starting value. κ is frozen by default, to
    /// the value given by the magnetometer geometry.
    pub freeze: Vec<Param>,
    pub lm: LmOptions,
    /// Starting point; [`initial_guess`] when absent.
    pub guess: Option<RingdownParamSet>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            freeze: vec![Param::Kappa],
            lm: LmOptions::default(),
            guess: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RingdownFit {
    pub params: RingdownParamSet,
    /// Covariance of the free parameters, ordered as `free`.
    pub covariance: DMatrix<f64>,
    pub free: Vec<Param>,
    pub r_squared: f64,
    pub iterations: usize,
    pub converged: bool,
    pub termination: Termination,
    /// Euclidean norm of the residual over the samples used, T.
    pub residual_norm: f64,
    pub samples_used: usize,
    pub warnings: Vec<String>,
}

impl RingdownFit {
    /// 1σ uncertainty of a parameter; zero when it was frozen.
    pub fn std_error(&self, p: Param) -> f64 {
        match self.free.iter().position(|q| *q == p) {
            Some(i) => self.covariance[(i, i)].max(0.0).sqrt(),
            None => 0.0,
        }
    }

    /// `key=value` report, one line per entry.
    pub fn report(&self) -> String {
        let mut s = String::new();
        let p = &self.params;
        for (k, v) in [
            ("kappa_tesla", p.kappa),
            ("theta0_rad", p.theta0),
            ("theta_t_max_rad", p.theta_t_max),
            ("f_hz", p.frequency),
            ("phi_rad", p.phase),
            ("delta_per_second", p.damping),
            ("b_dc_tesla", p.dc_offset),
        ] {
            let _ = writeln!(s, "{k}={v}");
        }
        for q in &self.free {
            let _ = writeln!(s, "sigma_{}={}", q.name(), self.std_error(*q));
        }
        let _ = writeln!(s, "r_squared={}", self.r_squared);
        let _ = writeln!(s, "residual_norm_tesla={}", self.residual_norm);
        let _ = writeln!(s, "samples_used={}", self.samples_used);
        let _ = writeln!(s, "iterations={}", self.iterations);
        let _ = writeln!(s, "converged={}", self.converged);
        let _ = writeln!(s, "termination={}", self.termination.as_str());
        for w in &self.warnings {
            let _ = writeln!(s, "warning={w}");
        }
        s
    }
}

/// Fits the ringdown model to `s_final`.
///
/// Samples where either sensor is saturated are excluded. The result is put
/// in canonical form: `θmax > 0`, `κ > 0`, θ₀ in `[0, 2π)`, φ in `[−π, π)`.
/// The signal is unchanged under `θ₀ → −2c − θ₀, φ → φ + π` (with
/// `c = atan2(b, 2a)` from the sensor axis), so θ₀ is only determined up to
/// that mirror; the branch closer to the record's nominal θ₀ is reported.
pub fn fit_ringdown(record: &RingdownRecord, options: &FitOptions) -> Result<RingdownFit> {
    let start = match options.guess {
        Some(g) => g,
        None => initial_guess(record)?,
    };
    let start_v = start.to_array();
    if start_v.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("guess", "all starting values must be finite"));
    }

    let used: Vec<usize> = (0..record.len()).filter(|&i| !record.is_saturated(i)).collect();
    let free: Vec<Param> = Param::ALL
        .into_iter()
        .filter(|p| !options.freeze.contains(p))
        .collect();
    if used.len() <= free.len() {
        return Err(Error::Degenerate {
            op: "fit_ringdown",
            reason: format!("{} unsaturated samples for {} parameters", used.len(), free.len()),
        });
    }
    let t: Vec<f64> = used.iter().map(|&i| record.t[i]).collect();
    let y: Vec<f64> = used.iter().map(|&i| record.s_final[i]).collect();
    let [ax, bx, _] = record.meta.config.axis;

    let expand = |q: &[f64]| {
        let mut full = start_v;
        for (k, p) in free.iter().enumerate() {
            full[p.index()] = q[k];
        }
        full
    };
    let residual = |q: &[f64]| -> Vec<f64> {
        let v = expand(q);
        t.iter()
            .zip(&y)
            .map(|(&ti, &yi)| yi - ringdown_model(ti, ax, bx, v[0], v[1], v[2], v[3], v[4], v[5], v[6]))
            .collect()
    };

    let kappa_scale = start.kappa.abs().max(1e-15);
    let scale_of = |p: Param| match p {
        Param::Kappa | Param::DcOffset => kappa_scale,
        Param::Frequency => start.frequency.abs().max(1.0),
        _ => 1.0,
    };
    let mut lm_opts = options.lm.clone();
    if lm_opts.scales.is_none() {
        lm_opts.scales = Some(free.iter().map(|p| scale_of(*p)).collect());
    }
    let initial: Vec<f64> = free.iter().map(|p| start_v[p.index()]).collect();
    let names: Vec<&str> = free.iter().map(|p| p.name()).collect();
    let report = lm::lm_minimize_named(residual, &initial, &lm_opts, &names)?;

    let mut v = expand(&report.params);
    let mut cov = report.covariance.clone();
    let flip = |p: Param, cov: &mut DMatrix<f64>| {
        if let Some(i) = free.iter().position(|q| *q == p) {
            cov.row_mut(i).neg_mut();
            cov.column_mut(i).neg_mut();
        }
    };
    if v[0] < 0.0 {
        v[0] = -v[0];
        v[1] += PI;
        flip(Param::Kappa, &mut cov);
    }
    if v[2] < 0.0 {
        v[2] = -v[2];
        v[4] += PI;
        flip(Param::ThetaTMax, &mut cov);
    }
    let (_, c) = axis_response(record.meta.config.axis);
    let hint = record.meta.theta0;
    let mirrored = -2.0 * c - v[1];
    if circular_diff(mirrored, hint).abs() < circular_diff(v[1], hint).abs() {
        v[1] = mirrored;
        v[4] += PI;
        flip(Param::Theta0, &mut cov);
    }
    v[1] = wrap_two_pi(v[1]);
    v[4] = wrap_pi(v[4]);
    let params = RingdownParamSet::from_array(v);

    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let ss_res = report.residual_norm * report.residual_norm;
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else if ss_res == 0.0 { 1.0 } else { f64::NEG_INFINITY };

    let mut warnings = Vec::new();
    if !report.converged() {
        warnings.push(format!("not converged after {} iterations", report.iterations));
    }
    if (params.theta0 + c).sin().abs() < 0.5 {
        warnings.push(format!(
            "theta0={:.1} deg is near the weak-signal orientation; expect inflated uncertainties",
            params.theta0.to_degrees()
        ));
    }
    if !(params.theta_t_max > 0.0 && params.theta_t_max < PI / 2.0) {
        warnings.push(format!("theta_t_max={} rad outside (0, pi/2)", params.theta_t_max));
    }

    Ok(RingdownFit {
        params,
        covariance: cov,
        free,
        r_squared,
        iterations: report.iterations,
        converged: report.converged(),
        termination: report.termination,
        residual_norm: report.residual_norm,
        samples_used: used.len(),
        warnings,
    })
}

#[derive(Debug)]
pub struct FrequencySeries {
    pub mean: f64,
    /// Sample standard deviation (n − 1), Hz.
    pub std: f64,
    /// Per-record outcome, in input order.
    pub fits: Vec<Result<RingdownFit>>,
}

impl FrequencySeries {
    pub fn successes(&self) -> usize {
        self.fits.iter().filter(|f| f.is_ok()).count()
    }
}

/// Fits each record independently (in parallel) and summarizes the fitted
/// frequencies. Fails when fewer than two records fit.
pub fn frequency_series(records: &[RingdownRecord], options: &FitOptions) -> Result<FrequencySeries> {
    if records.len() < 2 {
        return Err(Error::invalid("records", "need at least 2 records"));
    }
    let fits: Vec<Result<RingdownFit>> = records.par_iter().map(|r| fit_ringdown(r, options)).collect();
    let f: Vec<f64> = fits.iter().filter_map(|r| r.as_ref().ok()).map(|r| r.params.frequency).collect();
    if f.len() < 2 {
        let first_err = fits.iter().find_map(|r| r.as_ref().err()).map(|e| e.to_string()).unwrap_or_default();
        return Err(Error::Degenerate {
            op: "frequency_series",
            reason: format!("only {} of {} records fitted ({first_err})", f.len(), records.len()),
        });
    }
    let (mean, std) = mean_std(&f);
    Ok(FrequencySeries { mean, std, fits })
}

/// Mean and sample standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
