//! From frequency shifts to fields: inversion, rotation sweeps and
//! calibration of device properties.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::angle::wrap_two_pi;
use crate::error::{Error, Result};
use crate::model::{
    frequency_shift, gradient_sensitivity_limit, inertia_from_sensitivity, linear_frequency_shift,
    spring_from_sensitivity, DeviceParams, MagneticEnvironment,
};
use crate::signal::read_table;

fn check_shift(delta_f: f64, f00: f64, op: &'static str) -> Result<()> {
    if !delta_f.is_finite() || delta_f <= -f00 {
        return Err(Error::Domain {
            op,
            reason: format!("Δf = {delta_f} Hz must exceed −f₀₀ = {} Hz", -f00),
        });
    }
    Ok(())
}

/// Field along the moment that produces `delta_f`, T.
///
/// Linear mode divides by `β(0) = f₀₀·m/(2k_M)`; exact mode inverts the
/// square-root shift law, `B = k_M·((1+Δf/f₀₀)² − 1)/m`.
pub fn field_from_shift(delta_f: f64, params: &DeviceParams, linear: bool) -> Result<f64> {
    let f00 = params.natural_frequency();
    check_shift(delta_f, f00, "field_from_shift")?;
    if linear {
        Ok(delta_f * 2.0 * params.k_m / (f00 * params.moment))
    } else {
        let x = delta_f / f00;
        Ok(params.k_m * x * (2.0 + x) / params.moment)
    }
}

/// Gradient that produces `delta_f`, T/m.
///
/// Linear mode divides by `gamma` when supplied (a measured sensitivity,
/// Hz·m/T) and by the model value `f₀₀·l·m/(2k_M)` otherwise. Exact mode
/// is `k_M·((1+Δf/f₀₀)² − 1)/(l·m)`, the inverse of the shift law; the override
/// does not apply to it.
pub fn gradient_from_shift(delta_f: f64, params: &DeviceParams, linear: bool, gamma: Option<f64>) -> Result<f64> {
    let lm = params.lever * params.moment;
    if lm == 0.0 {
        return Err(Error::Degenerate {
            op: "gradient_from_shift",
            reason: "lever arm is zero, the device has no gradient spring".into(),
        });
    }
    let f00 = params.natural_frequency();
    check_shift(delta_f, f00, "gradient_from_shift")?;
    if linear {
        let g = gamma.unwrap_or_else(|| gradient_sensitivity_limit(params));
        if !(g != 0.0 && g.is_finite()) {
            return Err(Error::invalid("gamma", format!("must be finite and non-zero, got {g}")));
        }
        Ok(delta_f / g)
    } else {
        let x = delta_f / f00;
        Ok(params.k_m * x * (2.0 + x) / lm)
    }
}

/// Frequency shift at one rest orientation of a rotation sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub theta0: f64,
    pub delta_f: f64,
    /// Spread of repeated fits, Hz; zero for noise-free points.
    pub sigma_f: f64,
}

/// Noise-free sweep: the shift at each orientation in `grid`.
pub fn sweep_forward(
    params: &DeviceParams,
    env: &MagneticEnvironment,
    grid: &[f64],
    linear: bool,
) -> Result<Vec<SweepPoint>> {
    if grid.is_empty() {
        return Err(Error::invalid("grid", "must not be empty"));
    }
    grid.iter()
        .map(|&theta0| {
            let s = env.springs(params, theta0);
            let delta_f = if linear {
                linear_frequency_shift(params, s.k_b, s.k_g)
            } else {
                frequency_shift(params, s.k_b, s.k_g)?
            };
            Ok(SweepPoint {
                theta0,
                delta_f,
                sigma_f: 0.0,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DecomposeOptions {
    /// Fit a constant frequency offset as well (drift studies).
    pub offset: bool,
}

/// `Δf(θ₀) = P1·cos(θ₀+φ1) + P2·cos(2θ₀+φ2) [+ offset]` fitted to a sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepDecomposition {
    pub p1: f64,
    /// [0, 2π)
    pub phi1: f64,
    pub p2: f64,
    /// [0, 2π)
    pub phi2: f64,
    pub offset: f64,
    pub b_est: f64,
    /// Direction of the field in the rotation plane, [0, 2π).
    pub b_angle: f64,
    /// Gradient magnitude, T/m. Its sign is not identifiable from a sweep.
    pub g_est: f64,
    /// Gradient axis, [0, π).
    pub g_angle: f64,
    pub residual_rms: f64,
    pub warnings: Vec<String>,
}

impl SweepDecomposition {
    pub fn report(&self) -> String {
        let mut s = String::new();
        for (k, v) in [
            ("p1_hz", self.p1),
            ("phi1_rad", self.phi1),
            ("p2_hz", self.p2),
            ("phi2_rad", self.phi2),
            ("offset_hz", self.offset),
            ("b_est_tesla", self.b_est),
            ("b_angle_deg", self.b_angle.to_degrees()),
            ("g_est_tesla_per_meter", self.g_est),
            ("g_angle_deg", self.g_angle.to_degrees()),
            ("residual_rms_hz", self.residual_rms),
        ] {
            s.push_str(&format!("{k}={v}\n"));
        }
        for w in &self.warnings {
            s.push_str(&format!("warning={w}\n"));
        }
        s
    }
}

/// Angular coverage of a set of orientations: 2π minus the largest gap.
fn angular_span(thetas: &[f64]) -> f64 {
    let mut a: Vec<f64> = thetas.iter().map(|t| wrap_two_pi(*t)).collect();
    a.sort_by(|x, y| x.total_cmp(y));
    let mut gap = a[0] + 2.0 * PI - a[a.len() - 1];
    for w in a.windows(2) {
        gap = gap.max(w[1] - w[0]);
    }
    2.0 * PI - gap
}

/// Weighted least squares of the first and second rotation harmonics, and
/// conversion to field and gradient estimates.
pub fn decompose_sweep(
    points: &[SweepPoint],
    params: &DeviceParams,
    options: DecomposeOptions,
) -> Result<SweepDecomposition> {
    let n_par = if options.offset { 5 } else { 4 };
    if points.len() < 5 {
        return Err(Error::Identifiability(format!(
            "{} sweep points, at least 5 are needed",
            points.len()
        )));
    }
    let thetas: Vec<f64> = points.iter().map(|p| p.theta0).collect();
    let span = angular_span(&thetas);
    if span < PI - 1e-9 {
        return Err(Error::Identifiability(format!(
            "sweep covers {:.1} deg, at least 180 deg is needed",
            span.to_degrees()
        )));
    }
    if points.iter().any(|p| !(p.sigma_f >= 0.0) || !p.delta_f.is_finite()) {
        return Err(Error::invalid("points", "delta_f must be finite and sigma_f >= 0"));
    }

    let n = points.len();
    let row = |t: f64| {
        let mut r = vec![t.cos(), t.sin(), (2.0 * t).cos(), (2.0 * t).sin()];
        if options.offset {
            r.push(1.0);
        }
        r
    };
    let mut a = DMatrix::zeros(n, n_par);
    let mut y = DVector::zeros(n);
    for (i, p) in points.iter().enumerate() {
        let w = if p.sigma_f > 0.0 { 1.0 / p.sigma_f } else { 1.0 };
        for (j, v) in row(p.theta0).into_iter().enumerate() {
            a[(i, j)] = v * w;
        }
        y[i] = p.delta_f * w;
    }
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    if svd.singular_values.min() <= 1e-10 * smax {
        return Err(Error::RankDeficient(
            "sweep angles do not separate the cos θ and cos 2θ terms".into(),
        ));
    }
    let x = svd
        .solve(&y, 1e-12 * smax)
        .map_err(|e| Error::RankDeficient(e.to_string()))?;

    let (c1, s1, c2, s2) = (x[0], x[1], x[2], x[3]);
    let offset = if options.offset { x[4] } else { 0.0 };
    let p1 = c1.hypot(s1);
    let p2 = c2.hypot(s2);
    let phi1 = wrap_two_pi((-s1).atan2(c1));
    let phi2 = wrap_two_pi((-s2).atan2(c2));

    let mut ss = 0.0;
    for p in points {
        let r = row(p.theta0);
        let fit: f64 = r.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
        ss += (p.delta_f - fit).powi(2);
    }
    let residual_rms = (ss / n as f64).sqrt();

    let mut warnings = Vec::new();
    let mut sig: Vec<f64> = points.iter().map(|p| p.sigma_f).collect();
    sig.sort_by(|a, b| a.total_cmp(b));
    let med = sig[n / 2];
    if med > 0.0 && residual_rms > 3.0 * med {
        warnings.push(format!(
            "residual rms {residual_rms:.3e} Hz exceeds 3x the median point spread {med:.3e} Hz; the two-harmonic model does not describe the sweep"
        ));
    }

    let f00 = params.natural_frequency();
    let b_est = 2.0 * params.k_m * p1 / (f00 * params.moment);
    let lm = params.lever * params.moment;
    let g_est = if lm > 0.0 { 2.0 * params.k_m * p2 / (f00 * lm) } else { f64::NAN };
    if lm == 0.0 {
        warnings.push("lever arm is zero; no gradient estimate".into());
    }

    Ok(SweepDecomposition {
        p1,
        phi1,
        p2,
        phi2,
        offset,
        b_est,
        b_angle: wrap_two_pi(-phi1),
        g_est,
        g_angle: wrap_two_pi(-phi2 / 2.0) % PI,
        residual_rms,
        warnings,
    })
}

pub fn write_sweep_csv<W: Write>(points: &[SweepPoint], mut w: W) -> std::io::Result<()> {
    writeln!(w, "theta0_deg,delta_f_hz,sigma_f_hz")?;
    for p in points {
        writeln!(w, "{},{},{}", p.theta0.to_degrees(), p.delta_f, p.sigma_f)?;
    }
    Ok(())
}

pub fn read_sweep_csv<R: BufRead>(reader: R, path: &str) -> Result<Vec<SweepPoint>> {
    Ok(read_table::<_, 3>(reader, "theta0_deg,delta_f_hz,sigma_f_hz", path)?
        .into_iter()
        .map(|[deg, delta_f, sigma_f]| SweepPoint {
            theta0: deg.to_radians(),
            delta_f,
            sigma_f,
        })
        .collect())
}

/// Calibration measurement: mean shift and spread at one applied field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub field: f64,
    pub delta_f: f64,
    pub sigma_f: f64,
}

pub fn write_calibration_csv<W: Write>(points: &[CalibrationPoint], mut w: W) -> std::io::Result<()> {
    writeln!(w, "field_tesla,delta_f_hz,sigma_f_hz")?;
    for p in points {
        writeln!(w, "{},{},{}", p.field, p.delta_f, p.sigma_f)?;
    }
    Ok(())
}

pub fn read_calibration_csv<R: BufRead>(reader: R, path: &str) -> Result<Vec<CalibrationPoint>> {
    Ok(read_table::<_, 3>(reader, "field_tesla,delta_f_hz,sigma_f_hz", path)?
        .into_iter()
        .map(|[field, delta_f, sigma_f]| CalibrationPoint {
            field,
            delta_f,
            sigma_f,
        })
        .collect())
}

/// Known quantities for calibration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationKnowns {
    pub moment: f64,
    /// Field-free resonance, Hz.
    pub f00: f64,
    /// Mass of the moving part, kg; sets the lever arm `l = √(J/a)`.
    pub mass: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Calibration {
    /// Hz/T.
    pub beta: f64,
    /// Δf at B = 0 from the regression, Hz.
    pub intercept: f64,
    pub k_m: f64,
    pub inertia: f64,
    pub lever: f64,
}

impl Calibration {
    pub fn report(&self) -> String {
        format!(
            "beta_hz_per_tesla={}\nintercept_hz={}\nk_m_newton_meter={}\ninertia_kg_m2={}\nlever_meter={}\n",
            self.beta, self.intercept, self.k_m, self.inertia, self.lever
        )
    }
}

/// Device properties from `(B, Δf)` pairs measured along the moment.
///
/// β is the least-squares slope (with intercept) of Δf against B; use weak
/// fields so the shift is linear.
pub fn calibrate(points: &[(f64, f64)], known: CalibrationKnowns) -> Result<Calibration> {
    let mut fields: Vec<f64> = points.iter().map(|p| p.0).collect();
    fields.sort_by(|a, b| a.total_cmp(b));
    fields.dedup();
    if fields.len() < 2 {
        return Err(Error::RankDeficient(format!(
            "{} distinct field values, at least 2 are needed",
            fields.len()
        )));
    }
    if !(known.moment > 0.0 && known.f00 > 0.0 && known.mass > 0.0) {
        return Err(Error::invalid("known", "moment, f00 and mass must be > 0"));
    }
    let n = points.len() as f64;
    let mb = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mf = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mb) * (p.1 - mf)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mb).powi(2)).sum();
    let beta = sxy / sxx;
    if !(beta > 0.0) {
        return Err(Error::Domain {
            op: "calibrate",
            reason: format!("fitted sensitivity {beta} Hz/T is not positive"),
        });
    }
    let inertia = inertia_from_sensitivity(beta, known.f00, known.moment);
    Ok(Calibration {
        beta,
        intercept: mf - beta * mb,
        k_m: spring_from_sensitivity(beta, known.f00, known.moment),
        inertia,
        lever: (inertia / known.mass).sqrt(),
    })
}
