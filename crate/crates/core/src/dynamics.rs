//! Time-domain simulation of the cantilever magnet.
//!
//! The equation of motion is `J·θ̈ = τ(θ) − 2Jδ·θ̇` with the full trigonometric
//! magnetic torques, integrated by fixed-step RK4. It serves as a brute-force
//! oracle for the closed forms in [`crate::model`], which are only valid for
//! small deflections.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DeviceParams, MagneticEnvironment};

/// Fewest full periods accepted by [`measure_frequency`].
pub const MIN_PERIODS: usize = 10;

/// `θ_max·cos(2πft + φ)·e^{−δt}`.
pub fn analytic_deflection(t: f64, theta_t_max: f64, f: f64, phi: f64, delta: f64) -> f64 {
    theta_t_max * (2.0 * PI * f * t + phi).cos() * (-delta * t).exp()
}

/// Envelope at the centre of an evaluation window of `periods` periods
/// starting at the housing limit. This is the representative amplitude of
/// the window (14.85° for 24°, δ = 1.8 1/s, 60 periods at 112.5 Hz).
pub fn window_center_amplitude(theta_t_max: f64, f: f64, delta: f64, periods: f64) -> f64 {
    theta_t_max * (-delta * periods / (2.0 * f)).exp()
}

/// Time-averaged `|θ|` of the analytic ringdown over `periods` periods.
pub fn window_mean_abs_deflection(theta_t_max: f64, f: f64, delta: f64, periods: f64) -> f64 {
    let span = periods / f;
    let envelope_mean = if delta == 0.0 {
        1.0
    } else {
        (1.0 - (-delta * span).exp()) / (delta * span)
    };
    theta_t_max * envelope_mean * 2.0 / PI
}

/// Per-coil current multipliers used to keep the drive field perpendicular to
/// the rest moment at any rotation `θ₀`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoilSetup {
    /// Coils at 45° to the probe line: multipliers `sin(θ₀+135°)`, `sin(θ₀+45°)`.
    LargestSpacing,
    /// Coils on −y and −x: multipliers `sin(θ₀+90°)`, `sin(θ₀)`.
    Helmholtz,
}

impl CoilSetup {
    pub fn multipliers(self, theta0: f64) -> [f64; 2] {
        match self {
            CoilSetup::LargestSpacing => [
                (theta0 + 135f64.to_radians()).sin(),
                (theta0 + 45f64.to_radians()).sin(),
            ],
            CoilSetup::Helmholtz => [(theta0 + PI / 2.0).sin(), theta0.sin()],
        }
    }

    /// Field directions at the probe for which the multipliers yield a field
    /// perpendicular to the rest moment.
    pub fn coil_angles(self) -> [f64; 2] {
        match self {
            CoilSetup::LargestSpacing => [45f64.to_radians(), 135f64.to_radians()],
            CoilSetup::Helmholtz => [PI / 2.0, PI],
        }
    }
}

/// Two-coil sinusoidal excitation that switches off after `duration`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveSpec {
    pub setup: CoilSetup,
    /// Base current amplitude per coil, A.
    pub coil_amplitudes: [f64; 2],
    /// Direction of each coil's field at the probe, rad.
    pub coil_angles: [f64; 2],
    pub drive_frequency: f64,
    /// Field at the probe per ampere of coil current, T/A.
    pub field_per_ampere: f64,
    pub duration: f64,
}

impl DriveSpec {
    pub fn new(setup: CoilSetup, current: f64, field_per_ampere: f64, drive_frequency: f64, duration: f64) -> Self {
        DriveSpec {
            setup,
            coil_amplitudes: [current; 2],
            coil_angles: setup.coil_angles(),
            drive_frequency,
            field_per_ampere,
            duration,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration >= 0.0) {
            return Err(Error::invalid("drive.duration", "must be >= 0"));
        }
        if !(self.field_per_ampere >= 0.0) {
            return Err(Error::invalid("drive.field_per_ampere", "must be >= 0"));
        }
        Ok(())
    }

    /// Drive field `(B_x, B_y)` in the global frame at time `t`.
    pub fn field_at(&self, t: f64, theta0: f64) -> (f64, f64) {
        if t >= self.duration {
            return (0.0, 0.0);
        }
        let carrier = (2.0 * PI * self.drive_frequency * t).sin() * self.field_per_ampere;
        let mult = self.setup.multipliers(theta0);
        let mut b = (0.0, 0.0);
        for ((a, m), ang) in self.coil_amplitudes.iter().zip(mult).zip(self.coil_angles) {
            let amp = a * m * carrier;
            b.0 += amp * ang.cos();
            b.1 += amp * ang.sin();
        }
        b
    }
}

/// Torque about the cantilever axis at deflection `theta`, N·m.
///
/// `drive_field` is an extra in-plane field in the global frame. Uses exact
/// trigonometry: `−k_M·θ + m·(B_y'·cos θ − B_x'·sin θ) − l·m·G·sin θ·cos θ`,
/// with the fields resolved in the frame of the rest moment at `theta0`.
pub fn net_torque(
    theta: f64,
    params: &DeviceParams,
    env: &MagneticEnvironment,
    theta0: f64,
    drive_field: (f64, f64),
) -> f64 {
    let (mut bx, mut by) = env.field_intrinsic(theta0);
    let (c0, s0) = (theta0.cos(), theta0.sin());
    bx += drive_field.0 * c0 + drive_field.1 * s0;
    by += -drive_field.0 * s0 + drive_field.1 * c0;
    let g = env.gradient_intrinsic(theta0);
    let (s, c) = theta.sin_cos();
    -params.k_m * theta + params.moment * (by * c - bx * s) - params.lever * params.moment * g * s * c
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub theta: Vec<f64>,
    pub theta_dot: Vec<f64>,
    pub dt: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Samples from index `start` on, with time rebased to zero.
    pub fn tail(&self, start: usize) -> Trajectory {
        let t0 = self.t.get(start).copied().unwrap_or(0.0);
        Trajectory {
            t: self.t[start..].iter().map(|t| t - t0).collect(),
            theta: self.theta[start..].to_vec(),
            theta_dot: self.theta_dot[start..].to_vec(),
            dt: self.dt,
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,theta,theta_dot")?;
        for i in 0..self.len() {
            writeln!(w, "{},{},{}", self.t[i], self.theta[i], self.theta_dot[i])?;
        }
        Ok(())
    }

    /// Reads the layout written by [`Trajectory::write_csv`]; `dt` is taken
    /// from the first two samples.
    pub fn read_csv<R: BufRead>(reader: R, path: &str) -> Result<Trajectory> {
        let rows = crate::signal::read_table::<_, 3>(reader, "t,theta,theta_dot", path)?;
        let dt = if rows.len() >= 2 { rows[1][0] - rows[0][0] } else { 0.0 };
        Ok(Trajectory {
            t: rows.iter().map(|r| r[0]).collect(),
            theta: rows.iter().map(|r| r[1]).collect(),
            theta_dot: rows.iter().map(|r| r[2]).collect(),
            dt,
        })
    }
}

/// Settings for one [`simulate`] run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    /// Rest orientation of the moment in the global frame, rad.
    pub theta0: f64,
    pub drive: Option<DriveSpec>,
    /// Initial deflection, released from rest.
    pub theta_init: f64,
    pub duration: f64,
    pub dt: f64,
    /// Apply the housing stop at `±theta_max`.
    pub clamp: bool,
    /// |θ̇| above which the run is declared divergent, rad/s.
    pub max_rate: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            theta0: 0.0,
            drive: None,
            theta_init: 1f64.to_radians(),
            duration: 0.6,
            dt: 5e-5,
            clamp: true,
            max_rate: 1e5,
        }
    }
}

/// Integrates the equation of motion with classical RK4.
pub fn simulate(params: &DeviceParams, env: &MagneticEnvironment, cfg: &SimConfig) -> Result<Trajectory> {
    params.validate()?;
    if let Some(d) = &cfg.drive {
        d.validate()?;
    }
    if !(cfg.duration > 0.0) {
        return Err(Error::invalid("duration", "must be > 0"));
    }
    let springs = env.springs(params, cfg.theta0);
    let k_ref = params.k_m.max(springs.k_total);
    let f_ref = (k_ref / params.inertia).sqrt() / (2.0 * PI);
    let max_dt = 1.0 / (50.0 * f_ref);
    if !(cfg.dt > 0.0 && cfg.dt <= max_dt) {
        return Err(Error::Resolution { dt: cfg.dt, max_dt });
    }

    let j = params.inertia;
    let damp = 2.0 * params.damping;
    let accel = |t: f64, th: f64, om: f64| -> f64 {
        let drive = cfg.drive.map_or((0.0, 0.0), |d| d.field_at(t, cfg.theta0));
        net_torque(th, params, env, cfg.theta0, drive) / j - damp * om
    };

    let steps = (cfg.duration / cfg.dt).round() as usize;
    let mut out = Trajectory {
        t: Vec::with_capacity(steps + 1),
        theta: Vec::with_capacity(steps + 1),
        theta_dot: Vec::with_capacity(steps + 1),
        dt: cfg.dt,
    };
    let limit = params.theta_max;
    let h = cfg.dt;
    let mut th = cfg.theta_init;
    if cfg.clamp {
        th = th.clamp(-limit, limit);
    }
    let mut om = 0.0;
    for i in 0..=steps {
        let t = i as f64 * h;
        out.t.push(t);
        out.theta.push(th);
        out.theta_dot.push(om);
        if i == steps {
            break;
        }
        let k1t = om;
        let k1o = accel(t, th, om);
        let k2t = om + 0.5 * h * k1o;
        let k2o = accel(t + 0.5 * h, th + 0.5 * h * k1t, k2t);
        let k3t = om + 0.5 * h * k2o;
        let k3o = accel(t + 0.5 * h, th + 0.5 * h * k2t, k3t);
        let k4t = om + h * k3o;
        let k4o = accel(t + h, th + h * k3t, k4t);
        th += h / 6.0 * (k1t + 2.0 * k2t + 2.0 * k3t + k4t);
        om += h / 6.0 * (k1o + 2.0 * k2o + 2.0 * k3o + k4o);
        if cfg.clamp && th.abs() > limit {
            // inelastic contact with the housing
            th = limit.copysign(th);
            om = 0.0;
        }
        if !(om.abs() <= cfg.max_rate) {
            return Err(Error::Divergence { t: t + h, rate: om.abs() });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencyEstimate {
    /// Hz.
    pub frequency: f64,
    /// Envelope decay rate, 1/s.
    pub damping: f64,
    /// Full periods used.
    pub periods: usize,
}

/// Frequency and damping of a ringdown trajectory.
pub fn measure_frequency(traj: &Trajectory) -> Result<FrequencyEstimate> {
    measure_frequency_samples(traj.dt, &traj.theta)
}

/// Frequency from a linear fit of zero-crossing times against their index; damping from a linear fit of log peak heights against time.
pub fn measure_frequency_samples(dt: f64, y: &[f64]) -> Result<FrequencyEstimate> {
    let mean = y.iter().sum::<f64>() / y.len().max(1) as f64;
    let first = crossings(dt, y, mean);
    // re-centre on a whole number of periods so the decay does not bias the level
    let level = match (first.first(), first.last()) {
        (Some(&a), Some(&b)) if first.len() >= 2 => {
            let (ia, ib) = ((a / dt).ceil() as usize, (b / dt).floor() as usize);
            if ib > ia {
                y[ia..=ib].iter().sum::<f64>() / (ib - ia + 1) as f64
            } else {
                mean
            }
        }
        _ => mean,
    };
    // both edges: a level error shifts rising and falling crossings in
    // opposite directions, so it cancels in the slope to first order
    let times = crossings(dt, y, level);
    let periods = times.len().saturating_sub(1) / 2;
    if periods < MIN_PERIODS {
        return Err(Error::InsufficientPeriods {
            found: periods,
            needed: MIN_PERIODS,
        });
    }
    let idx: Vec<f64> = (0..times.len()).map(|i| 0.5 * i as f64).collect();
    let (period, _) = linear_fit(&idx, &times);

    let mut peak_t = Vec::new();
    let mut peak_ln = Vec::new();
    for i in 1..y.len() - 1 {
        let (a, b, c) = (y[i - 1] - level, y[i] - level, y[i + 1] - level);
        if b > 0.0 && b >= a && b > c {
            let denom = a - 2.0 * b + c;
            let off = if denom != 0.0 { 0.5 * (a - c) / denom } else { 0.0 };
            let height = b - 0.25 * (a - c) * off;
            if height > 0.0 {
                peak_t.push((i as f64 + off) * dt);
                peak_ln.push(height.ln());
            }
        }
    }
    let damping = if peak_t.len() >= 2 {
        -linear_fit(&peak_t, &peak_ln).0
    } else {
        0.0
    };
    Ok(FrequencyEstimate {
        frequency: 1.0 / period,
        damping,
        periods,
    })
}

/// Sub-sample times where `y` crosses `level`, in either direction.
fn crossings(dt: f64, y: &[f64], level: f64) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 1..y.len() {
        let (a, b) = (y[i - 1] - level, y[i] - level);
        if (a < 0.0 && b >= 0.0) || (a >= 0.0 && b < 0.0) {
            let frac = a / (a - b);
            out.push((i as f64 - 1.0 + frac) * dt);
        }
    }
    out
}

/// Ordinary least squares `y = slope·x + intercept`.
pub(crate) fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
    }
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}
