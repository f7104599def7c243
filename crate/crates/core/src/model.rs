//! Closed-form physics of the torsional magneto-oscillator.
//!
//! The device is a permanent magnet with moment `m` on a cantilever of length
//! `l`. Its mechanical spring `k_M` acts in parallel with two virtual springs:
//! one from the in-plane field along the rest moment (`k_B = m·B·cos θ`) and one
//! from a homogeneous gradient acting through the lever (`k_G = l·m·G·cos 2θ`).
//! The resonance frequency follows from the total stiffness and the moment of
//! inertia `J`.
//!
//! Out-of-plane field components are ignored for the dynamics: the cantilever
//! cross-section makes out-of-plane rotations negligible. They still enter the
//! magnetometer signal, which is handled in [`crate::signal`].

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::angle::wrap_two_pi;
use crate::error::{Error, Result};

/// Vacuum permeability, exactly 4π·10⁻⁷ T·m/A.
pub const MU_0: f64 = 4.0e-7 * PI;

/// Physical identity of one sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceParams {
    /// Magnetic moment magnitude, A·m².
    pub moment: f64,
    /// Remanence of the magnet, T.
    pub remanence: Option<f64>,
    /// Magnet volume, m³.
    pub volume: Option<f64>,
    /// Mechanical torsional spring constant, N·m/rad.
    pub k_m: f64,
    /// Moment of inertia of the oscillating magnet, kg·m².
    pub inertia: f64,
    /// Magnet mass, kg.
    pub mass: f64,
    /// Lever (cantilever) length, m.
    pub lever: f64,
    /// Damping coefficient δ, 1/s.
    pub damping: f64,
    /// Housing deflection limit, rad.
    pub theta_max: f64,
}

impl DeviceParams {
    /// The published sensor: 0.89 mA·m² magnet, k_M = 1.36e-5 N·m,
    /// J = 2.72e-11 kg·m², 7.2 mg magnet, δ = 1.8 1/s, 24° housing limit.
    /// The lever is derived from `l = √(J/a)`.
    pub fn paper_device() -> Self {
        let inertia = 2.72e-11;
        let mass = 7.2e-6;
        DeviceParams {
            moment: 8.9e-4,
            remanence: None,
            volume: None,
            k_m: 1.36e-5,
            inertia,
            mass,
            lever: (inertia / mass).sqrt(),
            damping: 1.8,
            theta_max: 24f64.to_radians(),
        }
    }

    /// Moment of a uniformly magnetized magnet, `B_r·V/μ₀`.
    pub fn moment_from_remanence(remanence: f64, volume: f64) -> f64 {
        remanence * volume / MU_0
    }

    pub fn validate(&self) -> Result<()> {
        positive("moment", self.moment)?;
        positive("k_m", self.k_m)?;
        positive("inertia", self.inertia)?;
        positive("mass", self.mass)?;
        if !(self.lever >= 0.0 && self.lever.is_finite()) {
            return Err(Error::invalid("lever", format!("must be >= 0, got {}", self.lever)));
        }
        if !(self.damping >= 0.0 && self.damping.is_finite()) {
            return Err(Error::invalid("damping", format!("must be >= 0, got {}", self.damping)));
        }
        if !(self.theta_max > 0.0 && self.theta_max < PI / 2.0) {
            return Err(Error::invalid(
                "theta_max",
                format!("must lie in (0, π/2), got {}", self.theta_max),
            ));
        }
        if let (Some(br), Some(v)) = (self.remanence, self.volume) {
            let m = Self::moment_from_remanence(br, v);
            if (self.moment - m).abs() / self.moment > 1e-9 {
                return Err(Error::invalid(
                    "moment",
                    format!("{} disagrees with B_r·V/μ₀ = {}", self.moment, m),
                ));
            }
        }
        if self.lever > 0.0 {
            let j = self.mass * self.lever * self.lever;
            if (self.inertia - j).abs() / self.inertia > 1e-6 {
                return Err(Error::invalid(
                    "inertia",
                    format!("{:e} disagrees with a·l² = {:e}", self.inertia, j),
                ));
            }
        }
        if self.k_m / self.inertia <= self.damping * self.damping {
            return Err(Error::invalid("damping", "system is not underdamped (k_M/J <= δ²)"));
        }
        Ok(())
    }

    /// Field-free resonance frequency f₀₀, Hz.
    pub fn natural_frequency(&self) -> f64 {
        // validate() guarantees the radicand is positive
        (self.k_m / self.inertia - self.damping * self.damping).sqrt() / (2.0 * PI)
    }

    /// Field at which the virtual spring cancels the mechanical one, `-k_M/m`.
    pub fn cancellation_field(&self) -> f64 {
        -self.k_m / self.moment
    }
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("must be > 0, got {v}")))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// White Gaussian noise, independent per sensor, T.
    pub independent_std: f64,
    /// White Gaussian noise seen identically by both sensors, T.
    pub common_mode_std: f64,
}

/// Field and gradient at the probe location, in the global frame.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MagneticEnvironment {
    /// In-plane field magnitude, T.
    pub field: f64,
    /// In-plane field orientation, rad.
    pub field_angle: f64,
    /// Homogeneous gradient magnitude ∂B_u/∂u, T/m.
    pub gradient: f64,
    /// Orientation of the gradient axis u, rad.
    pub gradient_angle: f64,
    /// Constant magnetometer offset, T.
    pub dc_offset: f64,
    pub noise: NoiseSpec,
}

impl MagneticEnvironment {
    pub fn uniform_field(field: f64, field_angle: f64) -> Self {
        MagneticEnvironment {
            field,
            field_angle,
            ..Default::default()
        }
        .normalized()
    }

    pub fn uniform_gradient(gradient: f64, gradient_angle: f64) -> Self {
        MagneticEnvironment {
            gradient,
            gradient_angle,
            ..Default::default()
        }
        .normalized()
    }

    /// Folds negative magnitudes into the orientation and wraps angles to `[0, 2π)`.
    pub fn normalized(mut self) -> Self {
        if self.field < 0.0 {
            self.field = -self.field;
            self.field_angle += PI;
        }
        if self.gradient < 0.0 {
            // cos 2θ changes sign under a quarter turn
            self.gradient = -self.gradient;
            self.gradient_angle += PI / 2.0;
        }
        self.field_angle = wrap_two_pi(self.field_angle);
        self.gradient_angle = wrap_two_pi(self.gradient_angle);
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("field", self.field),
            ("gradient", self.gradient),
            ("noise.independent_std", self.noise.independent_std),
            ("noise.common_mode_std", self.noise.common_mode_std),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, format!("must be >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Field components `(B_x', B_y')` in the frame of a sensor whose rest
    /// moment points along `theta0`.
    pub fn field_intrinsic(&self, theta0: f64) -> (f64, f64) {
        let rel = self.field_angle - theta0;
        (self.field * rel.cos(), self.field * rel.sin())
    }

    /// Effective gradient along the rest moment at orientation `theta0`.
    pub fn gradient_intrinsic(&self, theta0: f64) -> f64 {
        self.gradient * (2.0 * (theta0 - self.gradient_angle)).cos()
    }

    /// Virtual springs at rest orientation `theta0` (small-angle form).
    pub fn springs(&self, params: &DeviceParams, theta0: f64) -> SpringDecomposition {
        let (bx, _) = self.field_intrinsic(theta0);
        let g = self.gradient_intrinsic(theta0);
        SpringDecomposition::new(
            params.k_m,
            field_spring_constant(params, bx, 0.0, true),
            gradient_spring_constant(params, g, 0.0, true),
        )
    }
}

/// Mechanical, field and gradient springs acting in parallel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpringDecomposition {
    pub k_m: f64,
    pub k_b: f64,
    pub k_g: f64,
    pub k_total: f64,
}

impl SpringDecomposition {
    pub fn new(k_m: f64, k_b: f64, k_g: f64) -> Self {
        SpringDecomposition {
            k_m,
            k_b,
            k_g,
            k_total: k_m + k_b + k_g,
        }
    }
}

/// Virtual field spring `m·B_x·cos θ`; `small_angle` drops the cosine.
pub fn field_spring_constant(params: &DeviceParams, b_x: f64, theta: f64, small_angle: bool) -> f64 {
    if small_angle {
        params.moment * b_x
    } else {
        params.moment * b_x * theta.cos()
    }
}

/// Virtual gradient spring `l·m·G_x·cos 2θ`. Zero without a lever arm.
pub fn gradient_spring_constant(
    params: &DeviceParams,
    g_x: f64,
    theta: f64,
    small_angle: bool,
) -> f64 {
    let k = params.lever * params.moment * g_x;
    if small_angle {
        k
    } else {
        k * (2.0 * theta).cos()
    }
}

/// Damped resonance frequency `√(k/J − δ²)/2π`, Hz.
pub fn resonance_frequency(k_total: f64, inertia: f64, damping: f64) -> Result<f64> {
    if !(inertia > 0.0) {
        return Err(Error::invalid("inertia", format!("must be > 0, got {inertia}")));
    }
    let ratio = k_total / inertia;
    let d2 = damping * damping;
    if ratio <= d2 {
        return Err(Error::NonOscillatory {
            stiffness_ratio: ratio,
            damping_sq: d2,
        });
    }
    Ok((ratio - d2).sqrt() / (2.0 * PI))
}

/// `√(1+u) − 1` without cancellation for small `u`.
fn sqrt1p_m1(u: f64) -> f64 {
    u / ((1.0 + u).sqrt() + 1.0)
}

/// Frequency shift caused by the virtual springs,
/// `f₀₀·(√(1 + (k_B+k_G)/k_M) − 1)`. Damping only enters through f₀₀.
pub fn frequency_shift(params: &DeviceParams, k_b: f64, k_g: f64) -> Result<f64> {
    let u = (k_b + k_g) / params.k_m;
    if 1.0 + u <= 0.0 {
        return Err(Error::NonOscillatory {
            stiffness_ratio: (params.k_m + k_b + k_g) / params.inertia,
            damping_sq: 0.0,
        });
    }
    Ok(params.natural_frequency() * sqrt1p_m1(u))
}

/// First-order shift `f₀₀·(k_B+k_G)/(2k_M)`.
///
/// Erratum: the small-spring expansion is sometimes printed as
/// `(k_B+k_G)/(2k_M)` without the leading f₀₀. That form is a stiffness ratio,
/// not a frequency; the factor is restored here.
pub fn linear_frequency_shift(params: &DeviceParams, k_b: f64, k_g: f64) -> f64 {
    params.natural_frequency() * (k_b + k_g) / (2.0 * params.k_m)
}

/// Field sensitivity `β(B) = Δf_B/B`, Hz/T, with the `B → 0` limit
/// `f₀₀·m/(2k_M)`.
pub fn field_sensitivity(field: f64, params: &DeviceParams) -> Result<f64> {
    if field <= params.cancellation_field() {
        return Err(Error::Domain {
            op: "field_sensitivity",
            reason: format!(
                "B = {field:e} T is at or beyond spring cancellation {:e} T",
                params.cancellation_field()
            ),
        });
    }
    if field == 0.0 {
        return Ok(params.natural_frequency() * params.moment / (2.0 * params.k_m));
    }
    Ok(frequency_shift(params, params.moment * field, 0.0)? / field)
}

/// Local slope `dΔf/dB`, Hz/T. Unlike the secant [`field_sensitivity`] it
/// diverges at spring cancellation.
pub fn differential_field_sensitivity(field: f64, params: &DeviceParams) -> Result<f64> {
    let u = params.moment * field / params.k_m;
    if 1.0 + u <= 0.0 {
        return Err(Error::Domain {
            op: "differential_field_sensitivity",
            reason: format!("B = {field:e} T is at or beyond spring cancellation"),
        });
    }
    Ok(params.natural_frequency() * params.moment / (2.0 * params.k_m * (1.0 + u).sqrt()))
}

/// Small-gradient sensitivity `γ = f₀₀·l·m/(2k_M)`, Hz·m/T.
pub fn gradient_sensitivity_limit(params: &DeviceParams) -> f64 {
    params.natural_frequency() * params.lever * params.moment / (2.0 * params.k_m)
}

/// Mechanical spring from a weak-field sensitivity, `f₀₀·m/(2β)`.
pub fn spring_from_sensitivity(beta: f64, f00: f64, moment: f64) -> f64 {
    f00 * moment / (2.0 * beta)
}

/// Moment of inertia from a weak-field sensitivity, `m/(8π²·β·f₀₀)`.
pub fn inertia_from_sensitivity(beta: f64, f00: f64, moment: f64) -> f64 {
    moment / (8.0 * PI * PI * beta * f00)
}

/// Gradient from an absolute frequency measured at θ = 0,
/// `(4π²f²J − k_M)/(l·m)`. Damping is neglected.
pub fn gradient_from_frequency(f_measured: f64, params: &DeviceParams) -> Result<f64> {
    let lm = params.lever * params.moment;
    if lm == 0.0 {
        return Err(Error::Degenerate {
            op: "gradient_from_frequency",
            reason: "l·m = 0, the device has no gradient spring".into(),
        });
    }
    if !(f_measured > 0.0) {
        return Err(Error::Domain {
            op: "gradient_from_frequency",
            reason: format!("frequency must be > 0, got {f_measured}"),
        });
    }
    let omega = 2.0 * PI * f_measured;
    Ok((omega * omega * params.inertia - params.k_m) / lm)
}
