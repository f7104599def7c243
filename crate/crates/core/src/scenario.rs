//! Scenario files: JSON with explicit units in every field name.
//!
//! Angles are degrees in the file and radians everywhere else; the
//! conversion happens here and nowhere else.
//!
//! ```json
//! {
//!   "device": {
//!     "moment_ampere_m2": 8.9e-4,
//!     "k_m_newton_meter": 1.36e-5,
//!     "inertia_kg_m2": 2.72e-11,
//!     "mass_kg": 7.2e-6,
//!     "damping_per_second": 1.8,
//!     "theta_max_degrees": 24.0
//!   },
//!   "magnetometers": {
//!     "distance_meter": 0.06,
//!     "spacing_meter": 0.03,
//!     "axis": [0.0, 1.0, 0.0],
//!     "range_tesla": 1e-5
//!   },
//!   "acquisition": {
//!     "duration_seconds": 0.5333,
//!     "sample_rate_hz": 20000.0,
//!     "n_repeats": 5,
//!     "seed": 7,
//!     "theta0_degrees": 0.0
//!   }
//! }
//! ```
//!
//! Optional sections: `environment` (field, gradient, DC offset, noise),
//! `sweep` (θ₀ grid), `calibration` (applied fields) and `modes`.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DeviceParams, MagneticEnvironment, NoiseSpec};
use crate::signal::{AmplitudeMode, MagnetometerConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSection {
    /// Either the moment or remanence + volume must be given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moment_ampere_m2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remanence_tesla: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub volume_m3: Option<f64>,
    pub k_m_newton_meter: f64,
    pub inertia_kg_m2: f64,
    pub mass_kg: f64,
    /// Defaults to `√(J/a)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lever_meter: Option<f64>,
    pub damping_per_second: f64,
    pub theta_max_degrees: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    #[serde(default)]
    pub independent_std_tesla: f64,
    #[serde(default)]
    pub common_mode_std_tesla: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentSection {
    #[serde(default)]
    pub field_tesla: f64,
    #[serde(default)]
    pub field_angle_degrees: f64,
    #[serde(default)]
    pub gradient_tesla_per_meter: f64,
    #[serde(default)]
    pub gradient_angle_degrees: f64,
    #[serde(default)]
    pub dc_offset_tesla: f64,
    #[serde(default)]
    pub noise: NoiseSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MagnetometerSection {
    pub distance_meter: f64,
    pub spacing_meter: f64,
    pub axis: [f64; 3],
    pub range_tesla: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcquisitionSection {
    pub duration_seconds: f64,
    pub sample_rate_hz: f64,
    pub n_repeats: usize,
    pub seed: u64,
    #[serde(default)]
    pub theta0_degrees: f64,
    /// Phase of the ringdown at the first sample.
    #[serde(default)]
    pub phase_degrees: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub start_degrees: f64,
    pub stop_degrees: f64,
    pub step_degrees: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSection {
    /// Fields applied along the rest moment. B = 0 is always measured too.
    pub fields_tesla: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModesSection {
    /// First-order shift law instead of the square-root law.
    #[serde(default)]
    pub linear: bool,
    #[serde(default = "default_amplitude")]
    pub amplitude: AmplitudeMode,
    /// Fit κ instead of fixing it to the geometric value.
    #[serde(default)]
    pub fit_kappa: bool,
    /// Constant offset term in the sweep decomposition.
    #[serde(default)]
    pub sweep_offset: bool,
}

fn default_amplitude() -> AmplitudeMode {
    AmplitudeMode::Exact
}

impl Default for ModesSection {
    fn default() -> Self {
        ModesSection {
            linear: false,
            amplitude: AmplitudeMode::Exact,
            fit_kappa: false,
            sweep_offset: false,
        }
    }
}

/// The file as written.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub device: DeviceSection,
    #[serde(default)]
    pub environment: EnvironmentSection,
    pub magnetometers: MagnetometerSection,
    pub acquisition: AcquisitionSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<CalibrationSection>,
    #[serde(default)]
    pub modes: ModesSection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Acquisition {
    pub duration: f64,
    pub n_repeats: usize,
    pub seed: u64,
    pub theta0: f64,
    pub phase: f64,
}

/// Validated scenario in SI units and radians.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub device: DeviceParams,
    pub environment: MagneticEnvironment,
    pub magnetometers: MagnetometerConfig,
    pub acquisition: Acquisition,
    pub sweep: Option<Vec<f64>>,
    pub calibration: Option<Vec<f64>>,
    pub modes: ModesSection,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Scenario::parse(&text, &path.display().to_string())
    }

    /// Parses and validates. Errors name the offending field and its position.
    pub fn parse(text: &str, origin: &str) -> Result<Scenario> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let file: ScenarioFile = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            Error::Config(format!(
                "{origin}:{}:{}: field `{path}`: {inner}",
                inner.line(),
                inner.column()
            ))
        })?;
        file.resolve()
            .map_err(|e| Error::Config(format!("{origin}: {e}")))
    }
}

fn field_err(field: &str, reason: impl std::fmt::Display) -> Error {
    Error::Config(format!("field `{field}`: {reason}"))
}

impl ScenarioFile {
    pub fn resolve(&self) -> Result<Scenario> {
        let d = &self.device;
        let moment = match (d.moment_ampere_m2, d.remanence_tesla, d.volume_m3) {
            (Some(m), _, _) => m,
            (None, Some(br), Some(v)) => DeviceParams::moment_from_remanence(br, v),
            _ => {
                return Err(field_err(
                    "device.moment_ampere_m2",
                    "give the moment, or remanence_tesla and volume_m3",
                ))
            }
        };
        let lever = d
            .lever_meter
            .unwrap_or_else(|| (d.inertia_kg_m2 / d.mass_kg).sqrt());
        let device = DeviceParams {
            moment,
            remanence: d.remanence_tesla,
            volume: d.volume_m3,
            k_m: d.k_m_newton_meter,
            inertia: d.inertia_kg_m2,
            mass: d.mass_kg,
            lever,
            damping: d.damping_per_second,
            theta_max: d.theta_max_degrees.to_radians(),
        };
        device.validate().map_err(|e| field_err("device", e))?;

        let e = &self.environment;
        let environment = MagneticEnvironment {
            field: e.field_tesla,
            field_angle: e.field_angle_degrees.to_radians(),
            gradient: e.gradient_tesla_per_meter,
            gradient_angle: e.gradient_angle_degrees.to_radians(),
            dc_offset: e.dc_offset_tesla,
            noise: NoiseSpec {
                independent_std: e.noise.independent_std_tesla,
                common_mode_std: e.noise.common_mode_std_tesla,
            },
        };
        environment.validate().map_err(|err| field_err("environment", err))?;

        let m = &self.magnetometers;
        let a = &self.acquisition;
        let magnetometers = MagnetometerConfig {
            distance: m.distance_meter,
            spacing: m.spacing_meter,
            axis: m.axis,
            range: m.range_tesla,
            sample_rate: a.sample_rate_hz,
        };
        magnetometers.validate().map_err(|err| field_err("magnetometers", err))?;

        if !(a.duration_seconds > 0.0 && a.duration_seconds.is_finite()) {
            return Err(field_err("acquisition.duration_seconds", "must be > 0"));
        }
        if a.n_repeats < 1 {
            return Err(field_err("acquisition.n_repeats", "must be >= 1"));
        }
        let acquisition = Acquisition {
            duration: a.duration_seconds,
            n_repeats: a.n_repeats,
            seed: a.seed,
            theta0: a.theta0_degrees.to_radians(),
            phase: a.phase_degrees.to_radians(),
        };

        let sweep = match &self.sweep {
            None => None,
            Some(s) => Some(sweep_grid(s)?),
        };
        let calibration = match &self.calibration {
            None => None,
            Some(c) => {
                if c.fields_tesla.iter().any(|b| !b.is_finite()) {
                    return Err(field_err("calibration.fields_tesla", "values must be finite"));
                }
                Some(c.fields_tesla.clone())
            }
        };

        Ok(Scenario {
            device,
            environment,
            magnetometers,
            acquisition,
            sweep,
            calibration,
            modes: self.modes.clone(),
        })
    }
}

/// Inclusive grid `start, start+step, …, stop`, in radians.
fn sweep_grid(s: &SweepSection) -> Result<Vec<f64>> {
    if !(s.step_degrees > 0.0) {
        return Err(field_err("sweep.step_degrees", "must be > 0"));
    }
    let span = s.stop_degrees - s.start_degrees;
    if !(span >= 0.0) {
        return Err(field_err("sweep.stop_degrees", "must be >= start_degrees"));
    }
    let k = span / s.step_degrees;
    if (k - k.round()).abs() > 1e-9 * k.max(1.0) {
        return Err(field_err(
            "sweep.step_degrees",
            format!("{} does not divide the span {span}", s.step_degrees),
        ));
    }
    let n = k.round() as usize + 1;
    Ok((0..n)
        .map(|i| (s.start_degrees + i as f64 * s.step_degrees) * PI / 180.0)
        .collect())
}
