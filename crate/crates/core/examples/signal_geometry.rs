//! Differential magnetometer geometry and how the signal amplitude depends
//! on the sensor orientation.
//!
//! cargo run --example signal_geometry

use mows_lab::model::DeviceParams;
use mows_lab::signal::{first_harmonic_amplitude, AmplitudeMode, MagnetometerConfig};

fn main() {
    let dev = DeviceParams::paper_device();
    let cfg = MagnetometerConfig::paper_setup();
    println!("r_eff = {:.3} cm, kappa = {:.3e} T", cfg.effective_distance() * 100.0, cfg.kappa(dev.moment));

    let tm = 15f64.to_radians();
    println!("\n{:>6} {:>10} {:>10}", "theta0", "exact", "approx");
    for deg in [0.0f64, 15.0, 30.0, 45.0, 60.0, 75.0, 90.0] {
        let th = deg.to_radians();
        println!(
            "{deg:>6.0} {:>10.5} {:>10.5}",
            first_harmonic_amplitude(th, tm, AmplitudeMode::Exact),
            first_harmonic_amplitude(th, tm, AmplitudeMode::PaperApprox)
        );
    }
    for mode in [AmplitudeMode::Exact, AmplitudeMode::PaperApprox] {
        let r = first_harmonic_amplitude(0.0, tm, mode) / first_harmonic_amplitude(std::f64::consts::FRAC_PI_2, tm, mode);
        println!("{mode:?}: 0 deg / 90 deg = {r:.2}");
    }
}
