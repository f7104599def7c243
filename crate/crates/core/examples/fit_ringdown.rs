//! Synthesize a noisy differential record and recover its parameters.
//!
//! cargo run --release --example fit_ringdown

use mows_lab::fitting::{fit_ringdown, initial_guess, FitOptions, Param};
use mows_lab::model::{DeviceParams, NoiseSpec};
use mows_lab::signal::{synthesize, MagnetometerConfig, RingdownParams};

fn main() -> mows_lab::error::Result<()> {
    let dev = DeviceParams::paper_device();
    let cfg = MagnetometerConfig::paper_setup();
    let truth = RingdownParams {
        theta_t_max: dev.theta_max,
        frequency: 112.5,
        phase: 0.4,
        damping: dev.damping,
        dc_offset: 5e-9,
    };
    let noise = NoiseSpec {
        independent_std: 3e-9,
        common_mode_std: 2e-8,
    };
    let theta0 = 30f64.to_radians();
    let rec = synthesize(&dev, &cfg, theta0, &truth, 60.0 / truth.frequency, &noise, 42)?;
    println!("{} samples, kappa = {:.4e} T", rec.len(), cfg.kappa(dev.moment));

    let g = initial_guess(&rec)?;
    println!("guess: f = {:.4} Hz, delta = {:.3} 1/s, theta0 = {:.1} deg", g.frequency, g.damping, g.theta0.to_degrees());

    let fit = fit_ringdown(&rec, &FitOptions::default())?;
    println!("\n{}", fit.report());
    println!(
        "f error {:+.3} mHz (1 sigma {:.3} mHz)",
        (fit.params.frequency - truth.frequency) * 1e3,
        fit.std_error(Param::Frequency) * 1e3
    );
    Ok(())
}
