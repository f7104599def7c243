//! Identify k_M, J and the lever arm from frequency shifts at known weak
//! fields.
//!
//! cargo run --example calibrate

use mows_lab::magnetometry::{calibrate, CalibrationKnowns};
use mows_lab::model::{frequency_shift, DeviceParams};

fn main() -> mows_lab::error::Result<()> {
    let dev = DeviceParams::paper_device();
    let points: Vec<(f64, f64)> = (-5..=5)
        .map(|i| {
            let b = i as f64 * 1e-6;
            frequency_shift(&dev, dev.moment * b, 0.0).map(|df| (b, df))
        })
        .collect::<Result<_, _>>()?;
    let cal = calibrate(
        &points,
        CalibrationKnowns {
            moment: dev.moment,
            f00: dev.natural_frequency(),
            mass: dev.mass,
        },
    )?;
    println!("beta  {:.4} Hz/mT", cal.beta * 1e-3);
    println!("k_M   {:.4e} N m   (device {:.4e})", cal.k_m, dev.k_m);
    println!("J     {:.4e} kg m2 (device {:.4e})", cal.inertia, dev.inertia);
    println!("l     {:.3} mm", cal.lever * 1e3);
    Ok(())
}
