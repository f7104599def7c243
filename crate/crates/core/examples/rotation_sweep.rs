//! Rotation sweep under a combined field and gradient, split back into its
//! two parts.
//!
//! cargo run --example rotation_sweep

use mows_lab::magnetometry::{decompose_sweep, sweep_forward, DecomposeOptions};
use mows_lab::model::{DeviceParams, MagneticEnvironment};

fn main() -> mows_lab::error::Result<()> {
    let dev = DeviceParams::paper_device();
    let env = MagneticEnvironment {
        field: 100e-6,
        field_angle: 30f64.to_radians(),
        gradient: 20e-3,
        gradient_angle: 120f64.to_radians(),
        ..MagneticEnvironment::default()
    };
    let grid: Vec<f64> = (0..24).map(|i| (i as f64 * 15.0).to_radians()).collect();
    let points = sweep_forward(&dev, &env, &grid, true)?;
    for p in points.iter().step_by(3) {
        println!("theta0 {:>5.0} deg  df {:+.4} Hz", p.theta0.to_degrees(), p.delta_f);
    }
    let dec = decompose_sweep(&points, &dev, DecomposeOptions::default())?;
    println!("\nfield    {:.2} uT at {:.2} deg", dec.b_est * 1e6, dec.b_angle.to_degrees());
    println!("gradient {:.2} mT/m, axis {:.2} deg", dec.g_est * 1e3, dec.g_angle.to_degrees());
    println!("P1 {:.4} Hz, P2 {:.4} Hz, rms {:.2e} Hz", dec.p1, dec.p2, dec.residual_rms);
    Ok(())
}
