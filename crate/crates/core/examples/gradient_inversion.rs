//! Gradients from frequency shifts: model sensitivity, a measured
//! sensitivity, and the exact square-root inversion.
//!
//! cargo run --example gradient_inversion

use mows_lab::magnetometry::gradient_from_shift;
use mows_lab::model::{frequency_shift, gradient_sensitivity_limit, DeviceParams};

fn main() -> mows_lab::error::Result<()> {
    let dev = DeviceParams::paper_device();
    let df = -0.183;
    println!("model gamma {:.3} Hz m/T", gradient_sensitivity_limit(&dev));
    println!("df = {df} Hz -> {:.2} mT/m (model, linear)", gradient_from_shift(df, &dev, true, None)? * 1e3);
    println!("df = {df} Hz -> {:.2} mT/m (gamma = 14.14)", gradient_from_shift(df, &dev, true, Some(14.14))? * 1e3);

    for g in [-50e-3, -20e-3, 20e-3, 50e-3] {
        let shift = frequency_shift(&dev, 0.0, dev.lever * dev.moment * g)?;
        let back = gradient_from_shift(shift, &dev, false, None)?;
        println!("G {:+.0} mT/m -> df {:+.4} Hz -> {:+.6} mT/m", g * 1e3, shift, back * 1e3);
    }
    Ok(())
}
