//! Closed-form properties of the published sensor and the square-root
//! frequency law across a field range.
//!
//! cargo run --example device_props

use mows_lab::model::{
    field_sensitivity, frequency_shift, gradient_sensitivity_limit, linear_frequency_shift, DeviceParams,
};

fn main() -> mows_lab::error::Result<()> {
    let dev = DeviceParams::paper_device();
    dev.validate()?;
    println!("f00            {:.3} Hz", dev.natural_frequency());
    println!("beta(0)        {:.3} Hz/mT", field_sensitivity(0.0, &dev)? * 1e-3);
    println!("gamma          {:.3} Hz/(T/m)", gradient_sensitivity_limit(&dev));
    println!("lever          {:.3} mm", dev.lever * 1e3);
    println!("cancellation   {:.3} mT", dev.cancellation_field() * 1e3);
    println!();
    println!("{:>8} {:>12} {:>12}", "B [mT]", "exact [Hz]", "linear [Hz]");
    for b_mt in [-15.0, -10.0, -5.0, -2.0, -1.0, 0.0, 1.0, 2.0, 5.0, 10.0] {
        let k_b = dev.moment * b_mt * 1e-3;
        let exact = frequency_shift(&dev, k_b, 0.0)?;
        println!("{b_mt:>8.1} {exact:>12.4} {:>12.4}", linear_frequency_shift(&dev, k_b, 0.0));
    }
    match frequency_shift(&dev, dev.moment * -15.3e-3, 0.0) {
        Err(e) => println!("\nB = -15.3 mT: {e}"),
        Ok(df) => println!("\nB = -15.3 mT: {df} Hz"),
    }
    Ok(())
}
