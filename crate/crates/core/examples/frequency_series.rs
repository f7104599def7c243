//! Repeated acquisitions: mean and spread of the fitted frequency.
//!
//! cargo run --release --example frequency_series

use mows_lab::fitting::{frequency_series, FitOptions};
use mows_lab::model::{DeviceParams, NoiseSpec};
use mows_lab::signal::{record_seed, synthesize, MagnetometerConfig, RingdownParams};

fn main() -> mows_lab::error::Result<()> {
    let dev = DeviceParams::paper_device();
    let cfg = MagnetometerConfig::paper_setup();
    let truth = RingdownParams {
        theta_t_max: dev.theta_max,
        frequency: dev.natural_frequency(),
        phase: 0.0,
        damping: dev.damping,
        dc_offset: 0.0,
    };
    let noise = NoiseSpec {
        independent_std: 4e-9,
        common_mode_std: 0.0,
    };
    let records = (0..5)
        .map(|i| synthesize(&dev, &cfg, 0.0, &truth, 0.5333, &noise, record_seed(1, i)))
        .collect::<Result<Vec<_>, _>>()?;
    let s = frequency_series(&records, &FitOptions::default())?;
    for (i, f) in s.fits.iter().enumerate() {
        match f {
            Ok(f) => println!("record {i}: f = {:.5} Hz, R2 = {:.5}", f.params.frequency, f.r_squared),
            Err(e) => println!("record {i}: {e}"),
        }
    }
    println!("mean {:.5} Hz, std {:.3} mHz (true {:.5} Hz)", s.mean, s.std * 1e3, truth.frequency);
    Ok(())
}
