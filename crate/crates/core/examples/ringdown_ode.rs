//! Time-domain simulation: a driven start into the housing stop, then free
//! ringdowns in static fields compared with the closed-form frequency.
//!
//! cargo run --release --example ringdown_ode

use mows_lab::dynamics::{measure_frequency, simulate, CoilSetup, DriveSpec, SimConfig};
use mows_lab::model::{frequency_shift, DeviceParams, MagneticEnvironment};

fn main() -> mows_lab::error::Result<()> {
    let dev = DeviceParams::paper_device();
    let f00 = dev.natural_frequency();

    let driven = SimConfig {
        drive: Some(DriveSpec::new(CoilSetup::Helmholtz, 1.0, 2e-4, f00, 0.4)),
        theta_init: 0.0,
        duration: 1.0,
        ..SimConfig::default()
    };
    let traj = simulate(&dev, &MagneticEnvironment::default(), &driven)?;
    let peak = traj.theta.iter().fold(0.0f64, |a, t| a.max(t.abs()));
    println!("driven start: peak deflection {:.2} deg (housing limit {:.0} deg)", peak.to_degrees(), dev.theta_max.to_degrees());
    let ring = traj.tail((0.4 / traj.dt) as usize + 1);
    let est = measure_frequency(&ring)?;
    println!("after drive off: f = {:.4} Hz, decay = {:.3} 1/s over {} periods\n", est.frequency, est.damping, est.periods);

    println!("{:>7} {:>12} {:>12} {:>10}", "B [mT]", "ODE [Hz]", "closed [Hz]", "diff [mHz]");
    for b_mt in [-5.0, -2.0, -1.0, 0.0, 1.0, 2.0, 5.0] {
        let env = MagneticEnvironment::uniform_field(b_mt * 1e-3, 0.0);
        let traj = simulate(&dev, &env, &SimConfig::default())?;
        let f_ode = measure_frequency(&traj)?.frequency;
        let f_cf = f00 + frequency_shift(&dev, dev.moment * b_mt * 1e-3, 0.0)?;
        println!("{b_mt:>7.1} {f_ode:>12.4} {f_cf:>12.4} {:>10.3}", (f_ode - f_cf) * 1e3);
    }

    let mut out = Vec::new();
    traj.write_csv(&mut out).expect("in-memory write");
    println!("\nCSV preview:\n{}", String::from_utf8_lossy(&out).lines().take(3).collect::<Vec<_>>().join("\n"));
    Ok(())
}
