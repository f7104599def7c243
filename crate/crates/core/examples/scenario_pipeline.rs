//! The command-line workflows driven from code: props, simulate and fit on
//! the bundled scenario, written to a temporary directory.
//!
//! cargo run --release --example scenario_pipeline

use clap::Parser;
use mows_lab::cli::{run, Cli};

fn main() -> mows_lab::error::Result<()> {
    let config = concat!(env!("CARGO_MANIFEST_DIR"), "/examples/paper-device.json");
    let out = std::env::temp_dir().join("mows-lab-pipeline");
    let out = out.to_str().expect("utf-8 temp path");
    for cmd in ["props", "simulate", "fit"] {
        let cli = Cli::parse_from(["mows-lab", cmd, "--config", config, "--out", out]);
        let outcome = run(cli)?;
        println!("== {cmd}\n{}", outcome.summary);
    }
    println!("artifacts in {out}");
    Ok(())
}
