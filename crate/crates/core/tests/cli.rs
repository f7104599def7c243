//! End-to-end runs of the `mows-lab` binary.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

use mows_lab::dynamics::Trajectory;
use mows_lab::magnetometry::{read_calibration_csv, read_sweep_csv};
use mows_lab::model::DeviceParams;
use mows_lab::signal::{MagnetometerConfig, RecordMeta, RingdownRecord};

fn example(name: &str) -> String {
    format!("{}/examples/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn mows(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mows-lab"))
        .args(args)
        .env_remove("MOWS_LAB_JOBS")
        .output()
        .expect("spawn mows-lab")
}

fn ok(args: &[&str]) -> Output {
    let out = mows(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn json(path: PathBuf) -> Value {
    serde_json::from_reader(File::open(path).unwrap()).unwrap()
}

fn reader(path: &Path) -> BufReader<File> {
    BufReader::new(File::open(path).unwrap())
}

#[test]
fn props_reports_device_constants() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["props", "--config", &example("paper-device.json"), "--out", dir.path().to_str().unwrap()]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("f00_hz="), "{stdout}");
    let v = json(dir.path().join("props.json"));
    let get = |k: &str| v[k].as_f64().unwrap();
    assert!((get("f00_hz") - 112.539).abs() < 1e-3);
    assert!((get("beta0_hz_per_tesla") - 3682.35).abs() < 0.05);
    assert!((get("cancellation_field_tesla") + 15.281e-3).abs() < 1e-6);
    assert!((get("effective_distance_meter") - 0.067456).abs() < 1e-6);
    assert!((get("lever_meter") - 1.9437e-3).abs() < 1e-7);
    assert!(get("amplitude_ratio_0_to_90") > 1.0);
    assert!(dir.path().join("props.txt").exists());
}

#[test]
fn simulate_then_fit_recovers_frequency() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg = example("paper-device.json");
    ok(&["simulate", "--config", &cfg, "--out", out]);
    ok(&["fit", "--config", &cfg, "--out", out]);

    let fit = json(dir.path().join("fit.json"));
    assert_eq!(fit["fitted"].as_u64(), Some(5));
    let f00 = DeviceParams::paper_device().natural_frequency();
    assert!((fit["f_mean_hz"].as_f64().unwrap() - f00).abs() < 1e-3, "{fit}");

    // every CSV written re-parses
    let traj = Trajectory::read_csv(reader(&dir.path().join("trajectory.csv")), "trajectory.csv").unwrap();
    assert!(traj.theta.len() > 100);
    let meta = RecordMeta {
        config: MagnetometerConfig::paper_setup(),
        device: DeviceParams::paper_device(),
        theta0: 0.0,
    };
    for i in 0..5 {
        let p = dir.path().join(format!("record_{i}.csv"));
        let rec = RingdownRecord::read_csv(reader(&p), meta, "record").unwrap();
        assert!(rec.len() > 1000);
    }
    let meta_json = json(dir.path().join("record.json"));
    assert!(meta_json.is_object());
}

#[test]
fn fit_accepts_single_input_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg = example("paper-device.json");
    ok(&["simulate", "--config", &cfg, "--out", out]);
    let rec = dir.path().join("record_2.csv");
    let fit_dir = dir.path().join("fit");
    ok(&["fit", "--config", &cfg, "--out", fit_dir.to_str().unwrap(), "--input", rec.to_str().unwrap()]);
    assert_eq!(json(fit_dir.join("fit.json"))["fitted"].as_u64(), Some(1));
}

#[test]
fn sweep_and_decompose_separate_pure_field() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg = example("helmholtz-sweep.json");
    ok(&["sweep", "--config", &cfg, "--out", out]);
    let points = read_sweep_csv(reader(&dir.path().join("sweep.csv")), "sweep.csv").unwrap();
    assert_eq!(points.len(), 24);
    ok(&["decompose", "--config", &cfg, "--out", out]);
    let dec = json(dir.path().join("decompose.json"));
    let p1 = dec["p1"].as_f64().unwrap();
    let p2 = dec["p2"].as_f64().unwrap();
    assert!(p2 / p1 <= 1e-3, "P2/P1 = {}", p2 / p1);
    assert!((dec["b_est"].as_f64().unwrap() - 50e-6).abs() < 0.5e-6, "{dec}");
    assert!(dir.path().join("decompose.txt").exists());
}

#[test]
fn calibrate_identifies_device() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    ok(&["calibrate", "--config", &example("paper-device.json"), "--out", out]);
    let points = read_calibration_csv(reader(&dir.path().join("calibration.csv")), "calibration.csv").unwrap();
    assert_eq!(points.len(), 11);
    let cal = json(dir.path().join("calibrate.json"));
    assert!((cal["k_m_newton_meter"].as_f64().unwrap() / 1.36e-5 - 1.0).abs() < 0.01, "{cal}");
    assert!((cal["lever_meter"].as_f64().unwrap() / 1.9437e-3 - 1.0).abs() < 0.01, "{cal}");
}

#[test]
fn calibrate_without_section_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = mows(&["calibrate", "--config", &example("helmholtz-sweep.json"), "--out", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("calibration"));
}

#[test]
fn unknown_flag_is_rejected() {
    let out = mows(&["props", "--config", "x.json", "--out", "o", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn help_lists_every_flag() {
    let out = ok(&["simulate", "--help"]);
    let text = String::from_utf8(out.stdout).unwrap();
    for flag in ["--config", "--out", "--jobs", "--seed", "MOWS_LAB_JOBS"] {
        assert!(text.contains(flag), "{flag} missing from help:\n{text}");
    }
    let top = String::from_utf8(ok(&["--help"]).stdout).unwrap();
    for sub in ["simulate", "fit", "sweep", "decompose", "calibrate", "props"] {
        assert!(top.contains(sub), "{sub} missing from help:\n{top}");
    }
}

#[test]
fn bad_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    let text = std::fs::read_to_string(example("paper-device.json")).unwrap().replace("\"k_m_newton_meter\": 1.36e-5", "\"k_m_newton_meter\": \"stiff\"");
    std::fs::write(&cfg, text).unwrap();
    let out = mows(&["props", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("k_m_newton_meter"), "{err}");

    let out = mows(&["props", "--config", "/nonexistent/cfg.json", "--out", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
}

#[test]
fn zero_jobs_from_environment_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_mows-lab"))
        .args(["props", "--config", &example("paper-device.json"), "--out", dir.path().to_str().unwrap()])
        .env("MOWS_LAB_JOBS", "0")
        .output()
        .unwrap();
    assert!(!out.status.success());
    let out = Command::new(env!("CARGO_BIN_EXE_mows-lab"))
        .args(["props", "--config", &example("paper-device.json"), "--out", dir.path().to_str().unwrap()])
        .env("MOWS_LAB_JOBS", "2")
        .output()
        .unwrap();
    assert!(out.status.success());
}
