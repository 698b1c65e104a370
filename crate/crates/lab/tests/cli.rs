use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use nullctl::output::{decode_path, Table};
use sha2::{Digest, Sha256};

/// A small configuration so every command finishes quickly.
const SMALL: &str = "\
[domain]
n_modes = 8
n_grid = 16
dt = 0.00390625
[lr]
cost_steps = 256
obs_modes = 6
[ensemble]
n_paths = 4
calibration_paths = 4
";

fn run(dir: &Path, args: &[&str]) -> Output {
    let cfg = dir.join("small.cfg");
    if !cfg.exists() {
        fs::write(&cfg, SMALL).unwrap();
    }
    Command::new(env!("CARGO_BIN_EXE_nullctl"))
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .args(args)
        .output()
        .unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

#[test]
fn help_and_usage_errors() {
    let bin = env!("CARGO_BIN_EXE_nullctl");
    let help = Command::new(bin).arg("--help").output().unwrap();
    assert_eq!(help.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&help.stdout).contains("cost-curve"));
    let bad = Command::new(bin).arg("fly").output().unwrap();
    assert_eq!(bad.status.code(), Some(1));
    let none = Command::new(bin).output().unwrap();
    assert_eq!(none.status.code(), Some(1));
}

#[test]
fn missing_config_exits_one_and_names_the_file() {
    let out = Command::new(env!("CARGO_BIN_EXE_nullctl"))
        .args(["--config", "/no/such/file.cfg", "simulate"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/file.cfg"));
}

#[test]
fn bad_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "[domain]\nwidth = 2\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_nullctl"))
        .arg("--config")
        .arg(&cfg)
        .arg("simulate")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("width"));
}

#[test]
fn defaults_command_prints_a_loadable_file() {
    let out = Command::new(env!("CARGO_BIN_EXE_nullctl"))
        .arg("defaults")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("[ensemble]"));
    nullctl::config::RawConfig::parse(&text).unwrap();
}

#[test]
fn simulate_writes_manifest_and_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["--seed", "9", "simulate"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let o = dir.path().join("out");
    let m = json(&o.join("manifest.json"));
    assert_eq!(m["command"], "simulate");
    assert_eq!(m["seed"], 9);
    let hash = m["config_sha256"].as_str().unwrap();
    assert_eq!(hash.len(), 64);
    let canonical = m["config"].as_str().unwrap();
    assert_eq!(hex(&Sha256::digest(canonical.as_bytes())), hash);
    let outputs: Vec<&str> = m["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    assert!(outputs.contains(&"trajectory.csv") && outputs.contains(&"path.bin"));
    let path = decode_path(&fs::read(o.join("path.bin")).unwrap()).unwrap();
    assert_eq!(path.n_steps(), 256);
    let t = Table::from_csv(&fs::read(o.join("trajectory.csv")).unwrap()).unwrap();
    assert_eq!(t.column("t").unwrap().len(), 257);
    assert!(t.header.iter().any(|h| h == "y_8"));
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[test]
fn linear_control_and_curves() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().join("out");
    let out = run(dir.path(), &["control-linear"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(o.join("windows.csv").exists());
    let out = run(dir.path(), &["cost-curve"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let fit = json(&o.join("cost_fit.json"));
    assert!(fit["r2"].is_number() && fit["c1"].is_number());
    let out = run(dir.path(), &["obs-curve"]);
    assert_eq!(out.status.code(), Some(0));
    let t = Table::from_csv(&fs::read(o.join("obs_curve.csv")).unwrap()).unwrap();
    assert_eq!(t.column("kappa").unwrap().len(), 6);
    let out = run(dir.path(), &["report"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(fs::read_dir(&o)
        .unwrap()
        .any(|e| e.unwrap().path().extension().is_some_and(|x| x == "svg")));
}

#[test]
fn report_without_data_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["report"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn source_demo_and_semilinear() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().join("out");
    let out = run(dir.path(), &["source-demo"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let cert = json(&o.join("certificate.json"));
    assert!(cert.is_object());
    assert!(o.join("weights.csv").exists() && o.join("blocks.csv").exists());
    let out = run(dir.path(), &["--preset", "allen-cahn", "semilinear"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(o.join("picard.csv").exists());
}

#[test]
fn ensemble_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let out = run(d.path(), &["--seed", "3", "ensemble"]);
        assert!(
            matches!(out.status.code(), Some(0) | Some(3)),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    for name in ["records.csv", "summary.json", "manifest.json"] {
        let x = fs::read(a.path().join("out").join(name)).unwrap();
        let y = fs::read(b.path().join("out").join(name)).unwrap();
        assert_eq!(x, y, "{name}");
    }
    let t = Table::from_csv(&fs::read(a.path().join("out/records.csv")).unwrap()).unwrap();
    assert_eq!(t.rows.len(), 4);
}
