use std::path::Path;
use std::process::Command;

use serde_json::Value;

fn coopvi(args: &[&str]) -> Value {
    let out = Command::new(env!("CARGO_BIN_EXE_coopvi"))
        .args(args)
        .env("RUST_LOG", "off")
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_solve_calibrate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("noiseless.json");
    std::fs::write(
        &cfg,
        r#"{"accel_noise_std": 0.0, "gyro_noise_std_deg": 0.0, "bearing_noise_var_deg2": 0.0}"#,
    )
    .unwrap();
    let log = dir.path().join("log");
    let sim = coopvi(&[
        "simulate",
        "--config",
        path(&cfg),
        "--seed",
        "4",
        "--gyro-bias",
        "1",
        "--out",
        path(&log),
    ]);
    assert_eq!(sim["camera_epochs"], 21);
    for f in ["imu1.csv", "imu2.csv", "bearings1.csv", "bearings2.csv", "config.json"] {
        assert!(log.join(f).exists());
    }

    let dump = dir.path().join("dump.json");
    let est = coopvi(&[
        "solve",
        path(&log),
        "--mode",
        "single",
        "--window",
        "3",
        "--dump",
        path(&dump),
    ]);
    assert_eq!(est["distances_m"].as_array().unwrap().len(), 16);
    assert!(dump.exists());

    let cal = coopvi(&["calibrate", path(&log)]);
    for axis in cal["gyro_bias1_dps"]
        .as_array()
        .unwrap()
        .iter()
        .chain(cal["gyro_bias2_dps"].as_array().unwrap())
    {
        assert!((axis.as_f64().unwrap() - 1.0).abs() < 1e-3);
    }
    assert_eq!(cal["clipped"], false);
}

#[test]
fn rank_and_sweep() {
    let rank = coopvi(&[
        "rank",
        "--state",
        "unbiased20",
        "--cameras",
        "two",
        "--excitations",
        "5",
    ]);
    assert_eq!(rank["rank"], 11);
    assert_eq!(rank["singular_values"].as_array().unwrap().len(), 20);

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let s = coopvi(&[
        "sweep",
        "--trials",
        "3",
        "--window",
        "2,4",
        "--gyro-bias",
        "0,1",
        "--out",
        path(&out),
    ]);
    assert_eq!(s["rows"], 12);
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert!(csv
        .starts_with("window_s,gyro_bias_dps,accel_bias_mps2,trial,scale_err,speed_err,orient_err,residual,failed\n"));
    assert_eq!(csv.lines().count(), 13);
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["cells"].as_array().unwrap().len(), 4);
}

#[test]
fn bad_input_fails_cleanly() {
    let out = Command::new(env!("CARGO_BIN_EXE_coopvi"))
        .args(["solve", "/nonexistent/log"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
}
