use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_uwbsr"))
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

#[test]
fn simulate_then_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let obs = dir.path().join("obs.bin");
    let st = bin()
        .args(["simulate", "--config"])
        .arg(data("small.json"))
        .arg("--out")
        .arg(&obs)
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(0));
    assert_eq!(std::fs::metadata(&obs).unwrap().len(), 16 + 16 * 4 * 16);
    assert!(dir.path().join("obs.bin.truth.json").exists());

    let res = dir.path().join("result.json");
    let st = bin()
        .args(["estimate", "--config"])
        .arg(data("small.json"))
        .arg("--obs")
        .arg(&obs)
        .arg("--out")
        .arg(&res)
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&res).unwrap()).unwrap();
    let comps = v["components"].as_array().unwrap();
    assert!(!comps.is_empty());
    let phi = comps[0]["phi_deg"].as_f64().unwrap();
    assert!((phi - 30.0).abs() < 5.0, "{phi}");
}

#[test]
fn threshold_prints_kappa() {
    let out = bin()
        .args(["threshold", "--config"])
        .arg(data("small.json"))
        .args(["--epsilon", "0.01", "--kappa", "5,10"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let q = v["q"].as_f64().unwrap();
    let k = v["kappa_star"].as_f64().unwrap();
    assert!((q * k * (-k).exp() - 0.01).abs() < 1e-9);
    assert_eq!(v["table"].as_array().unwrap().len(), 3);
}

#[test]
fn evaluate_writes_results() {
    let dir = tempfile::tempdir().unwrap();
    let st = bin()
        .args(["evaluate", "--config"])
        .arg(data("small.json"))
        .args(["--trials", "2", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(0), "{}", String::from_utf8_lossy(&st.stderr));
    for f in ["trials.csv", "summary.json", "schema.json", "config.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let rows = csv::Reader::from_path(dir.path().join("trials.csv")).unwrap().records().count();
    assert_eq!(rows, 2);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"geometry": {}}"#).unwrap();
    let st = bin()
        .args(["threshold", "--config"])
        .arg(&bad)
        .args(["--epsilon", "0.01"])
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(2));
    let missing = bin()
        .args(["simulate", "--config", "/nonexistent.json", "--out"])
        .arg(dir.path().join("x.bin"))
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn unreachable_targets_and_bad_data_are_distinguished() {
    // epsilon above q/e has no threshold
    let out = bin()
        .args(["threshold", "--config"])
        .arg(data("small.json"))
        .args(["--epsilon", "1e9"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let obs = dir.path().join("nan.bin");
    let mut bytes = Vec::new();
    bytes.extend_from_slice(&16u64.to_le_bytes());
    bytes.extend_from_slice(&4u64.to_le_bytes());
    for _ in 0..64 {
        bytes.extend_from_slice(&f64::NAN.to_le_bytes());
        bytes.extend_from_slice(&0f64.to_le_bytes());
    }
    std::fs::write(&obs, bytes).unwrap();
    let out = bin()
        .args(["estimate", "--config"])
        .arg(data("small.json"))
        .arg("--obs")
        .arg(&obs)
        .arg("--out")
        .arg(dir.path().join("r.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
